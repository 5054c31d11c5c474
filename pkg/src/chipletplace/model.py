"""Problem representation for 2.5D chiplet placement.

Geometry is in mm, power density in W/m^2, temperatures in degC and
out-of-plane displacement in um.  Chiplets are rectangles placed by center
coordinates on an interposer of size W x H; legal orientations are the four
axis-aligned rotations.  Nets are two-pin connections between microbumps.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

LEGAL_ANGLES = (0.0, 90.0, 180.0, 270.0)

# exact trig for the four legal rotations, avoids 1e-16 crumbs from cos/sin
_ROT = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}

GAP_TOL = 1e-9  # fp slack for legality comparisons (mm)


class InvalidOrientation(ValueError):
    """Angle is not one of the four legal snapped orientations."""


class SchemaError(ValueError):
    """Malformed design/placement file; message names the offending field."""


def snap_angle(theta_deg: float) -> float:
    """Map an angle to its value in [0, 360); raise if not a legal orientation."""
    t = float(theta_deg) % 360.0
    for legal in LEGAL_ANGLES:
        if abs(t - legal) <= 1e-9 or abs(t - legal - 360.0) <= 1e-9:
            return legal
    raise InvalidOrientation(f"orientation {theta_deg} deg is not in {LEGAL_ANGLES}")


@dataclass(frozen=True)
class InterposerSpec:
    """Placement region: W x H mm, an M x M field grid and minimum spacing."""

    width: float
    height: float
    grid_resolution: int = 64
    min_spacing: float = 0.1

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError("interposer dimensions must be positive")
        if self.grid_resolution < 8:
            raise ValueError("grid_resolution must be >= 8")
        if self.min_spacing < 0:
            raise ValueError("min_spacing must be >= 0")


@dataclass(frozen=True)
class BumpPin:
    pin_id: int
    x: float  # offset from chiplet center, chiplet frame (mm)
    y: float
    clump_id: int


@dataclass(frozen=True)
class ChipletSpec:
    id: int
    width: float
    height: float
    thickness: float
    power_density: float  # W/m^2
    bumps: tuple[BumpPin, ...] = ()

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0 and self.thickness > 0):
            raise ValueError(f"chiplet {self.id}: dimensions must be positive")
        if self.power_density < 0:
            raise ValueError(f"chiplet {self.id}: power density must be >= 0")
        for p in self.bumps:
            if abs(p.x) > self.width / 2 + GAP_TOL or abs(p.y) > self.height / 2 + GAP_TOL:
                raise ValueError(
                    f"chiplet {self.id}: bump {p.pin_id} offset ({p.x}, {p.y}) "
                    "lies outside the die outline"
                )

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class Net:
    """Two-pin net: endpoints are (chiplet_id, pin_id) on distinct chiplets."""

    net_id: int
    a: tuple[int, int]
    b: tuple[int, int]

    def __post_init__(self):
        if self.a[0] == self.b[0]:
            raise ValueError(f"net {self.net_id}: endpoints must be on distinct chiplets")


@dataclass(frozen=True)
class D2DInterfaceSpec:
    """UCIe-style die-to-die interface geometry (pitches in um)."""

    kind: str
    cols: int
    lanes: int
    bump_pitch: float
    pitch_x: float
    pitch_y: float


# the two supported interface flavours
STANDARD_X16 = D2DInterfaceSpec("Standard_x16", cols=12, lanes=16, bump_pitch=100.0, pitch_x=180.0, pitch_y=90.0)
ADVANCED_X32 = D2DInterfaceSpec("Advanced_x32", cols=16, lanes=32, bump_pitch=25.0, pitch_x=27.0, pitch_y=42.0)

INTERFACES = {"x16": STANDARD_X16, "x32": ADVANCED_X32,
              "Standard_x16": STANDARD_X16, "Advanced_x32": ADVANCED_X32}


class DesignInstance:
    """Immutable problem description.

    Holds the interposer, chiplets and nets, plus derived connectivity data:
    per connected ordered pair (i, j) the net count A[i, j] and the centroid of
    the bump clump on chiplet i serving that pair.  Chiplet ids must be 0..N-1.
    """

    def __init__(self, interposer: InterposerSpec, chiplets: Sequence[ChipletSpec],
                 nets: Sequence[Net]):
        self.interposer = interposer
        self.chiplets = tuple(sorted(chiplets, key=lambda c: c.id))
        self.nets = tuple(nets)
        ids = [c.id for c in self.chiplets]
        if ids != list(range(len(ids))):
            raise ValueError("chiplet ids must be contiguous 0..N-1")
        self._pin_index = {(c.id, p.pin_id): p for c in self.chiplets for p in c.bumps}
        for net in self.nets:
            for end in (net.a, net.b):
                if end not in self._pin_index:
                    raise ValueError(f"net {net.net_id}: endpoint {end} references a missing pin")
        self.net_counts = self._count_nets()
        self.clump_offsets = self._clump_centroids()

    @property
    def n_chiplets(self) -> int:
        return len(self.chiplets)

    def pin(self, chiplet_id: int, pin_id: int) -> BumpPin:
        return self._pin_index[(chiplet_id, pin_id)]

    def connected_pairs(self) -> list[tuple[int, int]]:
        """Unordered connected pairs (i < j), sorted."""
        return sorted({(min(i, j), max(i, j)) for (i, j) in self.net_counts})

    def total_chiplet_area(self) -> float:
        return sum(c.area for c in self.chiplets)

    def whitespace(self) -> float:
        return 1.0 - self.total_chiplet_area() / (self.interposer.width * self.interposer.height)

    def _count_nets(self) -> dict[tuple[int, int], int]:
        counts: dict[tuple[int, int], int] = {}
        for net in self.nets:
            i, j = net.a[0], net.b[0]
            counts[(i, j)] = counts.get((i, j), 0) + 1
            counts[(j, i)] = counts.get((j, i), 0) + 1
        return counts

    def _clump_centroids(self) -> dict[tuple[int, int], tuple[float, float]]:
        sums: dict[tuple[int, int], list[float]] = {}
        for net in self.nets:
            for (ci, pi), (cj, _) in ((net.a, net.b), (net.b, net.a)):
                pin = self._pin_index[(ci, pi)]
                acc = sums.setdefault((ci, cj), [0.0, 0.0, 0])
                acc[0] += pin.x
                acc[1] += pin.y
                acc[2] += 1
        return {key: (sx / n, sy / n) for key, (sx, sy, n) in sums.items()}


@dataclass
class PlacementState:
    """Per-chiplet center coordinates and rotation angle.

    Angles are continuous during optimization and snapped to LEGAL_ANGLES for
    legal output.  The arrays are owned by the instance; use copy() per worker.
    """

    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).copy()
        self.y = np.asarray(self.y, dtype=float).copy()
        self.theta = np.asarray(self.theta, dtype=float).copy()
        if not (self.x.shape == self.y.shape == self.theta.shape):
            raise ValueError("x, y, theta must have identical shapes")

    @property
    def n(self) -> int:
        return self.x.size

    def copy(self) -> "PlacementState":
        return PlacementState(self.x, self.y, self.theta)

    def is_snapped(self) -> bool:
        try:
            for t in self.theta:
                snap_angle(t)
        except InvalidOrientation:
            return False
        return True

    def snapped_angles(self) -> list[float]:
        return [snap_angle(t) for t in self.theta]


# ---------------------------------------------------------------------------
# geometric operations
# ---------------------------------------------------------------------------

def rotated_dims(chiplet: ChipletSpec, theta_deg: float) -> tuple[float, float]:
    """Bounding-box dims after rotating by a legal angle: 90/270 swap w and h."""
    t = snap_angle(theta_deg)
    if t in (90.0, 270.0):
        return chiplet.height, chiplet.width
    return chiplet.width, chiplet.height


def bump_abs_position(center_x: float, center_y: float, theta_deg: float,
                      pin: BumpPin) -> tuple[float, float]:
    """Absolute bump position: center + offset rotated counterclockwise."""
    c, s = _ROT[snap_angle(theta_deg)]
    return (center_x + pin.x * c - pin.y * s,
            center_y + pin.x * s + pin.y * c)


def exact_wirelength(design: DesignInstance, placement: PlacementState) -> float:
    """Total wirelength: sum over nets of the Manhattan distance between bumps."""
    thetas = placement.snapped_angles()
    total = 0.0
    for net in design.nets:
        (ci, pi), (cj, pj) = net.a, net.b
        xa, ya = bump_abs_position(placement.x[ci], placement.y[ci], thetas[ci], design.pin(ci, pi))
        xb, yb = bump_abs_position(placement.x[cj], placement.y[cj], thetas[cj], design.pin(cj, pj))
        total += abs(xa - xb) + abs(ya - yb)
    return total


@dataclass(frozen=True)
class LegalityReport:
    containment_ok: bool
    min_pairwise_gap: float  # +inf when < 2 chiplets
    overlap_pairs: tuple[tuple[int, int], ...]

    @property
    def ok(self) -> bool:
        return self.containment_ok and not self.overlap_pairs


def pair_gap(design: DesignInstance, placement: PlacementState, i: int, j: int,
             thetas: Sequence[float] | None = None) -> float:
    """Separation between chiplets i and j: the larger of the two axis gaps.

    Positive means the rectangles are disjoint with that much clearance along
    at least one axis; negative means every axis overlaps.
    """
    if thetas is None:
        thetas = placement.snapped_angles()
    wi, hi = rotated_dims(design.chiplets[i], thetas[i])
    wj, hj = rotated_dims(design.chiplets[j], thetas[j])
    gx = abs(placement.x[i] - placement.x[j]) - (wi + wj) / 2
    gy = abs(placement.y[i] - placement.y[j]) - (hi + hj) / 2
    return max(gx, gy)


def check_legal(design: DesignInstance, placement: PlacementState) -> LegalityReport:
    """Containment and pairwise-separation audit for a snapped placement.

    A pair is legal when separated by at least the interposer min_spacing along
    one axis (rectangles are axis-aligned for all legal rotations).
    """
    thetas = placement.snapped_angles()
    W, H = design.interposer.width, design.interposer.height
    gap = design.interposer.min_spacing
    containment_ok = True
    for i, c in enumerate(design.chiplets):
        w, h = rotated_dims(c, thetas[i])
        if (placement.x[i] < w / 2 - GAP_TOL or placement.x[i] > W - w / 2 + GAP_TOL
                or placement.y[i] < h / 2 - GAP_TOL or placement.y[i] > H - h / 2 + GAP_TOL):
            containment_ok = False
    overlaps = []
    min_gap = math.inf
    n = design.n_chiplets
    for i in range(n):
        for j in range(i + 1, n):
            g = pair_gap(design, placement, i, j, thetas)
            min_gap = min(min_gap, g)
            if g < gap - GAP_TOL:
                overlaps.append((i, j))
    return LegalityReport(containment_ok, min_gap, tuple(overlaps))


# ---------------------------------------------------------------------------
# serialization (JSON schemas; reals keep full repr precision)
# ---------------------------------------------------------------------------

def _require(obj: Mapping, key: str, ctx: str):
    if key not in obj:
        raise SchemaError(f"{ctx}: missing required field '{key}'")
    return obj[key]


def _warn_unknown(obj: Mapping, known: Iterable[str], ctx: str):
    extra = set(obj) - set(known)
    if extra:
        warnings.warn(f"{ctx}: ignoring unknown fields {sorted(extra)}", stacklevel=3)


def design_to_dict(design: DesignInstance) -> dict:
    ip = design.interposer
    return {
        "interposer": {
            "width_mm": ip.width,
            "height_mm": ip.height,
            "grid": ip.grid_resolution,
            "min_spacing_mm": ip.min_spacing,
        },
        "chiplets": [
            {
                "id": c.id,
                "w_mm": c.width,
                "h_mm": c.height,
                "t_mm": c.thickness,
                "power_w_per_m2": c.power_density,
                "bumps": [
                    {"pin": p.pin_id, "x_mm": p.x, "y_mm": p.y, "clump": p.clump_id}
                    for p in c.bumps
                ],
            }
            for c in design.chiplets
        ],
        "nets": [
            {"id": n.net_id,
             "a": {"chiplet": n.a[0], "pin": n.a[1]},
             "b": {"chiplet": n.b[0], "pin": n.b[1]}}
            for n in design.nets
        ],
    }


def design_from_dict(doc: Mapping) -> DesignInstance:
    _warn_unknown(doc, ("interposer", "chiplets", "nets"), "design")
    ipd = _require(doc, "interposer", "design")
    _warn_unknown(ipd, ("width_mm", "height_mm", "grid", "min_spacing_mm"), "interposer")
    interposer = InterposerSpec(
        width=float(_require(ipd, "width_mm", "interposer")),
        height=float(_require(ipd, "height_mm", "interposer")),
        grid_resolution=int(ipd.get("grid", 64)),
        min_spacing=float(ipd.get("min_spacing_mm", 0.1)),
    )
    chiplets = []
    for k, cd in enumerate(_require(doc, "chiplets", "design")):
        ctx = f"chiplets[{k}]"
        _warn_unknown(cd, ("id", "w_mm", "h_mm", "t_mm", "power_w_per_m2", "bumps"), ctx)
        bumps = []
        for m, bd in enumerate(cd.get("bumps", ())):
            bctx = f"{ctx}.bumps[{m}]"
            _warn_unknown(bd, ("pin", "x_mm", "y_mm", "clump"), bctx)
            bumps.append(BumpPin(
                pin_id=int(_require(bd, "pin", bctx)),
                x=float(_require(bd, "x_mm", bctx)),
                y=float(_require(bd, "y_mm", bctx)),
                clump_id=int(bd.get("clump", 0)),
            ))
        try:
            chiplets.append(ChipletSpec(
                id=int(_require(cd, "id", ctx)),
                width=float(_require(cd, "w_mm", ctx)),
                height=float(_require(cd, "h_mm", ctx)),
                thickness=float(_require(cd, "t_mm", ctx)),
                power_density=float(_require(cd, "power_w_per_m2", ctx)),
                bumps=tuple(bumps),
            ))
        except ValueError as exc:
            raise SchemaError(f"{ctx}: {exc}") from exc
    nets = []
    for k, nd in enumerate(_require(doc, "nets", "design")):
        ctx = f"nets[{k}]"
        _warn_unknown(nd, ("id", "a", "b"), ctx)
        ends = []
        for side in ("a", "b"):
            ed = _require(nd, side, ctx)
            ends.append((int(_require(ed, "chiplet", f"{ctx}.{side}")),
                         int(_require(ed, "pin", f"{ctx}.{side}"))))
        try:
            nets.append(Net(net_id=int(_require(nd, "id", ctx)), a=ends[0], b=ends[1]))
        except ValueError as exc:
            raise SchemaError(f"{ctx}: {exc}") from exc
    try:
        return DesignInstance(interposer, chiplets, nets)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def save_design(design: DesignInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(design_to_dict(design), fh, indent=1)
        fh.write("\n")


def load_design(path) -> DesignInstance:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return design_from_dict(doc)


def placement_to_list(placement: PlacementState) -> list[dict]:
    return [
        {"chiplet": i, "x_mm": float(placement.x[i]), "y_mm": float(placement.y[i]),
         "theta_deg": float(placement.theta[i])}
        for i in range(placement.n)
    ]


def placement_from_list(doc: Sequence[Mapping]) -> PlacementState:
    rows = []
    for k, rd in enumerate(doc):
        ctx = f"placement[{k}]"
        _warn_unknown(rd, ("chiplet", "x_mm", "y_mm", "theta_deg"), ctx)
        rows.append((int(_require(rd, "chiplet", ctx)),
                     float(_require(rd, "x_mm", ctx)),
                     float(_require(rd, "y_mm", ctx)),
                     float(_require(rd, "theta_deg", ctx))))
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise SchemaError("placement: chiplet ids must be contiguous 0..N-1")
    return PlacementState(np.array([r[1] for r in rows]),
                          np.array([r[2] for r in rows]),
                          np.array([r[3] for r in rows]))


def save_placement(placement: PlacementState, path) -> None:
    with open(path, "w") as fh:
        json.dump(placement_to_list(placement), fh, indent=1)
        fh.write("\n")


def load_placement(path) -> PlacementState:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return placement_from_list(doc)
