"""Synthetic benchmark generation.

Produces self-contained design instances: a square interposer sized so that
the chiplet area hits the requested whitespace fraction, dies with randomized
aspect ratios and power densities in [2e5, 3e6] W/m^2, and a connected net
graph where every connected pair communicates through one die-to-die interface
module per side.  Module bumps follow the standard interface pitch grids, and
each module clump sits near the die edge that faces its partner's randomly
assigned sector, mirroring edge-placed interface PHYs.

Generation is fully deterministic for a given seed.
"""

from __future__ import annotations

import math

import numpy as np

from .model import (BumpPin, ChipletSpec, D2DInterfaceSpec, DesignInstance, INTERFACES,
                    InterposerSpec, Net)

# reference die area (mm^2): a 6-die / 40% whitespace case lands on a 42 mm square
REFERENCE_DIE_AREA = 176.4

EDGE_MARGIN = 0.3          # clump-to-die-edge margin, mm
MIN_DIM_SLACK = 0.6        # die must exceed clump extent by this much, mm


def _interface(kind) -> D2DInterfaceSpec:
    if isinstance(kind, D2DInterfaceSpec):
        return kind
    try:
        return INTERFACES[kind]
    except KeyError:
        raise ValueError(f"unknown interface kind {kind!r}; expected one of {sorted(INTERFACES)}")


def _module_offsets(iface: D2DInterfaceSpec) -> np.ndarray:
    """Bump offsets of one module relative to its clump centroid (mm)."""
    rows = math.ceil(iface.lanes / iface.cols)
    px, py = iface.pitch_x / 1000.0, iface.pitch_y / 1000.0
    pos = np.array([[(k % iface.cols) * px, (k // iface.cols) * py]
                    for k in range(iface.lanes)], dtype=float)
    return pos - pos.mean(axis=0)


def _shelf_fits(dims: list[tuple[float, float]], W: float, H: float, gap: float) -> bool:
    """Greedy shelf packing feasibility check (heights descending)."""
    order = sorted(dims, key=lambda d: -d[1])
    x = y = shelf_h = 0.0
    for w, h in order:
        if w + 2 * gap > W or h + 2 * gap > H:
            return False
        if x + w + gap > W:
            y += shelf_h + gap
            x = 0.0
            shelf_h = 0.0
        x += w + gap
        shelf_h = max(shelf_h, h)
        if y + shelf_h + gap > H:
            return False
    return True


def synthesize_benchmark(seed: int, n_chiplets: int, interface="x32",
                         whitespace_target: float = 0.5) -> DesignInstance:
    if n_chiplets < 2:
        raise ValueError("need at least 2 chiplets")
    if not (0.3 <= whitespace_target <= 0.7):
        raise ValueError("whitespace_target must lie in [0.3, 0.7]")
    iface = _interface(interface)
    rng = np.random.default_rng(seed)

    side = math.sqrt(n_chiplets * REFERENCE_DIE_AREA / (1.0 - whitespace_target))
    side = round(side, 1)
    W = H = side
    total_area = (1.0 - whitespace_target) * W * H

    module = _module_offsets(iface)
    clump_w = float(module[:, 0].max() - module[:, 0].min())
    clump_h = float(module[:, 1].max() - module[:, 1].min())
    min_dim = max(clump_w, clump_h) + MIN_DIM_SLACK

    weights = rng.uniform(0.6, 1.6, n_chiplets)
    areas = weights / weights.sum() * total_area
    aspects = rng.uniform(0.7, 1.45, n_chiplets)
    dims = []
    for area, aspect in zip(areas, aspects):
        w = math.sqrt(area * aspect)
        h = area / w
        w = max(w, min_dim)
        h = max(area / w, min_dim)
        cap = 0.75 * side
        if w > cap:
            w = cap
            h = max(area / w, min_dim)
        if h > cap:
            h = cap
        dims.append((round(w, 3), round(h, 3)))
    if not _shelf_fits(dims, W, H, 0.1):
        raise ValueError(f"whitespace target {whitespace_target} infeasible: "
                         f"{n_chiplets} dies cannot be packed on a {W} mm interposer")

    thickness = np.round(rng.uniform(0.15, 0.75, n_chiplets), 3)
    power = rng.uniform(2e5, 3e6, n_chiplets)

    # connected graph: random spanning tree plus a few extra edges
    pairs: list[tuple[int, int]] = []
    for i in range(1, n_chiplets):
        j = int(rng.integers(0, i))
        pairs.append((j, i))
    candidates = sorted({(i, j) for i in range(n_chiplets) for j in range(i + 1, n_chiplets)}
                        - set(pairs))
    n_extra = min(n_chiplets // 2, len(candidates))
    if n_extra:
        picks = rng.choice(len(candidates), size=n_extra, replace=False)
        pairs.extend(candidates[k] for k in sorted(picks))
    pairs.sort()

    sectors = rng.uniform(0.0, 1.0, (n_chiplets, 2)) * np.array([W, H])

    # choose a die edge per (chiplet, partner) and spread clumps along it
    clump_centers: dict[tuple[int, int], tuple[float, float]] = {}
    for i in range(n_chiplets):
        partners = sorted([j for (a, b) in pairs for j in ((b,) if a == i else (a,) if b == i else ())])
        w, h = dims[i]
        by_edge: dict[str, list[int]] = {}
        for j in partners:
            dx = sectors[j, 0] - sectors[i, 0]
            dy = sectors[j, 1] - sectors[i, 1]
            if abs(dx) >= abs(dy):
                edge = "E" if dx >= 0 else "W"
            else:
                edge = "N" if dy >= 0 else "S"
            by_edge.setdefault(edge, []).append(j)
        for edge, js in by_edge.items():
            m = len(js)
            for k, j in enumerate(js):
                frac = (k + 1) / (m + 1) - 0.5
                if edge in ("E", "W"):
                    cx = (w / 2 - EDGE_MARGIN - clump_w / 2) * (1 if edge == "E" else -1)
                    span = h - clump_h - 2 * EDGE_MARGIN
                    cy = span * frac
                else:
                    cy = (h / 2 - EDGE_MARGIN - clump_h / 2) * (1 if edge == "N" else -1)
                    span = w - clump_w - 2 * EDGE_MARGIN
                    cx = span * frac
                clump_centers[(i, j)] = (cx, cy)

    bumps: dict[int, list[BumpPin]] = {i: [] for i in range(n_chiplets)}
    pin_of: dict[tuple[int, int, int], int] = {}   # (chiplet, partner, lane) -> pin id
    clump_counter = 0
    for (i, j) in pairs:
        for owner, other in ((i, j), (j, i)):
            cx, cy = clump_centers[(owner, other)]
            for lane in range(iface.lanes):
                pin_id = len(bumps[owner])
                bumps[owner].append(BumpPin(pin_id,
                                            round(cx + module[lane, 0], 6),
                                            round(cy + module[lane, 1], 6),
                                            clump_counter))
                pin_of[(owner, other, lane)] = pin_id
            clump_counter += 1

    chiplets = [ChipletSpec(i, dims[i][0], dims[i][1], float(thickness[i]),
                            float(power[i]), tuple(bumps[i]))
                for i in range(n_chiplets)]
    nets = []
    for (i, j) in pairs:
        for lane in range(iface.lanes):
            nets.append(Net(len(nets), (i, pin_of[(i, j, lane)]), (j, pin_of[(j, i, lane)])))

    interposer = InterposerSpec(W, H, grid_resolution=64, min_spacing=0.1)
    return DesignInstance(interposer, chiplets, nets)
