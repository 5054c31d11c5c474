"""MILP-based initialization and legalization with deterministic fallbacks.

Initialization: orientations are encoded by two binaries per chiplet via the
bijection {0, 90, 180, 270} <-> {(0,0), (0,1), (1,1), (1,0)}; the objective is
a bump-aware proxy, the weighted Manhattan distance between the interface
clump centroids of every connected pair.  Clump positions stay linear in the
binaries and the rotated dims linearize through the product z = u*v.

Non-overlap uses four disjunctive constraints per pair with at most three
binaries active.  The separation is written against center coordinates, so the
half-dim sum is included: initialization separates pairs by
(w'_i + w'_j)*(0.5 + eps) plus the minimum spacing, legalization by
(w'_i + w'_j)/2 plus the minimum spacing.  Big-M constants extend the
interposer extent by the largest possible separation term so disabled
constraints can never bind.

Legalization freezes orientations and minimizes displacement from the
optimized layout plus an optional wirelength term (weight lam_w); identical
per-net offset differences are merged into weighted terms, which is exact.
Large instances and exhausted solver budgets fall back to a deterministic
greedy placer that scans an expanding ring on a half-spacing lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .milp import MilpProblem, MilpSolution, solve
from .model import (DesignInstance, PlacementState, bump_abs_position, check_legal,
                    rotated_dims, snap_angle)

# (u, v) -> angle and back
UV_TO_ANGLE = {(0, 0): 0.0, (0, 1): 90.0, (1, 1): 180.0, (1, 0): 270.0}
ANGLE_TO_UV = {a: uv for uv, a in UV_TO_ANGLE.items()}

DEFAULT_INIT_EPS = 0.1
MILP_MAX_CHIPLETS = 6        # larger instances go straight to the greedy path
WL_TERM_LIMIT = 150          # max merged |.| wirelength groups before dropping lam_w
NODE_LIMIT_INIT = 40000
NODE_LIMIT_LEGALIZE = 40000


class InfeasibleLegalization(RuntimeError):
    pass


def init_separation(wi: float, wj: float, eps: float, gap: float) -> float:
    """Required center-distance along one axis for the initialization MILP."""
    return (wi + wj) * (0.5 + eps) + gap


def legalize_separation(wi: float, wj: float, gap: float) -> float:
    """Required center-distance along one axis for the legalization MILP."""
    return (wi + wj) / 2.0 + gap


@dataclass
class BuiltMilp:
    problem: MilpProblem
    decode: "callable"
    encode: "callable | None" = None   # PlacementState -> binary hint assignment


def _clump_position_coeffs(xi, yi, u, v, ox, oy):
    """Linear expressions for the rotated clump centroid.

    X = x + (1-u-v)*ox - (v-u)*oy ; Y = y + (v-u)*ox + (1-u-v)*oy.
    Returns ((coeffs_x, const_x), (coeffs_y, const_y)).
    """
    cx = {xi: 1.0, u: -ox + oy, v: -ox - oy}
    cy = {yi: 1.0, u: -ox - oy, v: ox - oy}
    return (cx, ox), (cy, oy)


def build_init_milp(design: DesignInstance, eps: float = DEFAULT_INIT_EPS) -> BuiltMilp:
    """Orientation-aware seed layout MILP and its solution decoder."""
    if not (0.0 <= eps < 0.5):
        raise ValueError("eps must lie in [0, 0.5)")
    ip = design.interposer
    W, H, gap = ip.width, ip.height, ip.min_spacing
    n = design.n_chiplets
    p = MilpProblem("init")

    xs = [p.add_var(f"x{i}", 0.0, W) for i in range(n)]
    ys = [p.add_var(f"y{i}", 0.0, H) for i in range(n)]
    us = [p.add_binary(f"u{i}") for i in range(n)]
    vs = [p.add_binary(f"v{i}") for i in range(n)]
    zs = [p.add_binary_product(us[i], vs[i], f"z{i}") for i in range(n)]

    # rotated dims as linear forms: s_i = |v-u| = u + v - 2z, w' = w + (h-w)s
    def wdim(i):
        c = design.chiplets[i]
        d = c.height - c.width
        return {us[i]: d, vs[i]: d, zs[i]: -2 * d}, c.width

    def hdim(i):
        c = design.chiplets[i]
        d = c.width - c.height
        return {us[i]: d, vs[i]: d, zs[i]: -2 * d}, c.height

    def add_scaled(target: dict, coeffs: dict, scale: float):
        for var, coef in coeffs.items():
            target[var] = target.get(var, 0.0) + coef * scale

    # containment: w'/2 <= x <= W - w'/2 (same for y)
    for i in range(n):
        wc, w0 = wdim(i)
        hc, h0 = hdim(i)
        row = {xs[i]: -1.0}
        add_scaled(row, wc, 0.5)
        p.add_le(row, -w0 / 2)                       # w'/2 - x <= 0
        row = {xs[i]: 1.0}
        add_scaled(row, wc, 0.5)
        p.add_le(row, W - w0 / 2)                    # x + w'/2 <= W
        row = {ys[i]: -1.0}
        add_scaled(row, hc, 0.5)
        p.add_le(row, -h0 / 2)
        row = {ys[i]: 1.0}
        add_scaled(row, hc, 0.5)
        p.add_le(row, H - h0 / 2)

    # pairwise non-overlap: four disjuncts, at most three disabled; the two
    # same-axis disjuncts can never hold together, giving the cuts d1+d2 >= 1
    delta_vars: dict[tuple[int, int], list[int]] = {}
    for i in range(n):
        for j in range(i + 1, n):
            ci, cj = design.chiplets[i], design.chiplets[j]
            maxsum = max(ci.width, ci.height) + max(cj.width, cj.height)
            big_x = W + eps * maxsum + gap
            big_y = H + eps * maxsum + gap
            deltas = [p.add_binary(f"d{k}_{i}_{j}") for k in range(4)]
            delta_vars[(i, j)] = deltas
            wci, w0i = wdim(i)
            wcj, w0j = wdim(j)
            hci, h0i = hdim(i)
            hcj, h0j = hdim(j)
            scale = 0.5 + eps
            for (a, b, da) in ((xs[i], xs[j], deltas[0]), (xs[j], xs[i], deltas[1])):
                row = {a: 1.0, b: -1.0, da: -big_x}
                add_scaled(row, wci, scale)
                add_scaled(row, wcj, scale)
                p.add_le(row, -(w0i + w0j) * scale - gap)
            for (a, b, da) in ((ys[i], ys[j], deltas[2]), (ys[j], ys[i], deltas[3])):
                row = {a: 1.0, b: -1.0, da: -big_y}
                add_scaled(row, hci, scale)
                add_scaled(row, hcj, scale)
                p.add_le(row, -(h0i + h0j) * scale - gap)
            p.add_le({d: 1.0 for d in deltas}, 3.0)
            p.add_ge({deltas[0]: 1.0, deltas[1]: 1.0}, 1.0)
            p.add_ge({deltas[2]: 1.0, deltas[3]: 1.0}, 1.0)

    # objective: sum over connected pairs of A_ij * (|Xij - Xji| + |Yij - Yji|)
    obj: dict[int, float] = {}
    for (i, j) in design.connected_pairs():
        a_ij = design.net_counts[(i, j)]
        oxi, oyi = design.clump_offsets[(i, j)]
        oxj, oyj = design.clump_offsets[(j, i)]
        (cxi, kxi), (cyi, kyi) = _clump_position_coeffs(xs[i], ys[i], us[i], vs[i], oxi, oyi)
        (cxj, kxj), (cyj, kyj) = _clump_position_coeffs(xs[j], ys[j], us[j], vs[j], oxj, oyj)
        diff_x = dict(cxi)
        add_scaled(diff_x, cxj, -1.0)
        diff_y = dict(cyi)
        add_scaled(diff_y, cyj, -1.0)
        tx = p.add_abs(diff_x, kxi - kxj, f"tx_{i}_{j}")
        ty = p.add_abs(diff_y, kyi - kyj, f"ty_{i}_{j}")
        obj[tx] = obj.get(tx, 0.0) + a_ij
        obj[ty] = obj.get(ty, 0.0) + a_ij
    p.set_objective(obj)

    def decode(sol: MilpSolution) -> PlacementState:
        theta = [UV_TO_ANGLE[(int(round(sol[us[i]])), int(round(sol[vs[i]])))] for i in range(n)]
        return PlacementState(np.array([sol[x] for x in xs]),
                              np.array([sol[y] for y in ys]),
                              np.array(theta))

    def encode(placement: PlacementState) -> dict[int, float]:
        """Binary assignment consistent with a layout meeting the init separation."""
        thetas = placement.snapped_angles()
        hint: dict[int, float] = {}
        for i in range(n):
            u, v = ANGLE_TO_UV[thetas[i]]
            hint[us[i]] = float(u)
            hint[vs[i]] = float(v)
            hint[zs[i]] = float(u * v)
        for (i, j), deltas in delta_vars.items():
            wi, hi = rotated_dims(design.chiplets[i], thetas[i])
            wj, hj = rotated_dims(design.chiplets[j], thetas[j])
            sep_x = init_separation(wi, wj, eps, gap)
            sep_y = init_separation(hi, hj, eps, gap)
            holds = [placement.x[i] + sep_x <= placement.x[j] + 1e-9,
                     placement.x[j] + sep_x <= placement.x[i] + 1e-9,
                     placement.y[i] + sep_y <= placement.y[j] + 1e-9,
                     placement.y[j] + sep_y <= placement.y[i] + 1e-9]
            for d, h in zip(deltas, holds):
                hint[d] = 0.0 if h else 1.0
        return hint

    return BuiltMilp(p, decode, encode)


def build_legalize_milp(design: DesignInstance, opt_placement: PlacementState,
                        lam_w: float = 0.0) -> BuiltMilp:
    """Displacement-minimizing legalization with frozen orientations."""
    ip = design.interposer
    W, H, gap = ip.width, ip.height, ip.min_spacing
    n = design.n_chiplets
    thetas = opt_placement.snapped_angles()
    dims = [rotated_dims(design.chiplets[i], thetas[i]) for i in range(n)]
    p = MilpProblem("legalize")
    xs = [p.add_var(f"x{i}", dims[i][0] / 2, W - dims[i][0] / 2) for i in range(n)]
    ys = [p.add_var(f"y{i}", dims[i][1] / 2, H - dims[i][1] / 2) for i in range(n)]

    delta_vars: dict[tuple[int, int], list[int]] = {}
    for i in range(n):
        for j in range(i + 1, n):
            sep_x = legalize_separation(dims[i][0], dims[j][0], gap)
            sep_y = legalize_separation(dims[i][1], dims[j][1], gap)
            deltas = [p.add_binary(f"d{k}_{i}_{j}") for k in range(4)]
            delta_vars[(i, j)] = deltas
            p.add_le({xs[i]: 1.0, xs[j]: -1.0, deltas[0]: -(W + sep_x)}, -sep_x)
            p.add_le({xs[j]: 1.0, xs[i]: -1.0, deltas[1]: -(W + sep_x)}, -sep_x)
            p.add_le({ys[i]: 1.0, ys[j]: -1.0, deltas[2]: -(H + sep_y)}, -sep_y)
            p.add_le({ys[j]: 1.0, ys[i]: -1.0, deltas[3]: -(H + sep_y)}, -sep_y)
            p.add_le({d: 1.0 for d in deltas}, 3.0)
            p.add_ge({deltas[0]: 1.0, deltas[1]: 1.0}, 1.0)
            p.add_ge({deltas[2]: 1.0, deltas[3]: 1.0}, 1.0)

    obj: dict[int, float] = {}
    for i in range(n):
        tx = p.add_abs({xs[i]: 1.0}, -float(opt_placement.x[i]), f"dx{i}")
        ty = p.add_abs({ys[i]: 1.0}, -float(opt_placement.y[i]), f"dy{i}")
        obj[tx] = 1.0
        obj[ty] = 1.0

    if lam_w > 0.0:
        # per-net |(x_i + ox_i) - (x_j + ox_j)|; identical offset differences merge
        groups: dict[tuple[int, int, int, float, float], int] = {}
        for net in design.nets:
            (ci, pi), (cj, pj) = net.a, net.b
            axi, ayi = bump_abs_position(0.0, 0.0, thetas[ci], design.pin(ci, pi))
            axj, ayj = bump_abs_position(0.0, 0.0, thetas[cj], design.pin(cj, pj))
            key = (ci, cj, round(axi - axj, 9), round(ayi - ayj, 9))
            groups[key] = groups.get(key, 0) + 1
        for (ci, cj, dx0, dy0), count in sorted(groups.items()):
            tx = p.add_abs({xs[ci]: 1.0, xs[cj]: -1.0}, dx0)
            ty = p.add_abs({ys[ci]: 1.0, ys[cj]: -1.0}, dy0)
            obj[tx] = obj.get(tx, 0.0) + lam_w * count
            obj[ty] = obj.get(ty, 0.0) + lam_w * count
    p.set_objective(obj)

    def decode(sol: MilpSolution) -> PlacementState:
        return PlacementState(np.array([sol[x] for x in xs]),
                              np.array([sol[y] for y in ys]),
                              np.array(thetas))

    def encode(placement: PlacementState) -> dict[int, float]:
        hint: dict[int, float] = {}
        for (i, j), deltas in delta_vars.items():
            sep_x = legalize_separation(dims[i][0], dims[j][0], gap)
            sep_y = legalize_separation(dims[i][1], dims[j][1], gap)
            holds = [placement.x[i] + sep_x <= placement.x[j] + 1e-9,
                     placement.x[j] + sep_x <= placement.x[i] + 1e-9,
                     placement.y[i] + sep_y <= placement.y[j] + 1e-9,
                     placement.y[j] + sep_y <= placement.y[i] + 1e-9]
            for d, h in zip(deltas, holds):
                hint[d] = 0.0 if h else 1.0
        return hint

    return BuiltMilp(p, decode, encode)


# ---------------------------------------------------------------------------
# greedy ring placement
# ---------------------------------------------------------------------------

def _ring_place(target_x, target_y, w, h, placed, W, H, gap, step):
    """First legal center on an expanding Chebyshev ring around the target.

    placed is a list of (x, y, w, h) rectangles already committed.  Returns
    None when no position exists within the interposer diagonal.
    """
    lo_x, hi_x = w / 2, W - w / 2
    lo_y, hi_y = h / 2, H - h / 2
    if lo_x > hi_x + 1e-12 or lo_y > hi_y + 1e-12:
        return None
    tx = min(max(target_x, lo_x), hi_x)
    ty = min(max(target_y, lo_y), hi_y)
    if placed:
        parr = np.array([(px, py, pw, ph) for (px, py, pw, ph) in placed])
    else:
        parr = None

    def ok(cx, cy) -> bool:
        if parr is None:
            return True
        gx = np.abs(cx - parr[:, 0]) - (w + parr[:, 2]) / 2
        gy = np.abs(cy - parr[:, 1]) - (h + parr[:, 3]) / 2
        return bool(np.all(np.maximum(gx, gy) >= gap - 1e-9))

    max_r = int(math.ceil(math.hypot(W, H) / step)) + 1
    for r in range(max_r):
        if r == 0:
            pts = [(0, 0)]
        else:
            side = range(-r, r + 1)
            pts = [(dx, -r) for dx in side] + [(dx, r) for dx in side] \
                + [(-r, dy) for dy in range(-r + 1, r)] + [(r, dy) for dy in range(-r + 1, r)]
            pts.sort(key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))
        for dx, dy in pts:
            cx = tx + dx * step
            cy = ty + dy * step
            if cx < lo_x - 1e-12 or cx > hi_x + 1e-12 or cy < lo_y - 1e-12 or cy > hi_y + 1e-12:
                continue
            if ok(cx, cy):
                return cx, cy
    return None


def greedy_legalize(design: DesignInstance, opt_placement: PlacementState) -> PlacementState:
    """Deterministic fallback: by decreasing area, snap each chiplet to the
    nearest legal spot on a half-spacing lattice around its optimized location."""
    ip = design.interposer
    gap = ip.min_spacing
    step = max(gap / 2, 1e-3)
    thetas = opt_placement.snapped_angles()
    order = sorted(range(design.n_chiplets),
                   key=lambda i: (-design.chiplets[i].area, i))
    placed: list[tuple[float, float, float, float]] = []
    out_x = np.zeros(design.n_chiplets)
    out_y = np.zeros(design.n_chiplets)
    slots: dict[int, tuple[float, float]] = {}
    for i in order:
        w, h = rotated_dims(design.chiplets[i], thetas[i])
        spot = _ring_place(opt_placement.x[i], opt_placement.y[i], w, h, placed,
                           ip.width, ip.height, gap, step)
        if spot is None:
            raise InfeasibleLegalization(f"no legal position found for chiplet {i}")
        slots[i] = spot
        placed.append((spot[0], spot[1], w, h))
    for i, (cx, cy) in slots.items():
        out_x[i] = cx
        out_y[i] = cy
    return PlacementState(out_x, out_y, np.array(thetas))


def greedy_init(design: DesignInstance, dim_scale: float = 1.0) -> PlacementState:
    """Connectivity-guided constructive seed for instances too large for MILP.

    Chiplets are placed in decreasing order of total net weight; each lands as
    close as possible to the weighted centroid of its already-placed partners
    (the interposer center for the first).  All orientations start at 0.
    dim_scale inflates every die, so 1 + 2*eps reproduces the initialization
    MILP's separation rule exactly (used to seed its incumbent).
    """
    ip = design.interposer
    gap = ip.min_spacing
    step = max(gap / 2, 1e-3)
    n = design.n_chiplets
    weight = {i: 0 for i in range(n)}
    for (i, j), a in design.net_counts.items():
        weight[i] += a
    order = sorted(range(n), key=lambda i: (-weight[i], i))
    placed_idx: list[int] = []
    placed_rects: list[tuple[float, float, float, float]] = []
    out_x = np.zeros(n)
    out_y = np.zeros(n)
    for i in order:
        c = design.chiplets[i]
        w, h = c.width * dim_scale, c.height * dim_scale
        wsum = 0.0
        tx = ty = 0.0
        for j in placed_idx:
            a = design.net_counts.get((i, j), 0)
            if a > 0:
                tx += a * out_x[j]
                ty += a * out_y[j]
                wsum += a
        if wsum > 0:
            tx, ty = tx / wsum, ty / wsum
        else:
            tx, ty = ip.width / 2, ip.height / 2
        spot = _ring_place(tx, ty, w, h, placed_rects,
                           ip.width, ip.height, gap, step)
        if spot is None:
            raise InfeasibleLegalization(f"greedy init found no position for chiplet {i}")
        out_x[i], out_y[i] = spot
        placed_rects.append((spot[0], spot[1], w, h))
        placed_idx.append(i)
    return PlacementState(out_x, out_y, np.zeros(n))


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

@dataclass
class SeedResult:
    placement: PlacementState
    method: str          # "milp" | "milp_incumbent" | "greedy"
    objective: float | None


def initialize(design: DesignInstance, eps: float = DEFAULT_INIT_EPS,
               time_budget: float = 60.0, node_limit: int = NODE_LIMIT_INIT,
               milp_max_chiplets: int = MILP_MAX_CHIPLETS) -> SeedResult:
    """Seed layout: MILP when tractable, otherwise the greedy constructor."""
    if design.n_chiplets > milp_max_chiplets:
        return SeedResult(greedy_init(design), "greedy", None)
    built = build_init_milp(design, eps)
    built.problem.time_limit = time_budget
    built.problem.node_limit = node_limit
    try:
        hint_pl = greedy_init(design, dim_scale=1.0 + 2.0 * eps)
        built.problem.hints = [built.encode(hint_pl)]
    except InfeasibleLegalization:
        pass          # no greedy seed; the MILP decides feasibility itself
    sol = solve(built.problem)
    if sol.status in ("optimal", "feasible_timeout") and sol.values is not None:
        placement = built.decode(sol)
        if check_legal(design, placement).ok:
            method = "milp" if sol.status == "optimal" else "milp_incumbent"
            return SeedResult(placement, method, sol.objective)
    if sol.status == "infeasible":
        raise InfeasibleLegalization("initialization MILP is infeasible")
    return SeedResult(greedy_init(design), "greedy", None)


@dataclass
class LegalizeResult:
    placement: PlacementState
    method: str          # "identity" | "milp" | "milp_dsp" | "greedy"
    displacement: float


def _dsp(a: PlacementState, b: PlacementState) -> float:
    return float(np.abs(a.x - b.x).sum() + np.abs(a.y - b.y).sum())


def legalize(design: DesignInstance, opt_placement: PlacementState,
             lam_w: float = 0.0, time_budget: float = 120.0,
             node_limit: int = NODE_LIMIT_LEGALIZE,
             milp_max_chiplets: int = MILP_MAX_CHIPLETS) -> LegalizeResult:
    """Produce a legal placement near the optimized one.

    Tries the MILP with the wirelength term, falls back to pure displacement
    on an exhausted budget, then to the greedy placer; orientations are never
    changed.  Raises InfeasibleLegalization when the instance cannot be packed.
    """
    if not opt_placement.is_snapped():
        raise ValueError("legalize requires snapped orientations")
    if check_legal(design, opt_placement).ok:
        return LegalizeResult(opt_placement.copy(), "identity", 0.0)

    if design.n_chiplets <= milp_max_chiplets:
        try:
            greedy_hint = greedy_legalize(design, opt_placement)
        except InfeasibleLegalization:
            greedy_hint = None
        lam_stages = [lam_w, 0.0] if lam_w > 0.0 else [0.0]
        for lam in lam_stages:
            built = build_legalize_milp(design, opt_placement, lam)
            if lam > 0.0 and len(built.problem.rows) > 4 * WL_TERM_LIMIT + 10 * design.n_chiplets ** 2:
                continue          # wirelength stage too large, use pure displacement
            built.problem.time_limit = time_budget
            built.problem.node_limit = node_limit
            if greedy_hint is not None:
                built.problem.hints = [built.encode(greedy_hint)]
            sol = solve(built.problem)
            if sol.status == "infeasible":
                raise InfeasibleLegalization("legalization constraints are infeasible")
            if sol.values is not None:
                placement = built.decode(sol)
                if check_legal(design, placement).ok:
                    method = "milp" if lam > 0.0 else "milp_dsp"
                    return LegalizeResult(placement, method, _dsp(placement, opt_placement))
    placement = greedy_legalize(design, opt_placement)
    report = check_legal(design, placement)
    if not report.ok:
        raise InfeasibleLegalization("greedy legalization produced an illegal layout")
    return LegalizeResult(placement, "greedy", _dsp(placement, opt_placement))
