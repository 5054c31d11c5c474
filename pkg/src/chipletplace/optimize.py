"""Gradient-based multi-physics placement.

Orientations stay continuous: each chiplet carries a probability over the four
legal angles obtained by a softmax of a piecewise-quadratic proximity score,
and the wirelength, density and compact-model terms are all evaluated in
expectation over those probabilities.  The composite objective is

    J = WL' + lambda_dens * sum_b (D'_b - M_b)^2
        + lambda_T * sum_r max(0, T_r - T_th)^gamma
        + lambda_W * max(0, Wpg - W_th)^gamma

with hinged physics penalties (they vanish once the thresholds hold), the
bell-shaped bin density, and the smooth peak-to-valley surrogate for warpage.
Minimization runs Polak-Ribiere conjugate gradient descent with decoupled,
normalized steps for x, y and angle, an adaptively scaled density weight and
seeded uniform noise injection when the overflow stagnates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import DesignInstance, PlacementState, LEGAL_ANGLES
from .thermal import CompactThermalParams, tc_pass
from .warpage import CompactWarpageParams, default_tau, smooth_peak_to_valley, w_pass

N_ANGLES = 4


# ---------------------------------------------------------------------------
# orientation projection
# ---------------------------------------------------------------------------

def angular_deviation(theta_i, theta_k) -> np.ndarray:
    """Wrap-around angle distance normalized to [0, 0.5]."""
    r = np.abs(np.asarray(theta_i, dtype=float) - theta_k) / 360.0
    r = r % 1.0
    return np.abs(0.5 - np.abs(0.5 - r))


def rz(theta_k, theta_i) -> np.ndarray:
    """Piecewise-quadratic orientation proximity score in [0, 1].

    Equal angles score 1 (continuity limit of the near branch).
    """
    dt = angular_deviation(theta_i, theta_k)
    near = 1.0 - 2.0 * N_ANGLES ** 2 * dt ** 2
    far = 2.0 * N_ANGLES ** 2 * (dt - 1.0 / N_ANGLES) ** 2
    out = np.where(dt <= 1.0 / (2 * N_ANGLES), near,
                   np.where(dt <= 1.0 / N_ANGLES, far, 0.0))
    return out


def _rz_and_slope(theta_i: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """R_z and dR_z/dtheta_i for all four legal angles; shapes (n, 4)."""
    th = np.asarray(theta_i, dtype=float)[:, None]
    angles = np.array(LEGAL_ANGLES)[None, :]
    e = th - angles
    r = np.abs(e) / 360.0 % 1.0
    inner = 0.5 - r
    outer = 0.5 - np.abs(inner)
    dt = np.abs(outer)
    # chain of sign factors through the two folds and |e|
    sgn = np.where(outer >= 0, 1.0, -1.0) * np.where(inner >= 0, 1.0, -1.0) \
        * np.where(e >= 0, 1.0, -1.0) / 360.0
    near = dt <= 1.0 / (2 * N_ANGLES)
    mid = (dt > 1.0 / (2 * N_ANGLES)) & (dt <= 1.0 / N_ANGLES)
    val = np.where(near, 1.0 - 2.0 * N_ANGLES ** 2 * dt ** 2,
                   np.where(mid, 2.0 * N_ANGLES ** 2 * (dt - 1.0 / N_ANGLES) ** 2, 0.0))
    slope_dt = np.where(near, -4.0 * N_ANGLES ** 2 * dt,
                        np.where(mid, 4.0 * N_ANGLES ** 2 * (dt - 1.0 / N_ANGLES), 0.0))
    return val, slope_dt * sgn


def bz(theta_i, eta: float) -> np.ndarray:
    """Softmax orientation probabilities over the legal angles; rows sum to 1."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    scalar = np.isscalar(theta_i)
    th = np.atleast_1d(np.asarray(theta_i, dtype=float))
    val, _ = _rz_and_slope(th)
    z = val / eta
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if scalar else p


def bz_and_grad(theta_i: np.ndarray, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and their derivative w.r.t. theta_i; shapes (n, 4)."""
    val, slope = _rz_and_slope(np.asarray(theta_i, dtype=float))
    z = val / eta
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    mean_slope = (p * slope).sum(axis=1, keepdims=True)
    dp = p * (slope - mean_slope) / eta
    return p, dp


def snap_orientations(state: PlacementState, eta: float = 0.05) -> PlacementState:
    """Snap each angle to its most probable legal orientation (lowest index wins)."""
    p = bz(state.theta, eta)
    snapped = np.array([LEGAL_ANGLES[int(k)] for k in np.argmax(p, axis=1)])
    return PlacementState(state.x, state.y, snapped)


# ---------------------------------------------------------------------------
# projected wirelength
# ---------------------------------------------------------------------------

def _rotated_offset_table(px: float, py: float) -> np.ndarray:
    """(4, 2) pin offset under each legal rotation."""
    return np.array([[px, py], [-py, px], [-px, -py], [py, -px]])


class WirelengthCache:
    """Per-pair stacked pin-offset tables, built once per design."""

    def __init__(self, design: DesignInstance):
        by_pair: dict[tuple[int, int], list[tuple]] = {}
        for net in design.nets:
            (ci, pi), (cj, pj) = net.a, net.b
            if cj < ci:
                (ci, pi), (cj, pj) = (cj, pj), (ci, pi)
            by_pair.setdefault((ci, cj), []).append((design.pin(ci, pi), design.pin(cj, pj)))
        self.pairs = []
        for (ci, cj), pins in sorted(by_pair.items()):
            oi = np.stack([_rotated_offset_table(p.x, p.y) for p, _ in pins])  # (L,4,2)
            oj = np.stack([_rotated_offset_table(p.x, p.y) for _, p in pins])
            self.pairs.append((ci, cj, oi, oj))


def _smooth_abs(d: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    root = np.sqrt(d * d + eps * eps)
    return root - eps, d / root


def projected_wirelength(design: DesignInstance, state: PlacementState, eta: float,
                         eps_wl: float = 1e-3,
                         cache: WirelengthCache | None = None):
    """Orientation-probability-weighted smooth wirelength and its gradients.

    Returns (value, gx, gy, gtheta) with per-chiplet gradient vectors.
    """
    cache = cache or WirelengthCache(design)
    n = design.n_chiplets
    p, dp = bz_and_grad(state.theta, eta)
    value = 0.0
    gx = np.zeros(n)
    gy = np.zeros(n)
    gth = np.zeros(n)
    for ci, cj, oi, oj in cache.pairs:
        # (L, 4, 4): net l, orientation k of ci, orientation m of cj
        dx = (state.x[ci] + oi[:, :, None, 0]) - (state.x[cj] + oj[:, None, :, 0])
        dy = (state.y[ci] + oi[:, :, None, 1]) - (state.y[cj] + oj[:, None, :, 1])
        sx, dsx = _smooth_abs(dx, eps_wl)
        sy, dsy = _smooth_abs(dy, eps_wl)
        wkm = p[ci][:, None] * p[cj][None, :]              # (4, 4)
        tot = sx + sy
        value += float(np.einsum("km,lkm->", wkm, tot))
        gx[ci] += float(np.einsum("km,lkm->", wkm, dsx))
        gx[cj] -= float(np.einsum("km,lkm->", wkm, dsx))
        gy[ci] += float(np.einsum("km,lkm->", wkm, dsy))
        gy[cj] -= float(np.einsum("km,lkm->", wkm, dsy))
        sk = np.einsum("m,lkm->k", p[cj], tot)             # sum over nets and m
        sm = np.einsum("k,lkm->m", p[ci], tot)
        gth[ci] += float(dp[ci] @ sk)
        gth[cj] += float(dp[cj] @ sm)
    return value, gx, gy, gth


# ---------------------------------------------------------------------------
# projected bell-shaped density
# ---------------------------------------------------------------------------

def _bell_1d(centers: np.ndarray, pos: float, w: float, wb: float):
    """Bell-shaped overlap potential and d/dpos for one axis over all bins."""
    d = np.abs(pos - centers)
    a = 4.0 / ((w + 2 * wb) * (w + 4 * wb))
    bcoef = 2.0 / (wb * (w + 4 * wb))
    inner = d <= w / 2 + wb
    outer = (d > w / 2 + wb) & (d <= w / 2 + 2 * wb)
    val = np.where(inner, 1.0 - a * d * d,
                   np.where(outer, bcoef * (d - w / 2 - 2 * wb) ** 2, 0.0))
    sgn = np.where(pos >= centers, 1.0, -1.0)
    dval = np.where(inner, -2.0 * a * d,
                    np.where(outer, 2.0 * bcoef * (d - w / 2 - 2 * wb), 0.0)) * sgn
    return val, dval


@dataclass
class DensityField:
    values: np.ndarray          # (nby, nbx)
    bin_w: float
    bin_h: float
    capacity: np.ndarray        # M_b per bin
    _terms: list = field(default_factory=list)

    def grad_contraction(self, weight: np.ndarray):
        """Sum_b weight_b * dD_b/d(x_i, y_i, theta_i) for every chiplet.

        weight has the bin-grid shape; returns (gx, gy, gtheta).
        """
        n = max((t[0] for t in self._terms), default=-1) + 1
        gx = np.zeros(n)
        gy = np.zeros(n)
        gth = np.zeros(n)
        for (i, wt, dwt, norm, dnorm_dx, dnorm_dy, px, dpx, py, dpy) in self._terms:
            pyw = py @ weight                      # (nbx,)
            core = float(pyw @ px)
            gx[i] += wt * (norm * float(pyw @ dpx) + dnorm_dx * core)
            gy[i] += wt * (norm * float((dpy @ weight) @ px) + dnorm_dy * core)
            gth[i] += dwt * norm * core
        return gx, gy, gth


def projected_density(design: DesignInstance, state: PlacementState, eta: float,
                      bins: int | tuple[int, int] | None = None,
                      t_max: float = 1.0) -> DensityField:
    """Expected bin density under the orientation probabilities.

    Each chiplet spreads its exact area over nearby bins through the
    bell-shaped potential; the per-variant normalization keeps
    sum_b D_i * Px * Py equal to the chiplet area, so total density mass is
    conserved (including the boundary-clipping correction in the gradient).
    """
    ip = design.interposer
    if bins is None:
        nbx = nby = ip.grid_resolution
    elif isinstance(bins, int):
        nbx = nby = bins
    else:
        nbx, nby = bins
    bw, bh = ip.width / nbx, ip.height / nby
    cx = (np.arange(nbx) + 0.5) * bw
    cy = (np.arange(nby) + 0.5) * bh
    p, dp = bz_and_grad(state.theta, eta)
    out = DensityField(np.zeros((nby, nbx)), bw, bh,
                       np.full((nby, nbx), t_max * bw * bh))
    for i, chip in enumerate(design.chiplets):
        area = chip.area
        # orientations 0/180 keep (w, h); 90/270 swap them
        for dims, wt, dwt in (((chip.width, chip.height), p[i, 0] + p[i, 2], dp[i, 0] + dp[i, 2]),
                              ((chip.height, chip.width), p[i, 1] + p[i, 3], dp[i, 1] + dp[i, 3])):
            px, dpx = _bell_1d(cx, state.x[i], dims[0], bw)
            py, dpy = _bell_1d(cy, state.y[i], dims[1], bh)
            sx = float(px.sum())
            sy = float(py.sum())
            if sx <= 0.0 or sy <= 0.0:
                continue
            norm = area / (sx * sy)
            dnorm_dx = -norm * float(dpx.sum()) / sx
            dnorm_dy = -norm * float(dpy.sum()) / sy
            out.values += (wt * norm) * np.outer(py, px)
            out._terms.append((i, wt, dwt, norm, dnorm_dx, dnorm_dy, px, dpx, py, dpy))
    return out


def overflow(design: DesignInstance, density: DensityField) -> float:
    """Normalized total bin-capacity excess; 0 once nothing overflows."""
    total_area = design.total_chiplet_area()
    if total_area <= 0:
        raise ValueError("overflow undefined for zero total chiplet area")
    over = np.maximum(0.0, density.values - density.capacity)
    return float(over.sum() / total_area)


# ---------------------------------------------------------------------------
# composite objective
# ---------------------------------------------------------------------------

@dataclass
class PenaltyConfig:
    lambda_dens: float | None = None   # None -> adaptive initialization
    lambda_t: float = 0.0
    lambda_w: float = 0.0
    t_th: float = 150.0                # degC
    w_th: float = 50.0                 # um
    gamma: int = 2
    rho: float = 1.0                   # density weight growth rate
    t_max: float = 1.0                 # target bin density
    bins: int | None = None            # None -> interposer grid
    grid: int | None = None            # physics penalty grid; None -> interposer grid
    warp_tau: float | None = None      # None -> 50 / field range per evaluation

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")


@dataclass
class ObjectiveParts:
    total: float
    wirelength: float
    density_penalty: float
    thermal_penalty: float
    warpage_penalty: float
    gx: np.ndarray
    gy: np.ndarray
    gtheta: np.ndarray
    wl_grad_l1: float         # |grad WL'| over x,y (for the adaptive weight)
    dens_grad_l1: float       # |grad of the unweighted density term|
    density: DensityField
    tc_max: float             # surrogate peak temperature (nan without params)
    warp_p2v: float           # surrogate peak-to-valley (nan without params)


def objective(design: DesignInstance, state: PlacementState,
              tparams: CompactThermalParams | None,
              wparams: CompactWarpageParams | None,
              pen: PenaltyConfig, eta: float, lambda_dens: float,
              eps_wl: float = 1e-3,
              cache: WirelengthCache | None = None) -> ObjectiveParts:
    """Evaluate the penalty objective and its full analytic gradient."""
    n = design.n_chiplets
    wl, gwx, gwy, gwt = projected_wirelength(design, state, eta, eps_wl, cache)
    dens = projected_density(design, state, eta, pen.bins, pen.t_max)
    resid = dens.values - dens.capacity
    dens_term = float(np.sum(resid * resid))
    dgx, dgy, dgt = dens.grad_contraction(2.0 * resid)

    gx = gwx + lambda_dens * dgx
    gy = gwy + lambda_dens * dgy
    gth = gwt + lambda_dens * dgt

    thermal_pen = 0.0
    warp_pen = 0.0
    tc_max = math.nan
    warp_p2v = math.nan
    if (pen.lambda_t > 0 or pen.lambda_w > 0) and tparams is not None:
        probs, dprobs = bz_and_grad(state.theta, eta)
        res = pen.grid or design.interposer.grid_resolution
        w_arr = np.array([c.width for c in design.chiplets])
        h_arr = np.array([c.height for c in design.chiplets])
        # d(effective dims)/dtheta through the orientation probabilities
        ddw = (dprobs[:, 0] + dprobs[:, 2]) * w_arr + (dprobs[:, 1] + dprobs[:, 3]) * h_arr
        ddh = (dprobs[:, 0] + dprobs[:, 2]) * h_arr + (dprobs[:, 1] + dprobs[:, 3]) * w_arr
        g = pen.gamma
        if pen.lambda_w > 0 and wparams is not None:
            wp = w_pass(wparams, tparams, design, state, res, res, probs, want_grad=True)
            tc_max = float(wp.tc_values.max())
            tau = pen.warp_tau if pen.warp_tau is not None else default_tau(wp.values)
            p2v, dp2v = smooth_peak_to_valley(wp.values, tau)
            warp_p2v = p2v
            gap = max(0.0, p2v - pen.w_th)
            warp_pen = pen.lambda_w * gap ** g
            if gap > 0.0:
                coef = pen.lambda_w * g * gap ** (g - 1)
                for i in range(n):
                    gx[i] += coef * float(np.sum(dp2v * wp.d_dx[i]))
                    gy[i] += coef * float(np.sum(dp2v * wp.d_dy[i]))
                    gth[i] += coef * (float(np.sum(dp2v * wp.d_dw[i])) * ddw[i]
                                      + float(np.sum(dp2v * wp.d_dh[i])) * ddh[i])
        if pen.lambda_t > 0:
            tp = tc_pass(tparams, design, state, res, res, probs,
                         want_pos=True, want_dims=True)
            tc_max = float(tp.values.max())
            excess = np.maximum(0.0, tp.values - pen.t_th)
            thermal_pen = pen.lambda_t * float(np.sum(excess ** g))
            if excess.any():
                wgt = pen.lambda_t * g * excess ** (g - 1)
                for i in range(n):
                    gx[i] += float(np.sum(wgt * tp.d_dx[i]))
                    gy[i] += float(np.sum(wgt * tp.d_dy[i]))
                    gth[i] += (float(np.sum(wgt * tp.d_dw[i])) * ddw[i]
                               + float(np.sum(wgt * tp.d_dh[i])) * ddh[i])

    total = wl + lambda_dens * dens_term + thermal_pen + warp_pen
    return ObjectiveParts(
        total=total, wirelength=wl, density_penalty=lambda_dens * dens_term,
        thermal_penalty=thermal_pen, warpage_penalty=warp_pen,
        gx=gx, gy=gy, gtheta=gth,
        wl_grad_l1=float(np.abs(gwx).sum() + np.abs(gwy).sum()),
        dens_grad_l1=float(np.abs(dgx).sum() + np.abs(dgy).sum()),
        density=dens, tc_max=tc_max, warp_p2v=warp_p2v,
    )


# ---------------------------------------------------------------------------
# conjugate gradient descent
# ---------------------------------------------------------------------------

@dataclass
class CgdConfig:
    max_iter: int = 1000
    eta_start: float = 0.5
    eta_end: float = 0.05
    step_xy_frac: float = 0.02        # position step = frac * interposer width
    step_theta: float = 5.0           # degrees per iteration along the direction
    eps_cg: float = 1e-12
    eps_wl: float = 1e-3
    noise_window: int = 50
    noise_rel_tol: float = 0.01
    noise_ovfl_threshold: float = 0.02
    noise_zeta: float = 0.5


@dataclass
class CgdResult:
    state: PlacementState
    trajectory: list[dict]
    lambda_dens: float
    noise_events: list[int]


def run_cgd(design: DesignInstance, init_state: PlacementState,
            tparams: CompactThermalParams | None,
            wparams: CompactWarpageParams | None,
            pen: PenaltyConfig, cfg: CgdConfig | None = None,
            seed: int = 0) -> CgdResult:
    """Polak-Ribiere CGD over positions and continuous orientation angles.

    Deterministic for a fixed seed; noise injection draws from a dedicated
    generator.  Records one trajectory row per iteration.
    """
    cfg = cfg or CgdConfig()
    if cfg.max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    rng = np.random.default_rng(seed)
    cache = WirelengthCache(design)
    state = init_state.copy()
    n = design.n_chiplets
    ip = design.interposer
    step_xy = cfg.step_xy_frac * ip.width
    nb = pen.bins or ip.grid_resolution
    bin_w = ip.width / nb
    half_w = np.array([min(c.width, c.height) for c in design.chiplets]) / 2

    lam = pen.lambda_dens if pen.lambda_dens is not None else 0.0
    lam_fixed = pen.lambda_dens is not None
    g_prev = None
    d_prev = None
    ovfl_hist: list[float] = []
    trajectory: list[dict] = []
    noise_events: list[int] = []

    for it in range(1, cfg.max_iter + 1):
        frac = (it - 1) / max(cfg.max_iter - 1, 1)
        eta = cfg.eta_start + (cfg.eta_end - cfg.eta_start) * frac
        parts = objective(design, state, tparams, wparams, pen, eta, lam,
                          cfg.eps_wl, cache)
        if it == 1 and not lam_fixed:
            lam = parts.wl_grad_l1 / parts.dens_grad_l1 if parts.dens_grad_l1 > 0 else 1.0
            # recompute with the initialized weight so J and g are consistent
            parts = objective(design, state, tparams, wparams, pen, eta, lam,
                              cfg.eps_wl, cache)
        g = np.concatenate([parts.gx, parts.gy, parts.gtheta])
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient at iteration {it}; "
                f"J={parts.total:.6g} WL={parts.wirelength:.6g}")
        if g_prev is None:
            beta = 0.0
            d = -g
        else:
            beta = float(g @ (g - g_prev)) / (float(g_prev @ g_prev) + cfg.eps_cg)
            beta = max(beta, 0.0)
            d = -g + beta * d_prev
        dx, dy, dth = d[:n], d[n:2 * n], d[2 * n:]
        ax = step_xy / np.linalg.norm(dx) if np.linalg.norm(dx) > 0 else 0.0
        ay = step_xy / np.linalg.norm(dy) if np.linalg.norm(dy) > 0 else 0.0
        at = cfg.step_theta / np.linalg.norm(dth) if np.linalg.norm(dth) > 0 else 0.0
        state.x += ax * dx
        state.y += ay * dy
        state.theta += at * dth
        np.clip(state.x, half_w, ip.width - half_w, out=state.x)
        np.clip(state.y, half_w, ip.height - half_w, out=state.y)

        ovfl = overflow(design, parts.density)
        lam_used = lam
        lam *= (1.0 + pen.rho * ovfl)
        noise_injected = 0
        ovfl_hist.append(ovfl)
        if (len(ovfl_hist) >= cfg.noise_window and ovfl > cfg.noise_ovfl_threshold):
            window = ovfl_hist[-cfg.noise_window:]
            base = max(abs(window[0]), 1e-12)
            if abs(window[-1] - window[0]) / base < cfg.noise_rel_tol:
                mag = cfg.noise_zeta * bin_w
                state.x += rng.uniform(-mag, mag, n)
                state.y += rng.uniform(-mag, mag, n)
                np.clip(state.x, half_w, ip.width - half_w, out=state.x)
                np.clip(state.y, half_w, ip.height - half_w, out=state.y)
                d = None
                g = None
                noise_injected = 1
                noise_events.append(it)
                ovfl_hist.clear()

        trajectory.append({
            "iter": it, "J": parts.total, "WL": parts.wirelength, "OVFL": ovfl,
            "Tmax": parts.tc_max, "warpage": parts.warp_p2v,
            "lambda_dens": lam_used, "noise_injected": noise_injected,
        })
        g_prev = g
        d_prev = d
    return CgdResult(state, trajectory, lam, noise_events)
