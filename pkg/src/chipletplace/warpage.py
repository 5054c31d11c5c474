"""Compact warpage surrogate: thermally weighted local quadratic fields.

Each chiplet contributes a quadratic-hyperbolic local field centered on it,

    w_i(x, y) = k_x,i^2 (x-x_i)^2 + k_y,i^2 (y-y_i)^2
              + lambda_i [k_x,i (x-x_i) + k_y,i (y-y_i)] + c_i,

and the displacement field weights every local term by the local thermal
excursion of the compact temperature model:

    W(x, y) = alpha * sum_i (T(x, y) - T_ref,i) * w_i(x, y) + b.

Trainable parameters: global alpha and b plus per-chiplet
(k_x, k_y, lambda, c, T_ref) -- 5N + 2 in total.  The composition with the
compact thermal model keeps W differentiable in positions and orientations.

The peak-to-valley warpage metric is non-smooth; optimization uses the
Boltzmann-weighted soft maximum/minimum with sharpness tau, which approaches
max - min as tau grows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .fields import FieldGrid, field_mae, field_pearson
from .fitting import FitConfig, adam_minimize
from .model import DesignInstance, PlacementState
from .thermal import CompactThermalParams, tc_pass


@dataclass
class CompactWarpageParams:
    alpha: float            # global amplitude
    bias: float             # b, um
    kx: np.ndarray          # (N,) > 0
    ky: np.ndarray
    lam: np.ndarray         # linear coupling
    c: np.ndarray           # per-chiplet offset
    t_ref: np.ndarray       # per-chiplet reference temperature, degC

    def __post_init__(self):
        self.kx = np.asarray(self.kx, dtype=float)
        self.ky = np.asarray(self.ky, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        self.t_ref = np.asarray(self.t_ref, dtype=float)
        if np.any(self.kx <= 0) or np.any(self.ky <= 0):
            raise ValueError("curvature factors must be positive")
        shapes = {a.shape for a in (self.kx, self.ky, self.lam, self.c, self.t_ref)}
        if len(shapes) != 1:
            raise ValueError("per-chiplet parameter arrays must share a shape")

    @property
    def n_chiplets(self) -> int:
        return self.kx.size

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "b": self.bias,
            "per_chiplet": [
                {"kx": float(kx), "ky": float(ky), "lambda": float(lm),
                 "c": float(cc), "t_ref": float(tr)}
                for kx, ky, lm, cc, tr in zip(self.kx, self.ky, self.lam, self.c, self.t_ref)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CompactWarpageParams":
        per = doc["per_chiplet"]
        return cls(float(doc["alpha"]), float(doc["b"]),
                   np.array([p["kx"] for p in per]), np.array([p["ky"] for p in per]),
                   np.array([p["lambda"] for p in per]), np.array([p["c"] for p in per]),
                   np.array([p["t_ref"] for p in per]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CompactWarpageParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def eval_w_local(kx: float, ky: float, lam: float, c: float,
                 dx, dy):
    """Local warpage contribution at offsets (dx, dy) from the chiplet center."""
    return (kx * kx) * dx * dx + (ky * ky) * dy * dy + lam * (kx * dx + ky * dy) + c


@dataclass
class WarpagePass:
    values: np.ndarray                 # (ny, nx), um
    tc_values: np.ndarray              # compact temperature on the same grid
    d_dx: np.ndarray | None = None     # (N, ny, nx)
    d_dy: np.ndarray | None = None
    d_dw: np.ndarray | None = None     # through the thermal dims channel
    d_dh: np.ndarray | None = None


def w_pass(params: CompactWarpageParams, tparams: CompactThermalParams,
           design: DesignInstance, placement: PlacementState, nx: int, ny: int,
           orientation_probs: np.ndarray | None = None,
           want_grad: bool = False) -> WarpagePass:
    if params.n_chiplets != design.n_chiplets:
        raise ValueError("warpage parameter set does not match the design size")
    tp = tc_pass(tparams, design, placement, nx, ny, orientation_probs,
                 want_pos=want_grad, want_dims=want_grad)
    ip = design.interposer
    xs = (np.arange(nx) + 0.5) * (ip.width / nx)
    ys = (np.arange(ny) + 0.5) * (ip.height / ny)
    n = design.n_chiplets
    T = tp.values
    wsum = np.zeros((ny, nx))
    excess = []   # (T - T_ref,i)
    locals_ = []
    for i in range(n):
        dxv = xs[None, :] - placement.x[i]
        dyv = ys[:, None] - placement.y[i]
        wi = eval_w_local(params.kx[i], params.ky[i], params.lam[i], params.c[i], dxv, dyv)
        locals_.append(wi)
        excess.append(T - params.t_ref[i])
        wsum += wi
    values = params.bias + params.alpha * sum(e * w for e, w in zip(excess, locals_)) \
        if n else np.full((ny, nx), params.bias)
    out = WarpagePass(values=values, tc_values=T)
    if want_grad:
        out.d_dx = np.empty((n, ny, nx))
        out.d_dy = np.empty((n, ny, nx))
        out.d_dw = np.empty((n, ny, nx))
        out.d_dh = np.empty((n, ny, nx))
        for i in range(n):
            dxv = xs[None, :] - placement.x[i]
            dyv = ys[:, None] - placement.y[i]
            dwi_dxi = -(2 * params.kx[i] ** 2) * dxv - params.lam[i] * params.kx[i]
            dwi_dyi = -(2 * params.ky[i] ** 2) * dyv - params.lam[i] * params.ky[i]
            out.d_dx[i] = params.alpha * (tp.d_dx[i] * wsum + excess[i] * dwi_dxi)
            out.d_dy[i] = params.alpha * (tp.d_dy[i] * wsum + excess[i] * dwi_dyi)
            out.d_dw[i] = params.alpha * tp.d_dw[i] * wsum
            out.d_dh[i] = params.alpha * tp.d_dh[i] * wsum
    return out


def eval_w(params: CompactWarpageParams, tparams: CompactThermalParams,
           design: DesignInstance, placement: PlacementState,
           resolution: int | None = None,
           orientation_probs: np.ndarray | None = None) -> FieldGrid:
    """Compact displacement field (um) on the interposer grid."""
    grid = FieldGrid.zeros(design.interposer, resolution)
    p = w_pass(params, tparams, design, placement, grid.nx, grid.ny, orientation_probs)
    return grid.copy_with(p.values)


@dataclass
class WarpageGrads:
    d_dx: np.ndarray
    d_dy: np.ndarray
    d_dw: np.ndarray
    d_dh: np.ndarray


def grad_w(params: CompactWarpageParams, tparams: CompactThermalParams,
           design: DesignInstance, placement: PlacementState,
           resolution: int | None = None,
           orientation_probs: np.ndarray | None = None) -> WarpageGrads:
    grid = FieldGrid.zeros(design.interposer, resolution)
    p = w_pass(params, tparams, design, placement, grid.nx, grid.ny,
               orientation_probs, want_grad=True)
    return WarpageGrads(p.d_dx, p.d_dy, p.d_dw, p.d_dh)


# ---------------------------------------------------------------------------
# smooth peak-to-valley
# ---------------------------------------------------------------------------

def soft_extremum(values: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """Boltzmann-weighted soft maximum and its gradient weights.

    Returns (S, dS/dvalues).  tau > 0 approaches max; tau < 0 approaches min.
    """
    v = values.ravel()
    z = tau * v
    z -= z.max()
    e = np.exp(z)
    p = e / e.sum()
    s = float(np.dot(p, v))
    dv = p * (1.0 + tau * (v - s))
    return s, dv.reshape(values.shape)


def smooth_peak_to_valley(values: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """Differentiable surrogate of max - min with sharpness tau."""
    hi, dhi = soft_extremum(values, tau)
    lo, dlo = soft_extremum(values, -tau)
    return hi - lo, dhi - dlo


def default_tau(values: np.ndarray, sharpness: float = 50.0) -> float:
    """Sharpness scaled to the field range (50/range by default)."""
    span = float(values.max() - values.min())
    return sharpness / max(span, 1e-12)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def fit_warpage(design: DesignInstance,
                samples: list[tuple[PlacementState, FieldGrid, FieldGrid]],
                tparams: CompactThermalParams,
                cfg: FitConfig | None = None, seed: int = 0):
    """Fit against oracle displacement maps with the thermal surrogate frozen.

    samples holds (placement, oracle thermal field, oracle warpage field); the
    compact temperature at each placement is precomputed once, so iterations
    only touch the polynomial part.  Curvatures stay positive via exponential
    reparameterization; alpha and b are scale-preconditioned linear terms.
    """
    from .thermal import SurrogateFitReport

    del seed
    if len(samples) < 2:
        raise ValueError("fit_warpage needs at least 2 training samples")
    cfg = cfg or FitConfig()
    n = design.n_chiplets
    ny, nx = samples[0][2].values.shape
    ip = design.interposer
    xs = (np.arange(nx) + 0.5) * (ip.width / nx)
    ys = (np.arange(ny) + 0.5) * (ip.height / ny)

    # frozen compact temperature and center offsets per sample
    pre = []
    for placement, _, label in samples:
        T = tc_pass(tparams, design, placement, nx, ny).values
        dxv = np.stack([xs[None, :] - placement.x[i] + np.zeros((ny, nx)) for i in range(n)])
        dyv = np.stack([ys[:, None] - placement.y[i] + np.zeros((ny, nx)) for i in range(n)])
        pre.append((T, dxv, dyv, label.values))

    t_ref0 = float(np.mean([np.mean(t.values) for _, t, _ in samples])) if samples else 25.0
    w_ranges = [float(l.values.max() - l.values.min()) for _, _, l in samples]
    w_scale = max(float(np.mean(w_ranges)), 1e-9)
    t_scale = max(float(np.mean([p[0].max() - p[0].min() for p in pre])), 1.0)
    kx0 = np.array([2.0 / c.width for c in design.chiplets])
    ky0 = np.array([2.0 / c.height for c in design.chiplets])

    # alpha scale from the initial composite field magnitude on sample 0
    T0, dx0, dy0, _ = pre[0]
    comp0 = sum((T0 - t_ref0) * eval_w_local(kx0[i], ky0[i], 0.0, 1.0, dx0[i], dy0[i])
                for i in range(n))
    a_scale = w_scale / max(float(np.abs(comp0).max()), 1e-12) if n else 1.0

    def unpack(s: np.ndarray) -> CompactWarpageParams:
        return CompactWarpageParams(
            alpha=a_scale * s[0],
            bias=w_scale * s[1],
            kx=kx0 * np.exp(s[2:2 + n]),
            ky=ky0 * np.exp(s[2 + n:2 + 2 * n]),
            lam=s[2 + 2 * n:2 + 3 * n].copy(),
            c=s[2 + 3 * n:2 + 4 * n].copy(),
            t_ref=t_ref0 + t_scale * s[2 + 4 * n:2 + 5 * n],
        )

    cells = sum(p[3].size for p in pre)

    def loss_and_grad(s: np.ndarray) -> tuple[float, np.ndarray]:
        q = unpack(s)
        loss = 0.0
        g = np.zeros_like(s)
        for T, dxv, dyv, label in pre:
            wloc = np.stack([eval_w_local(q.kx[i], q.ky[i], q.lam[i], q.c[i], dxv[i], dyv[i])
                             for i in range(n)])
            exc = T[None, :, :] - q.t_ref[:, None, None]
            comp = np.sum(exc * wloc, axis=0)
            resid = (q.bias + q.alpha * comp) - label
            loss += float(np.sum(resid * resid))
            r = (2.0 / cells) * resid
            g[0] += float(np.sum(r * comp)) * a_scale
            g[1] += float(np.sum(r)) * w_scale
            for i in range(n):
                re = r * exc[i]
                dkx = np.sum(re * (2 * q.kx[i] * dxv[i] ** 2 + q.lam[i] * dxv[i]))
                dky = np.sum(re * (2 * q.ky[i] * dyv[i] ** 2 + q.lam[i] * dyv[i]))
                g[2 + i] += q.alpha * float(dkx) * q.kx[i]
                g[2 + n + i] += q.alpha * float(dky) * q.ky[i]
                g[2 + 2 * n + i] += q.alpha * float(np.sum(re * (q.kx[i] * dxv[i] + q.ky[i] * dyv[i])))
                g[2 + 3 * n + i] += q.alpha * float(np.sum(re))
                g[2 + 4 * n + i] += -q.alpha * float(np.sum(r * wloc[i])) * t_scale
        return loss / cells, g

    s0 = np.zeros(2 + 5 * n)
    s0[0] = 1.0
    s0[2 + 3 * n:2 + 4 * n] = 1.0   # c_i start at 1 so thermal weighting is live
    s_opt, trace = adam_minimize(loss_and_grad, s0, cfg)
    params = unpack(s_opt)
    maes, pearsons = [], []
    for placement, _, label in samples:
        pred = eval_w(params, tparams, design, placement, resolution=nx)
        maes.append(field_mae(pred, label))
        pearsons.append(field_pearson(pred, label))
    report = SurrogateFitReport(trace.losses[-1], trace.iterations, trace.converged,
                                maes, pearsons)
    return params, report
