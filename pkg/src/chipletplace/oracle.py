"""Golden numerical field solvers for the interposer grid.

These stand in for the heavyweight thermal/mechanical simulators: a quasi-2D
screened-Poisson heat solver and a biharmonic plate bending solver, both
discretized with second-order cell-centered finite differences and relaxed by
red-black successive over-relaxation.  They are written as plain scalar loops:
the solvers are the reference that everything else is validated against, so
clarity and determinism take priority over speed (the fitted compact models
are the fast path).

Thermal model: the 3D stack is collapsed to

    kappa_eff * h_stack * lap(T) - h_sink * (T - T_ambient) = -P

with adiabatic (zero-flux) lateral boundaries.  h_sink lumps the vertical
TIM/spreader/heatsink path; by default it spreads a 0.1 K/W convective
resistance over the package area.

Plate model: out-of-plane displacement w obeys

    lap(lap(w)) = C * lap(dT),   C = (1 - nu) * alpha_cte / (E * h_plate^2)

with simply-supported edges (w = 0, lap(w) = 0).  Writing m = lap(w), the
equation integrates once to m = C*dT + q with q harmonic and q = -C*dT on the
boundary, so the solve cascades into two Poisson problems and never needs to
differentiate the temperature data.  Material constants are documented
stand-ins; absolute calibration is not attempted.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import pi, sin

from .fields import FieldGrid, rasterize_power
from .model import DesignInstance, PlacementState


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} sweeps)")
        self.residual = residual
        self.iterations = iterations


@dataclass
class ThermalOracleConfig:
    kappa_eff: float = 120.0      # W/(m K), effective lateral conductivity
    h_sink: float | None = None   # W/(m^2 K); None -> 1/(0.1 K/W * package area)
    t_ambient: float = 25.0       # degC
    h_stack: float = 0.5          # mm, effective conducting stack thickness
    tolerance: float = 1e-8       # relative residual
    max_iter: int = 20000

    def sink_coefficient(self, width_mm: float, height_mm: float) -> float:
        if self.h_sink is not None:
            return self.h_sink
        area_m2 = width_mm * height_mm * 1e-6
        return 1.0 / (0.1 * area_m2)


@dataclass
class PlateOracleConfig:
    e_modulus: float = 130.0      # GPa (numeric scale; see module docstring)
    nu: float = 0.28
    alpha_cte: float = 2.8e-6     # 1/K
    h_plate: float = 0.1          # mm
    t_ref: float = 25.0           # degC
    tolerance: float = 1e-8
    max_iter: int = 20000

    def __post_init__(self):
        if not (0.0 < self.nu < 0.5):
            raise ValueError("Poisson ratio must lie in (0, 0.5)")
        if self.e_modulus <= 0 or self.alpha_cte <= 0 or self.h_plate <= 0:
            raise ValueError("E, alpha_cte, h_plate must be positive")


def sor_omega(nx: int, ny: int) -> float:
    """Over-relaxation factor from grid size alone (5-point Poisson optimum)."""
    return 2.0 / (1.0 + sin(pi / max(nx, ny)))


def _solve_sor(nx, ny, kx, ky, sigma, rhs, bc, bc_faces, tol, max_iter):
    """Red-black SOR for  kx*(uE+uW) + ky*(uN+uS) - diag*u = -rhs  per cell.

    Boundary conditions are folded into the per-cell diagonal and right-hand
    side: a zero-flux (mirror) face removes the outward coupling from the
    diagonal, a Dirichlet face with value g adds the coupling to the diagonal
    and 2*k*g to the right-hand side (the face sits half a cell outside the
    boundary cell center).  The padded ring stays at zero, so one uniform
    stencil serves every cell.  bc is "neumann" or "dirichlet"; bc_faces holds
    (left[ny], right[ny], bottom[nx], top[nx]) face values for the latter.

    Convergence: the max-norm of the discrete residual falls below tol times
    the max-norm of the (folded) right-hand side.
    """
    omega = sor_omega(nx, ny)
    base = 2.0 * kx + 2.0 * ky + sigma
    diag = [[base] * nx for _ in range(ny)]
    f = [[float(v) for v in row] for row in rhs]
    if bc == "neumann":
        for i in range(ny):
            diag[i][0] -= kx
            diag[i][nx - 1] -= kx
        for j in range(nx):
            diag[0][j] -= ky
            diag[ny - 1][j] -= ky
    else:
        left, right, bottom, top = bc_faces
        for i in range(ny):
            diag[i][0] += kx
            f[i][0] += 2.0 * kx * left[i]
            diag[i][nx - 1] += kx
            f[i][nx - 1] += 2.0 * kx * right[i]
        for j in range(nx):
            diag[0][j] += ky
            f[0][j] += 2.0 * ky * bottom[j]
            diag[ny - 1][j] += ky
            f[ny - 1][j] += 2.0 * ky * top[j]

    ref = max((abs(v) for row in f for v in row), default=0.0)
    if ref == 0.0:
        return [[0.0] * nx for _ in range(ny)], 0, 0.0

    u = [[0.0] * (nx + 2) for _ in range(ny + 2)]   # zero ring never written

    def residual_max():
        worst = 0.0
        for i in range(1, ny + 1):
            row, up, dn = u[i], u[i - 1], u[i + 1]
            src, dg = f[i - 1], diag[i - 1]
            for j in range(1, nx + 1):
                r = kx * (row[j - 1] + row[j + 1]) + ky * (up[j] + dn[j]) \
                    + src[j - 1] - dg[j - 1] * row[j]
                if r < 0.0:
                    r = -r
                if r > worst:
                    worst = r
        return worst

    sweeps = 0
    res = residual_max()
    while res > tol * ref:
        if sweeps >= max_iter:
            raise ConvergenceError("SOR failed to converge", res / ref, sweeps)
        for color in (0, 1):
            for i in range(1, ny + 1):
                row, up, dn = u[i], u[i - 1], u[i + 1]
                src, dg = f[i - 1], diag[i - 1]
                for j in range(1 + (i + color) % 2, nx + 1, 2):
                    val = (kx * (row[j - 1] + row[j + 1]) + ky * (up[j] + dn[j])
                           + src[j - 1]) / dg[j - 1]
                    row[j] += omega * (val - row[j])
        sweeps += 1
        res = residual_max()
    return [row[1:nx + 1] for row in u[1:ny + 1]], sweeps, res / ref


def solve_thermal(design: DesignInstance, placement: PlacementState,
                  cfg: ThermalOracleConfig | None = None,
                  resolution: int | None = None) -> FieldGrid:
    """Steady-state temperature field (degC) for a snapped placement."""
    cfg = cfg or ThermalOracleConfig()
    power = rasterize_power(design, placement, resolution)
    return solve_thermal_from_power(power, cfg,
                                    design.interposer.width, design.interposer.height)


def solve_thermal_from_power(power: FieldGrid, cfg: ThermalOracleConfig,
                             width_mm: float, height_mm: float) -> FieldGrid:
    """Same as solve_thermal but from a pre-rasterized power map (W/m^2)."""
    kh = cfg.kappa_eff * cfg.h_stack * 1e-3          # W/K
    dx_m = power.dx * 1e-3
    dy_m = power.dy * 1e-3
    kx = kh / (dx_m * dx_m)                          # W/(K m^2)
    ky = kh / (dy_m * dy_m)
    sigma = cfg.sink_coefficient(width_mm, height_mm)
    rhs = [[float(v) for v in row] for row in power.values]
    u, _, _ = _solve_sor(power.nx, power.ny, kx, ky, sigma, rhs,
                         "neumann", None, cfg.tolerance, cfg.max_iter)
    out = power.copy_with(power.values * 0.0)
    for i in range(power.ny):
        for j in range(power.nx):
            out.values[i, j] = cfg.t_ambient + u[i][j]
    return out


def _face_values(values, nx, ny):
    """Cubic extrapolation of cell-centered data to the four boundary faces.

    Fourth-order accurate so the face data never limits the second-order
    convergence of the downstream Poisson cascade.
    """
    c = (35.0 / 16.0, -35.0 / 16.0, 21.0 / 16.0, -5.0 / 16.0)

    def face(a, b, d, e):
        return c[0] * a + c[1] * b + c[2] * d + c[3] * e

    left = [face(values[i][0], values[i][1], values[i][2], values[i][3]) for i in range(ny)]
    right = [face(values[i][nx - 1], values[i][nx - 2], values[i][nx - 3], values[i][nx - 4])
             for i in range(ny)]
    bottom = [face(values[0][j], values[1][j], values[2][j], values[3][j]) for j in range(nx)]
    top = [face(values[ny - 1][j], values[ny - 2][j], values[ny - 3][j], values[ny - 4][j])
           for j in range(nx)]
    return left, right, bottom, top


def solve_warpage(thermal: FieldGrid, cfg: PlateOracleConfig | None = None) -> FieldGrid:
    """Out-of-plane displacement (um) from a temperature field on the same grid.

    Cascade: q harmonic with q = -C*dT on the faces, then lap(w) = C*dT + q
    with w = 0 on the faces.  Lengths in mm internally, output scaled to um.
    """
    cfg = cfg or PlateOracleConfig()
    nx, ny = thermal.nx, thermal.ny
    coef = (1.0 - cfg.nu) * cfg.alpha_cte / (cfg.e_modulus * cfg.h_plate ** 2)
    dt = [[coef * (thermal.values[i, j] - cfg.t_ref) for j in range(nx)] for i in range(ny)]
    kx = 1.0 / (thermal.dx * thermal.dx)
    ky = 1.0 / (thermal.dy * thermal.dy)
    zero = [[0.0] * nx for _ in range(ny)]
    faces = tuple([-v for v in vals] for vals in _face_values(dt, nx, ny))
    q, _, _ = _solve_sor(nx, ny, kx, ky, 0.0, zero, "dirichlet", faces,
                         cfg.tolerance, cfg.max_iter)
    # lap(w) = m = C*dT + q; rhs convention of _solve_sor is -m
    neg_m = [[-(dt[i][j] + q[i][j]) for j in range(nx)] for i in range(ny)]
    zero_faces = ([0.0] * ny, [0.0] * ny, [0.0] * nx, [0.0] * nx)
    w, _, _ = _solve_sor(nx, ny, kx, ky, 0.0, neg_m, "dirichlet", zero_faces,
                         cfg.tolerance, cfg.max_iter)
    out = thermal.copy_with(thermal.values * 0.0)
    for i in range(ny):
        for j in range(nx):
            out.values[i, j] = 1e3 * w[i][j]
    return out
