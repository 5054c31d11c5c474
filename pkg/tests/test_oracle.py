import math

import numpy as np
import pytest

from chipletplace.fields import FieldGrid, rasterize_power
from chipletplace.model import ChipletSpec, DesignInstance, InterposerSpec, PlacementState
from chipletplace.oracle import (ConvergenceError, PlateOracleConfig, ThermalOracleConfig,
                                 solve_thermal, solve_thermal_from_power, solve_warpage)

W = H = 42.0


def power_grid(n, values):
    return FieldGrid(n, n, W / n, H / n, values)


def thermal_mms(n, cfg):
    """Manufactured solution T* = cos(pi x/W) cos(pi y/H) + T_amb."""
    dx = W / n
    xs = (np.arange(n) + 0.5) * dx
    X, Y = np.meshgrid(xs, xs)
    kh = cfg.kappa_eff * cfg.h_stack * 1e-3
    hs = cfg.sink_coefficient(W, H)
    k2 = (math.pi / (W * 1e-3)) ** 2 + (math.pi / (H * 1e-3)) ** 2
    Tstar = np.cos(math.pi * X / W) * np.cos(math.pi * Y / H)
    P = (kh * k2 + hs) * Tstar
    sol = solve_thermal_from_power(power_grid(n, P), cfg, W, H)
    return float(np.abs(sol.values - (cfg.t_ambient + Tstar)).max())


class TestThermalSolver:
    def test_zero_power_gives_ambient_exactly(self):
        cfg = ThermalOracleConfig()
        sol = solve_thermal_from_power(power_grid(16, np.zeros((16, 16))), cfg, W, H)
        assert np.all(sol.values == cfg.t_ambient)

    def test_temperature_above_ambient_for_nonnegative_power(self):
        rng = np.random.default_rng(0)
        cfg = ThermalOracleConfig()
        P = np.zeros((24, 24))
        P[8:14, 6:12] = rng.uniform(1e5, 1e6, (6, 6))
        sol = solve_thermal_from_power(power_grid(24, P), cfg, W, H)
        assert sol.values.min() >= cfg.t_ambient - 1e-9

    def test_mirror_symmetric_power_gives_symmetric_field(self):
        cfg = ThermalOracleConfig()
        ip = InterposerSpec(W, H, grid_resolution=32)
        chips = [ChipletSpec(0, 6, 6, 0.3, 1e6), ChipletSpec(1, 6, 6, 0.3, 1e6)]
        des = DesignInstance(ip, chips, [])
        pl = PlacementState([12.0, 30.0], [21.0, 21.0], [0.0, 0.0])
        sol = solve_thermal(des, pl, cfg, resolution=32)
        flipped = sol.values[:, ::-1]
        rel = np.abs(sol.values - flipped).max() / np.abs(sol.values - cfg.t_ambient).max()
        assert rel < 1e-6

    def test_mms_second_order(self):
        cfg = ThermalOracleConfig()
        e16 = thermal_mms(16, cfg)
        e32 = thermal_mms(32, cfg)
        assert e16 / e32 >= 3.5

    def test_linearity_in_power(self):
        cfg = ThermalOracleConfig()
        rng = np.random.default_rng(5)
        P = np.zeros((16, 16))
        P[4:9, 5:10] = rng.uniform(2e5, 9e5, (5, 5))
        a = solve_thermal_from_power(power_grid(16, P), cfg, W, H)
        b = solve_thermal_from_power(power_grid(16, 2 * P), cfg, W, H)
        da = a.values - cfg.t_ambient
        db = b.values - cfg.t_ambient
        assert np.abs(db - 2 * da).max() <= 1e-8 * np.abs(db).max() + 1e-10

    def test_peak_inside_footprint_for_single_chiplet(self):
        cfg = ThermalOracleConfig()
        ip = InterposerSpec(W, H, grid_resolution=32)
        des = DesignInstance(ip, [ChipletSpec(0, 8, 6, 0.3, 2e6)], [])
        pl = PlacementState([28.0], [14.0], [0.0])
        sol = solve_thermal(des, pl, cfg, resolution=32)
        iy, ix = np.unravel_index(sol.values.argmax(), sol.values.shape)
        xs, ys = sol.cell_centers()
        assert 24.0 <= xs[ix] <= 32.0 and 11.0 <= ys[iy] <= 17.0

    def test_non_convergence_raises_with_residual(self):
        cfg = ThermalOracleConfig(max_iter=3)
        P = np.zeros((16, 16))
        P[5, 5] = 1e6
        with pytest.raises(ConvergenceError) as err:
            solve_thermal_from_power(power_grid(16, P), cfg, W, H)
        assert err.value.residual > 0 and err.value.iterations == 3


class TestPlateSolver:
    def eigen(self, n, cfg):
        dx = W / n
        xs = (np.arange(n) + 0.5) * dx
        X, Y = np.meshgrid(xs, xs)
        S = np.sin(math.pi * X / W) * np.sin(math.pi * Y / H)
        w = solve_warpage(FieldGrid(n, n, dx, dx, cfg.t_ref + 50.0 * S), cfg)
        coef = (1 - cfg.nu) * cfg.alpha_cte / (cfg.e_modulus * cfg.h_plate ** 2)
        k2 = (math.pi / W) ** 2 + (math.pi / H) ** 2
        exact_um = -1e3 * coef * 50.0 / k2 * S
        return float(np.abs(w.values - exact_um).max())

    def test_zero_excursion_gives_zero_displacement(self):
        cfg = PlateOracleConfig()
        t = FieldGrid(16, 16, W / 16, H / 16, np.full((16, 16), cfg.t_ref))
        assert np.all(solve_warpage(t, cfg).values == 0.0)

    def test_eigenfunction_second_order(self):
        cfg = PlateOracleConfig()
        e32 = self.eigen(32, cfg)
        e64 = self.eigen(64, cfg)
        assert e32 / e64 >= 3.5

    def test_linearity_and_superposition(self):
        cfg = PlateOracleConfig()
        rng = np.random.default_rng(9)
        base = np.full((16, 16), cfg.t_ref)
        da = rng.uniform(0, 40, (16, 16))
        db = rng.uniform(0, 40, (16, 16))
        g = lambda v: FieldGrid(16, 16, W / 16, H / 16, v)
        wa = solve_warpage(g(base + da), cfg).values
        wb = solve_warpage(g(base + db), cfg).values
        wab = solve_warpage(g(base + da + db), cfg).values
        assert np.abs(wab - (wa + wb)).max() <= 1e-6 * max(np.abs(wab).max(), 1e-12)

    def test_uniform_scale(self):
        cfg = PlateOracleConfig()
        rng = np.random.default_rng(10)
        dt = rng.uniform(0, 30, (16, 16))
        g = lambda v: FieldGrid(16, 16, W / 16, H / 16, v)
        w1 = solve_warpage(g(cfg.t_ref + dt), cfg).values
        w3 = solve_warpage(g(cfg.t_ref + 3 * dt), cfg).values
        assert np.abs(w3 - 3 * w1).max() <= 1e-6 * np.abs(w3).max()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PlateOracleConfig(nu=0.7)
        with pytest.raises(ValueError):
            PlateOracleConfig(e_modulus=-1.0)
