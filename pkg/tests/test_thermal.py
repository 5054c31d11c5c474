import math

import numpy as np
import pytest
from scipy.integrate import quad

from chipletplace.fields import field_mae, field_pearson
from chipletplace.fitting import FitConfig
from chipletplace.model import ChipletSpec, DesignInstance, InterposerSpec, PlacementState
from chipletplace.thermal import (CompactThermalParams, aux_f, aux_f_grad, eval_tc,
                                  eval_tc_points, fit_thermal, grad_tc)


def quad_aux_f(a, b, c):
    """Independent oracle: adaptive quadrature of the defining integral.

    The x -> 0 limit of erf(bx)erf(cx)/x^2 is 4bc/pi; below 1e-3 the integrand
    is integrated by series, above by scipy quadrature.
    """
    x0 = 1e-3
    head = (4 * b * c / math.pi) * (x0 - (a * a + (b * b + c * c) / 3) * x0 ** 3 / 3)

    def f(x):
        return math.exp(-(a * x) ** 2) * math.erf(b * x) * math.erf(c * x) / (x * x)

    tail, _ = quad(f, x0, np.inf, epsabs=1e-13, epsrel=1e-11, limit=400)
    return head + tail


class TestAuxF:
    def test_zero_argument(self):
        for a in (0.3, 1.0, 4.0):
            assert aux_f(a, 0.0, 2.0) == 0.0
            assert aux_f(a, -1.5, 0.0) == 0.0

    def test_symmetry_in_bc(self):
        rng = np.random.default_rng(0)
        for _ in range(40):
            a = rng.uniform(0.05, 5)
            b, c = rng.uniform(-5, 5, 2)
            assert aux_f(a, b, c) == pytest.approx(aux_f(a, c, b), rel=1e-14, abs=1e-300)

    def test_against_quadrature_unit_point(self):
        ref = quad_aux_f(1.0, 1.0, 1.0)
        assert float(aux_f(1.0, 1.0, 1.0)) == pytest.approx(ref, rel=1e-6)

    def test_against_quadrature_grid(self):
        worst = 0.0
        for a in (0.1, 0.5, 1.0, 2.0, 5.0):
            for b in (-5.0, -1.0, 0.5, 2.0, 5.0):
                for c in (-4.0, -0.5, 1.0, 3.0, 5.0):
                    ref = quad_aux_f(a, b, c)
                    got = float(aux_f(a, b, c))
                    worst = max(worst, abs(got - ref) / max(abs(ref), 1e-12))
        assert worst <= 1e-6

    def test_domain_error(self):
        with pytest.raises(ValueError):
            aux_f(0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            aux_f(-1.0, 1.0, 1.0)

    def test_odd_in_each_argument(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = rng.uniform(0.1, 3)
            b, c = rng.uniform(0.1, 4, 2)
            assert aux_f(a, -b, c) == pytest.approx(-aux_f(a, b, c), rel=1e-13)


class TestAuxFGrad:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(60):
            a = rng.uniform(0.05, 5)
            b, c = rng.uniform(-5, 5, 2)
            fa, fb, fc = (float(v) for v in aux_f_grad(a, b, c))
            h = 1e-6
            nfa = (float(aux_f(a + h, b, c)) - float(aux_f(a - h, b, c))) / (2 * h)
            nfb = (float(aux_f(a, b + h, c)) - float(aux_f(a, b - h, c))) / (2 * h)
            nfc = (float(aux_f(a, b, c + h)) - float(aux_f(a, b, c - h))) / (2 * h)
            for an, nu in ((fa, nfa), (fb, nfb), (fc, nfc)):
                assert abs(an - nu) <= 1e-6 * max(1.0, abs(nu))

    def test_db_at_b_zero(self):
        _, fb, _ = aux_f_grad(1.0, 0.0, 1.0)
        h = 1e-6
        nfb = (float(aux_f(1.0, h, 1.0)) - float(aux_f(1.0, -h, 1.0))) / (2 * h)
        assert float(fb) == pytest.approx(nfb, rel=1e-6)

    def test_symmetry(self):
        _, fb, _ = aux_f_grad(1.2, 0.7, -2.1)
        _, _, fc = aux_f_grad(1.2, -2.1, 0.7)
        assert float(fb) == pytest.approx(float(fc), rel=1e-14)

    def test_origin_gradient_is_zero(self):
        fa, fb, fc = aux_f_grad(2.0, 0.0, 0.0)
        assert (float(fa), float(fb), float(fc)) == (0.0, 0.0, 0.0)

    def test_da_nonpositive_for_positive_args(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            fa, _, _ = aux_f_grad(rng.uniform(0.05, 5), rng.uniform(0.01, 5), rng.uniform(0.01, 5))
            assert float(fa) <= 0.0


def make_design(n, seed=0, w=20.0, h=16.0, res=20):
    rng = np.random.default_rng(seed)
    ip = InterposerSpec(w, h, grid_resolution=res)
    chips = [ChipletSpec(i, rng.uniform(2, 4), rng.uniform(2, 4), rng.uniform(0.2, 0.6),
                         rng.uniform(2e5, 3e6)) for i in range(n)]
    return DesignInstance(ip, chips, [])


def make_params(n, seed=0, amp=2e-6):
    rng = np.random.default_rng(seed + 100)
    return CompactThermalParams(amp, 0.4, 25.0, rng.uniform(0.8, 2.5, n), rng.uniform(0.8, 2.5, n))


class TestEvalTc:
    def test_empty_design_is_bias(self):
        des = make_design(0)
        pr = CompactThermalParams(1e-6, 0.5, 31.5, np.empty(0), np.empty(0))
        pl = PlacementState([], [], [])
        assert np.all(eval_tc(pr, des, pl).values == 31.5)

    def test_single_square_chiplet_symmetric(self):
        ip = InterposerSpec(16.0, 16.0, grid_resolution=24)
        des = DesignInstance(ip, [ChipletSpec(0, 4.0, 4.0, 0.3, 1e6)], [])
        pr = CompactThermalParams(2e-6, 0.4, 25.0, [1.5], [1.5])
        pl = PlacementState([8.0], [8.0], [0.0])
        grid = eval_tc(pr, des, pl)
        assert np.abs(grid.values - grid.values.T).max() <= 1e-10

    def test_argmax_at_chiplet_center(self):
        ip = InterposerSpec(16.0, 16.0, grid_resolution=32)
        des = DesignInstance(ip, [ChipletSpec(0, 4.0, 4.0, 0.3, 1e6)], [])
        pr = CompactThermalParams(2e-6, 0.4, 25.0, [1.5], [1.5])
        pl = PlacementState([8.25, ], [8.25], [0.0])
        grid = eval_tc(pr, des, pl)
        iy, ix = np.unravel_index(grid.values.argmax(), grid.values.shape)
        xs, ys = grid.cell_centers()
        assert xs[ix] == pytest.approx(8.25, abs=grid.dx)
        assert ys[iy] == pytest.approx(8.25, abs=grid.dy)

    def test_grid_matches_pointwise_path(self, quad_design, quad_state):
        pr = make_params(4)
        grid = eval_tc(pr, quad_design, quad_state)
        xs, ys = grid.cell_centers()
        X, Y = np.meshgrid(xs, ys)
        pts = eval_tc_points(pr, quad_design, quad_state,
                             np.stack([X.ravel(), Y.ravel()], axis=1))
        assert np.abs(grid.values - pts.reshape(grid.ny, grid.nx)).max() <= 1e-10

    def test_linear_in_power_density(self, quad_design, quad_state):
        pr = make_params(4)
        base = eval_tc(pr, quad_design, quad_state).values
        chips = list(quad_design.chiplets)
        c1 = chips[1]
        chips[1] = ChipletSpec(1, c1.width, c1.height, c1.thickness, 3.0 * c1.power_density)
        des2 = DesignInstance(quad_design.interposer, chips, [])
        scaled = eval_tc(pr, des2, quad_state).values
        # only chiplet 1's four-term contribution scales, exactly
        single = DesignInstance(quad_design.interposer, [ChipletSpec(0, c1.width, c1.height,
                                                                     c1.thickness,
                                                                     c1.power_density)], [])
        pr1 = CompactThermalParams(pr.amplitude, pr.decay, 0.0, pr.lx[1:2], pr.ly[1:2])
        one = eval_tc(pr1, single, PlacementState(quad_state.x[1:2], quad_state.y[1:2],
                                                  quad_state.theta[1:2])).values
        assert np.abs((scaled - base) - 2.0 * one).max() <= 1e-9 * np.abs(scaled).max()

    def test_permutation_invariance(self):
        des = make_design(3, seed=4)
        pr = make_params(3, seed=4)
        rng = np.random.default_rng(5)
        pl = PlacementState(rng.uniform(4, 14, 3), rng.uniform(4, 12, 3), [0.0, 90.0, 270.0])
        base = eval_tc(pr, des, pl).values
        perm = [2, 0, 1]
        chips = [ChipletSpec(k, des.chiplets[p].width, des.chiplets[p].height,
                             des.chiplets[p].thickness, des.chiplets[p].power_density)
                 for k, p in enumerate(perm)]
        des_p = DesignInstance(des.interposer, chips, [])
        pr_p = CompactThermalParams(pr.amplitude, pr.decay, pr.bias,
                                    pr.lx[perm], pr.ly[perm])
        pl_p = PlacementState(pl.x[perm], pl.y[perm], pl.theta[perm])
        assert np.abs(eval_tc(pr_p, des_p, pl_p).values - base).max() <= 1e-12 * np.abs(base).max()

    def test_size_mismatch_rejected(self, quad_design, quad_state):
        pr = make_params(3)
        with pytest.raises(ValueError, match="sized"):
            eval_tc(pr, quad_design, quad_state)


class TestGradTc:
    def test_matches_central_differences(self, quad_design):
        rng = np.random.default_rng(8)
        pr = make_params(4)
        worst = 0.0
        for _ in range(20):
            pl = PlacementState(rng.uniform(4, 16, 4), rng.uniform(4, 12, 4),
                                rng.choice([0.0, 90.0, 180.0, 270.0], 4))
            g = grad_tc(pr, quad_design, pl)
            h = 1e-5
            for i in range(4):
                for attr, arr in (("d_dx", "x"), ("d_dy", "y")):
                    pp, pm = pl.copy(), pl.copy()
                    getattr(pp, arr)[i] += h
                    getattr(pm, arr)[i] -= h
                    fd = (eval_tc(pr, quad_design, pp).values
                          - eval_tc(pr, quad_design, pm).values) / (2 * h)
                    scale = np.abs(fd).max()
                    if scale > 0:
                        worst = max(worst, np.abs(getattr(g, attr)[i] - fd).max() / scale)
        assert worst <= 1e-4

    def test_symmetric_center_gradient_vanishes(self):
        ip = InterposerSpec(16.0, 16.0, grid_resolution=21)   # odd: center cell exists
        des = DesignInstance(ip, [ChipletSpec(0, 4.0, 4.0, 0.3, 1e6)], [])
        pr = CompactThermalParams(2e-6, 0.4, 25.0, [1.5], [1.5])
        pl = PlacementState([8.0], [8.0], [0.0])
        g = grad_tc(pr, des, pl, resolution=21)
        center = g.d_dx[0][10, 10]
        assert abs(center) < 1e-12

    def test_far_field_gradient_negligible(self):
        # position gradients decay algebraically: at ~1e8 die-widths every
        # query point's gradient drops below 1e-8 of the near-field peak
        pr = CompactThermalParams(2e-6, 0.4, 25.0, [1.0], [1.0])
        near_ip = InterposerSpec(16.0, 16.0, grid_resolution=16)
        near = DesignInstance(near_ip, [ChipletSpec(0, 2.0, 2.0, 0.3, 1e6)], [])
        g_near = grad_tc(pr, near, PlacementState([8.0], [8.0], [0.0]))
        peak = max(np.abs(g_near.d_dx[0]).max(), np.abs(g_near.d_dy[0]).max())
        side = 4.0e9
        far_ip = InterposerSpec(side, side, grid_resolution=16)
        far = DesignInstance(far_ip, [ChipletSpec(0, 2.0, 2.0, 0.3, 1e6)], [])
        # die sits millimeters from the nearest cell center of a 2.5e8 mm grid
        g_far = grad_tc(pr, far, PlacementState([side / 2], [side / 2], [0.0]))
        far_mag = max(np.abs(g_far.d_dx[0]).max(), np.abs(g_far.d_dy[0]).max())
        assert far_mag < 1e-8 * peak


class TestFitThermal:
    def oracle_like(self, n=3, samples=4, seed=11):
        des = make_design(n, seed=seed, res=16)
        truth = make_params(n, seed=seed)
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(samples):
            pl = PlacementState(rng.uniform(3, 17, n), rng.uniform(3, 13, n),
                                rng.choice([0.0, 90.0, 180.0, 270.0], n))
            out.append((pl, eval_tc(truth, des, pl)))
        return des, truth, out

    def test_self_fit_recovers_field(self):
        des, truth, samples = self.oracle_like()
        params, report = fit_thermal(des, samples, FitConfig(iterations=3500), seed=0)
        for pl, label in samples:
            pred = eval_tc(params, des, pl, resolution=label.nx)
            assert field_mae(pred, label) < 0.01

    def test_constant_offset_absorbed_by_bias(self):
        des, truth, samples = self.oracle_like(seed=13)
        p0, _ = fit_thermal(des, samples, FitConfig(iterations=800), seed=0)
        shifted = [(pl, f.copy_with(f.values + 10.0)) for pl, f in samples]
        p1, _ = fit_thermal(des, shifted, FitConfig(iterations=800), seed=0)
        m0 = np.mean([field_mae(eval_tc(p0, des, pl, resolution=f.nx), f) for pl, f in samples])
        m1 = np.mean([field_mae(eval_tc(p1, des, pl, resolution=f.nx), f) for pl, f in shifted])
        assert p1.bias - p0.bias == pytest.approx(10.0, abs=0.5)
        assert m1 <= m0 + 0.02

    def test_requires_two_samples(self):
        des, _, samples = self.oracle_like()
        with pytest.raises(ValueError):
            fit_thermal(des, samples[:1])

    def test_params_round_trip(self, tmp_path):
        p = make_params(3)
        path = tmp_path / "p.json"
        p.save(path)
        q = CompactThermalParams.load(path)
        assert q.amplitude == p.amplitude and np.array_equal(q.lx, p.lx)

    def test_positivity_enforced(self):
        with pytest.raises(ValueError):
            CompactThermalParams(1e-6, -0.1, 25.0, [1.0], [1.0])
        with pytest.raises(ValueError):
            CompactThermalParams(1e-6, 0.1, 25.0, [-1.0], [1.0])
