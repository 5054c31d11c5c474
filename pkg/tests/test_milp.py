import itertools
import math

import numpy as np
import pytest

from chipletplace.milp import MilpError, MilpProblem, solve


def enumeration_oracle(p: MilpProblem) -> float:
    """Exhaustive branch over binary assignments, LP on the continuous rest."""
    nb = [v for v in range(p.n_vars) if p.is_binary[v]]
    best = math.inf
    for assign in itertools.product([0.0, 1.0], repeat=len(nb)):
        q = MilpProblem()
        q.var_names = list(p.var_names)
        q.lb = list(p.lb)
        q.ub = list(p.ub)
        q.is_binary = [False] * p.n_vars
        q.rows = list(p.rows)
        q.obj = dict(p.obj)
        for v, a in zip(nb, assign):
            q.lb[v] = a
            q.ub[v] = a
        s = solve(q)
        if s.status == "optimal":
            best = min(best, s.objective)
    return best


class TestLinearProgramming:
    def test_corner_solution(self):
        p = MilpProblem()
        x = p.add_var("x", 0, 3)
        p.set_objective({x: -1.0})
        s = solve(p)
        assert s.status == "optimal" and s[x] == pytest.approx(3.0)

    def test_infeasible(self):
        p = MilpProblem()
        x = p.add_var("x", 0, 10)
        y = p.add_var("y", 0, 10)
        p.add_le({x: 1, y: 1}, 1.0)
        p.add_ge({x: 1}, 2.0)
        p.set_objective({x: 1.0})
        assert solve(p).status == "infeasible"

    def test_unbounded(self):
        p = MilpProblem()
        x = p.add_var("x", 0, None)
        p.set_objective({x: -1.0})
        assert solve(p).status == "unbounded"

    def test_equality_rows(self):
        p = MilpProblem()
        x = p.add_var("x", 0, 10)
        y = p.add_var("y", 0, 10)
        p.add_eq({x: 1, y: 1}, 7.0)
        p.set_objective({x: 2.0, y: 1.0})
        s = solve(p)
        assert s.objective == pytest.approx(7.0)
        assert s[x] == pytest.approx(0.0) and s[y] == pytest.approx(7.0)


class TestAbsHelper:
    def test_fixed_positive(self):
        p = MilpProblem()
        x = p.add_var("x", 3, 3)
        t = p.add_abs({x: 1.0})
        p.set_objective({t: 1.0})
        assert solve(p)[t] == pytest.approx(3.0)

    def test_fixed_negative(self):
        p = MilpProblem()
        x = p.add_var("x", -3, -3)
        t = p.add_abs({x: 1.0})
        p.set_objective({t: 1.0})
        assert solve(p)[t] == pytest.approx(3.0)

    def test_free_range_settles_at_zero(self):
        p = MilpProblem()
        x = p.add_var("x", -1, 2)
        t = p.add_abs({x: 1.0})
        p.set_objective({t: 1.0})
        assert solve(p)[t] == pytest.approx(0.0, abs=1e-8)

    def test_affine_constant(self):
        p = MilpProblem()
        x = p.add_var("x", 0, 0)
        t = p.add_abs({x: 1.0}, const=-4.0)
        p.set_objective({t: 1.0})
        assert solve(p)[t] == pytest.approx(4.0)


class TestBinaryProduct:
    @pytest.mark.parametrize("u0,v0", list(itertools.product([0, 1], [0, 1])))
    def test_truth_table(self, u0, v0):
        # minimize +z and -z: both must pin z to u*v
        for sign in (1.0, -1.0):
            p = MilpProblem()
            u = p.add_binary("u")
            v = p.add_binary("v")
            p.add_eq({u: 1.0}, u0)
            p.add_eq({v: 1.0}, v0)
            z = p.add_binary_product(u, v)
            p.set_objective({z: sign})
            assert solve(p)[z] == pytest.approx(u0 * v0, abs=1e-6)

    def test_requires_binaries(self):
        p = MilpProblem()
        x = p.add_var("x", 0, 1)
        u = p.add_binary("u")
        with pytest.raises(MilpError):
            p.add_binary_product(x, u)


class TestBranchAndBound:
    def test_knapsack_vs_enumeration(self):
        rng = np.random.default_rng(3)
        w = rng.integers(1, 5, 5)
        val = rng.integers(1, 10, 5)
        p = MilpProblem()
        bs = [p.add_binary(f"u{i}") for i in range(5)]
        p.add_le({bs[i]: float(w[i]) for i in range(5)}, 7.0)
        p.set_objective({bs[i]: -float(val[i]) for i in range(5)})
        s = solve(p)
        ref = min(-sum(val[i] * sel[i] for i in range(5))
                  for sel in itertools.product([0, 1], repeat=5)
                  if sum(w[i] * sel[i] for i in range(5)) <= 7)
        assert s.status == "optimal" and s.objective == pytest.approx(ref, abs=1e-9)

    def test_random_problems_match_enumeration(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            nb = int(rng.integers(2, 7))
            nc = int(rng.integers(1, 4))
            p = MilpProblem()
            bs = [p.add_binary() for _ in range(nb)]
            cs = [p.add_var(lb=float(rng.uniform(-3, 0)), ub=float(rng.uniform(0.5, 4)))
                  for _ in range(nc)]
            av = bs + cs
            for _ in range(int(rng.integers(2, 6))):
                coeffs = {v: float(rng.normal()) for v in av if rng.random() < 0.7}
                if coeffs:
                    p.add_le(coeffs, float(rng.uniform(-1, 3)))
            p.set_objective({v: float(rng.normal()) for v in av})
            s = solve(p)
            ref = enumeration_oracle(p)
            if s.status == "optimal":
                assert s.objective == pytest.approx(ref, abs=1e-6 * (1 + abs(ref)))
            else:
                assert s.status == "infeasible" and ref == math.inf

    def test_bound_never_exceeds_incumbent(self):
        p = MilpProblem()
        bs = [p.add_binary() for _ in range(6)]
        p.add_le({b: 1.0 for b in bs}, 3.0)
        p.set_objective({b: -1.0 - 0.1 * i for i, b in enumerate(bs)})
        s = solve(p)
        assert s.status == "optimal"
        assert s.bound <= s.objective + 1e-9

    def test_determinism(self):
        def build():
            rng = np.random.default_rng(5)
            p = MilpProblem()
            bs = [p.add_binary() for _ in range(8)]
            cs = [p.add_var(lb=0.0, ub=2.0) for _ in range(2)]
            for _ in range(5):
                coeffs = {v: float(rng.normal()) for v in bs + cs if rng.random() < 0.6}
                if coeffs:
                    p.add_le(coeffs, float(rng.uniform(0, 3)))
            p.set_objective({v: float(rng.normal()) for v in bs + cs})
            return p

        a = solve(build(), seed=1)
        b = solve(build(), seed=1)
        assert a.nodes == b.nodes
        assert a.objective == b.objective
        assert np.array_equal(a.values, b.values)

    def test_node_limit_returns_incumbent(self):
        rng = np.random.default_rng(9)
        p = MilpProblem()
        bs = [p.add_binary() for _ in range(16)]
        for _ in range(10):
            coeffs = {b: float(rng.uniform(-1, 1)) for b in bs}
            p.add_le(coeffs, float(rng.uniform(0.5, 2)))
        p.set_objective({b: float(rng.normal()) for b in bs})
        p.node_limit = 5
        s = solve(p)
        assert s.status in ("optimal", "feasible_timeout")
        if s.status == "feasible_timeout":
            assert s.values is not None or s.bound > -math.inf

    def test_integrality_of_solution(self):
        p = MilpProblem()
        u = p.add_binary("u")
        x = p.add_var("x", 0, 1.5)
        p.add_le({u: 1.0, x: 1.0}, 1.8)
        p.set_objective({u: -1.0, x: -1.0})
        s = solve(p)
        assert abs(s[u] - round(s[u])) <= 1e-6


class TestLpDump:
    def test_sections_present(self):
        p = MilpProblem()
        x = p.add_var("x", 0, 5)
        u = p.add_binary("u")
        p.add_le({x: 1.0, u: 2.0}, 4.0)
        p.add_eq({x: 1.0}, 2.0)
        p.set_objective({x: 1.0, u: -3.0})
        text = p.dump_lp()
        for section in ("Minimize", "Subject To", "Bounds", "Binary", "End"):
            assert section in text
        assert "2 u" in text and "<= 4" in text
