"""Self-contained mixed-integer linear programming.

A small dense LP/MILP stack: linear problems over bounded continuous and
binary variables with <= and == rows, relaxations solved by a bounded-variable
primal simplex (explicit basis inverse, Dantzig pricing with a Bland fallback
once degeneracy stalls progress), and a best-first branch-and-bound over the
binaries with a rounding heuristic at the root.  Everything is deterministic:
ties break on the lowest variable index and no randomness enters the search.

Helpers cover the two linearizations the placement formulations need:
absolute values of affine expressions (valid under minimization) and products
of binary variables.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-7
INT_TOL = 1e-6
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-10


class MilpError(RuntimeError):
    pass


@dataclass
class MilpSolution:
    status: str                       # optimal | feasible_timeout | infeasible | unbounded
    values: np.ndarray | None         # per declared variable
    objective: float | None
    bound: float                      # proven lower bound (minimization)
    nodes: int
    problem: "MilpProblem"

    def __getitem__(self, var: int) -> float:
        return float(self.values[var])

    def value(self, coeffs: dict[int, float], const: float = 0.0) -> float:
        return const + sum(c * self.values[v] for v, c in coeffs.items())


class MilpProblem:
    """Minimization problem over continuous (bounded) and binary variables."""

    def __init__(self, name: str = "milp"):
        self.name = name
        self.var_names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.is_binary: list[bool] = []
        self.rows: list[tuple[dict[int, float], str, float]] = []   # (coeffs, sense, rhs)
        self.obj: dict[int, float] = {}
        self.obj_const = 0.0
        self.time_limit: float | None = None
        self.node_limit: int | None = None
        self.mip_gap: float = 1e-6
        self.hints: list[dict[int, float]] = []   # candidate binary assignments

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    def add_var(self, name: str | None = None, lb: float = 0.0, ub: float | None = None) -> int:
        if ub is None:
            ub = math.inf
        if not (lb <= ub):
            raise MilpError(f"variable {name}: lb {lb} > ub {ub}")
        if not math.isfinite(lb) and not math.isfinite(ub):
            raise MilpError(f"variable {name}: at least one finite bound required")
        self.var_names.append(name or f"x{len(self.var_names)}")
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.is_binary.append(False)
        return len(self.var_names) - 1

    def add_binary(self, name: str | None = None) -> int:
        idx = self.add_var(name or f"b{len(self.var_names)}", 0.0, 1.0)
        self.is_binary[idx] = True
        return idx

    def _check_coeffs(self, coeffs: dict[int, float]) -> dict[int, float]:
        for v in coeffs:
            if not (0 <= v < self.n_vars):
                raise MilpError(f"constraint references undeclared variable {v}")
        return {int(v): float(c) for v, c in coeffs.items() if c != 0.0}

    def add_le(self, coeffs: dict[int, float], rhs: float) -> None:
        self.rows.append((self._check_coeffs(coeffs), "<=", float(rhs)))

    def add_ge(self, coeffs: dict[int, float], rhs: float) -> None:
        self.add_le({v: -c for v, c in coeffs.items()}, -rhs)

    def add_eq(self, coeffs: dict[int, float], rhs: float) -> None:
        self.rows.append((self._check_coeffs(coeffs), "==", float(rhs)))

    def set_objective(self, coeffs: dict[int, float], const: float = 0.0) -> None:
        self.obj = self._check_coeffs(coeffs)
        self.obj_const = float(const)

    def add_objective_term(self, var: int, coeff: float) -> None:
        self.obj[var] = self.obj.get(var, 0.0) + coeff

    def add_abs(self, coeffs: dict[int, float], const: float = 0.0,
                name: str | None = None) -> int:
        """Variable t >= |coeffs . x + const|; exact when t is minimized."""
        t = self.add_var(name or f"abs{len(self.var_names)}", 0.0, math.inf)
        row = self._check_coeffs(coeffs)
        self.add_le({**row, t: -1.0}, -const)                       # expr - t <= 0
        self.add_le({**{v: -c for v, c in row.items()}, t: -1.0}, const)   # -expr - t <= 0
        return t

    def add_binary_product(self, u: int, v: int, name: str | None = None) -> int:
        """Binary z = u*v via the standard three-inequality linearization."""
        if not (self.is_binary[u] and self.is_binary[v]):
            raise MilpError("add_binary_product requires binary operands")
        z = self.add_binary(name or f"z{len(self.var_names)}")
        self.add_le({z: 1.0, u: -1.0}, 0.0)
        self.add_le({z: 1.0, v: -1.0}, 0.0)
        self.add_le({u: 1.0, v: 1.0, z: -1.0}, 1.0)
        return z

    # -- LP text dump (objective, subject-to, bounds, binary sections) --
    def dump_lp(self) -> str:
        def expr(coeffs):
            parts = []
            for v in sorted(coeffs):
                c = coeffs[v]
                sign = "-" if c < 0 else "+"
                parts.append(f"{sign} {abs(c):.12g} {self.var_names[v]}")
            if parts and parts[0].startswith("+"):
                parts[0] = parts[0][2:]
            return " ".join(parts) if parts else "0"

        lines = ["Minimize", f" obj: {expr(self.obj)}", "Subject To"]
        for k, (coeffs, sense, rhs) in enumerate(self.rows):
            op = "<=" if sense == "<=" else "="
            lines.append(f" c{k}: {expr(coeffs)} {op} {rhs:.12g}")
        lines.append("Bounds")
        for v in range(self.n_vars):
            if self.is_binary[v]:
                continue
            lo = f"{self.lb[v]:.12g}" if math.isfinite(self.lb[v]) else "-inf"
            hi = f"{self.ub[v]:.12g}" if math.isfinite(self.ub[v]) else "+inf"
            lines.append(f" {lo} <= {self.var_names[v]} <= {hi}")
        binaries = [self.var_names[v] for v in range(self.n_vars) if self.is_binary[v]]
        if binaries:
            lines.append("Binary")
            lines.extend(f" {nm}" for nm in binaries)
        lines.append("End")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# bounded-variable primal simplex
# ---------------------------------------------------------------------------

_AT_LB, _AT_UB, _BASIC = 0, 1, 2


class _Simplex:
    """Dense two-phase bounded-variable primal simplex."""

    def __init__(self, A: np.ndarray, b: np.ndarray, lb: np.ndarray, ub: np.ndarray):
        self.m, n = A.shape
        # append artificial columns (identity signs fixed after residuals known)
        self.A = np.hstack([A, np.eye(self.m)])
        self.lb = np.concatenate([lb, np.zeros(self.m)])
        self.ub = np.concatenate([ub, np.full(self.m, math.inf)])
        self.n_struct = n
        self.b = b.astype(float)
        self.status = np.full(n + self.m, _AT_LB, dtype=np.int8)
        self.x = np.where(np.isfinite(self.lb), self.lb, self.ub)
        self.x[n:] = 0.0
        for j in range(n):
            if not math.isfinite(lb[j]):
                self.status[j] = _AT_UB
        self.basis = list(range(n, n + self.m))
        self.status[n:] = _BASIC
        resid = self.b - self.A[:, :n] @ self.x[:n]
        signs = np.where(resid >= 0.0, 1.0, -1.0)
        self.A[:, n:] = np.diag(signs)
        self.x[n:] = np.abs(resid)
        self.binv = np.diag(signs)   # inverse of the artificial basis
        self.pivots = 0

    def _xb(self) -> np.ndarray:
        return self.x[self.basis]

    def _refresh(self):
        B = self.A[:, self.basis]
        try:
            self.binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise MilpError("singular basis during simplex refactorization") from exc
        nonbasic_mask = self.status != _BASIC
        xn_contrib = self.A[:, nonbasic_mask] @ self.x[nonbasic_mask]
        self.x[self.basis] = self.binv @ (self.b - xn_contrib)

    def _iterate(self, c: np.ndarray, allow: np.ndarray, max_iter: int = 50000) -> str:
        """Run simplex with cost c; allow masks columns that may enter."""
        degenerate_streak = 0
        bland = False
        for _ in range(max_iter):
            cb = c[self.basis]
            y = cb @ self.binv
            d = c - y @ self.A
            movable = allow & (self.ub - self.lb > PIVOT_TOL)
            at_lb = (self.status == _AT_LB) & movable
            at_ub = (self.status == _AT_UB) & movable
            can_enter = (at_lb & (d < -DUAL_TOL)) | (at_ub & (d > DUAL_TOL))
            if not can_enter.any():
                return "optimal"
            if bland:
                j = int(np.flatnonzero(can_enter)[0])
            else:
                score = np.where(can_enter, np.abs(d), -1.0)
                j = int(np.argmax(score))
            sigma = 1.0 if self.status[j] == _AT_LB else -1.0
            w = self.binv @ self.A[:, j]
            xb = self.x[self.basis]
            lbb = self.lb[self.basis]
            ubb = self.ub[self.basis]
            delta = sigma * w
            with np.errstate(divide="ignore", invalid="ignore"):
                up = np.where(delta > PIVOT_TOL, (xb - lbb) / delta, math.inf)
                dn = np.where(delta < -PIVOT_TOL, (ubb - xb) / (-delta), math.inf)
            ratios = np.minimum(up, dn)
            ratios = np.where(np.isnan(ratios), math.inf, ratios)
            t_ratio = float(ratios.min()) if ratios.size else math.inf
            t_bound = self.ub[j] - self.lb[j]
            t_star = min(t_ratio, t_bound)
            if math.isinf(t_star):
                return "unbounded"
            t_star = max(t_star, 0.0)
            if t_star <= PIVOT_TOL:
                degenerate_streak += 1
                if degenerate_streak > 40:
                    bland = True
            else:
                degenerate_streak = 0
                bland = False
            if t_bound <= t_ratio:
                # bound flip, basis unchanged
                self.x[self.basis] = xb - delta * t_star
                self.x[j] = self.ub[j] if sigma > 0 else self.lb[j]
                self.status[j] = _AT_UB if sigma > 0 else _AT_LB
                continue
            tie = np.flatnonzero(ratios <= t_star + PIVOT_TOL)
            basis_arr = np.asarray(self.basis)
            r = int(tie[np.argmin(basis_arr[tie])])        # Bland-style leaving tie-break
            leave = self.basis[r]
            self.x[self.basis] = xb - delta * t_star
            self.x[j] = (self.lb[j] if sigma > 0 else self.ub[j]) + sigma * t_star
            # leaving variable rests at whichever bound it hit
            hit_lb = delta[r] > 0
            self.x[leave] = self.lb[leave] if hit_lb else self.ub[leave]
            self.status[leave] = _AT_LB if hit_lb else _AT_UB
            self.status[j] = _BASIC
            self.basis[r] = j
            # eta update of the explicit inverse
            piv = w[r]
            if abs(piv) < 1e-12:
                raise MilpError("numerically singular pivot")
            row_r = self.binv[r] / piv
            self.binv -= np.outer(w, row_r)
            self.binv[r] = row_r
            self.pivots += 1
            if self.pivots % 64 == 0:
                self._refresh()
        raise MilpError("simplex iteration limit exceeded")

    def solve(self, c_struct: np.ndarray) -> tuple[str, np.ndarray | None, float]:
        n, m = self.n_struct, self.m
        allow = np.ones(n + m, dtype=bool)
        c1 = np.concatenate([np.zeros(n), np.ones(m)])
        st = self._iterate(c1, allow)
        if st != "optimal":
            raise MilpError("phase-1 simplex did not terminate cleanly")
        self._refresh()
        infeas = float(self.x[n:].sum())
        if infeas > FEAS_TOL * (1.0 + float(np.abs(self.b).max(initial=0.0))):
            return "infeasible", None, math.inf
        # pin artificials at zero and never let them re-enter
        self.ub[n:] = 0.0
        self.x[n:] = np.maximum(self.x[n:], 0.0)
        allow[n:] = False
        c2 = np.concatenate([c_struct, np.zeros(m)])
        st = self._iterate(c2, allow)
        if st == "unbounded":
            return "unbounded", None, -math.inf
        self._refresh()
        x = self.x[:n].copy()
        np.clip(x, self.lb[:n], self.ub[:n], out=x)
        return "optimal", x, float(c_struct @ x)


def _build_arrays(p: MilpProblem):
    n = p.n_vars
    n_slack = sum(1 for _, sense, _ in p.rows if sense == "<=")
    m = len(p.rows)
    A = np.zeros((m, n + n_slack))
    b = np.zeros(m)
    si = n
    for i, (coeffs, sense, rhs) in enumerate(p.rows):
        for v, c in coeffs.items():
            A[i, v] = c
        b[i] = rhs
        if sense == "<=":
            A[i, si] = 1.0
            si += 1
    lb = np.concatenate([np.array(p.lb), np.zeros(n_slack)])
    ub = np.concatenate([np.array(p.ub), np.full(n_slack, math.inf)])
    c = np.zeros(n + n_slack)
    for v, coef in p.obj.items():
        c[v] = coef
    return A, b, c, lb, ub


def _lp(A, b, c, lb, ub):
    sx = _Simplex(A, b, lb.copy(), ub.copy())
    return sx.solve(c)


def solve(problem: MilpProblem, seed: int = 0) -> MilpSolution:
    """Best-first branch-and-bound over the binaries.

    Deterministic for any seed (the search itself has no random choices; the
    argument is kept for interface stability).  Branches on the most
    fractional binary, lowest index on ties; a rounding heuristic at the root
    provides the first incumbent.  Time/node limits return the incumbent with
    status feasible_timeout.
    """
    del seed
    A, b, c, lb, ub = _build_arrays(problem)
    nvars = problem.n_vars
    bin_idx = np.array([v for v in range(nvars) if problem.is_binary[v]], dtype=int)
    t0 = time.monotonic()
    nodes = 0

    def out_of_budget() -> bool:
        if problem.time_limit is not None and time.monotonic() - t0 > problem.time_limit:
            return True
        if problem.node_limit is not None and nodes > problem.node_limit:
            return True
        return False

    status, x, obj = _lp(A, b, c, lb, ub)
    nodes += 1
    if status == "infeasible":
        return MilpSolution("infeasible", None, None, math.inf, nodes, problem)
    if status == "unbounded":
        return MilpSolution("unbounded", None, None, -math.inf, nodes, problem)

    incumbent = None
    incumbent_obj = math.inf

    def frac(xv):
        if bin_idx.size == 0:
            return np.array([])
        f = xv[bin_idx]
        return np.minimum(f - np.floor(f), np.ceil(f) - f)

    def consider(xv, objv):
        nonlocal incumbent, incumbent_obj
        if objv < incumbent_obj - 1e-12:
            xv = xv.copy()
            xv[bin_idx] = np.round(xv[bin_idx])
            incumbent, incumbent_obj = xv, float(c @ xv)

    def integral(xv) -> bool:
        return bin_idx.size == 0 or bool(np.all(frac(xv) <= INT_TOL))

    # rounding heuristic at the root, seeded by any caller-provided hints
    if bin_idx.size:
        candidates = [{int(v): val for v, val in h.items()} for h in problem.hints]
        if not integral(x):
            candidates.append({int(v): float(r) for v, r in zip(bin_idx, np.round(x[bin_idx]))})
        for cand in candidates:
            rlb, rub = lb.copy(), ub.copy()
            for v, val in cand.items():
                rlb[v] = val
                rub[v] = val
            st_h, x_h, obj_h = _lp(A, b, c, rlb, rub)
            nodes += 1
            if st_h == "optimal" and integral(x_h):
                consider(x_h, obj_h)
    heap: list = []
    counter = 0
    if integral(x):
        consider(x, obj)
    else:
        heap.append((obj, counter, lb, ub, x))

    timed_out = False
    while heap:
        bound = heap[0][0]
        tol = problem.mip_gap * (1.0 + abs(incumbent_obj)) if incumbent is not None else 0.0
        if incumbent is not None and bound >= incumbent_obj - tol:
            break
        if out_of_budget():
            timed_out = True
            break
        _, _, nlb, nub, nx = heapq.heappop(heap)
        f = frac(nx)
        j = int(bin_idx[int(np.argmax(f))])
        for val in (0.0, 1.0):
            clb, cub = nlb.copy(), nub.copy()
            clb[j] = val
            cub[j] = val
            st_c, x_c, obj_c = _lp(A, b, c, clb, cub)
            nodes += 1
            if st_c != "optimal":
                continue
            if integral(x_c):
                consider(x_c, obj_c)
            elif incumbent is None or obj_c < incumbent_obj - 1e-12:
                counter += 1
                heapq.heappush(heap, (obj_c, counter, clb, cub, x_c))

    open_bound = min((h[0] for h in heap), default=math.inf)
    if incumbent is None:
        if timed_out:
            return MilpSolution("feasible_timeout", None, None, open_bound, nodes, problem)
        return MilpSolution("infeasible", None, None, math.inf, nodes, problem)
    proven = min(open_bound, incumbent_obj)
    status_out = "feasible_timeout" if (timed_out and open_bound < incumbent_obj
                                        - problem.mip_gap * (1 + abs(incumbent_obj))) else "optimal"
    return MilpSolution(status_out, incumbent[:nvars], incumbent_obj + problem.obj_const,
                        proven + problem.obj_const, nodes, problem)
