"""Exact solver for bounded-integer linear programs.

Every optimization model in this package compiles down to a
:class:`MilpProblem` and is solved here: LP relaxation by the bounded
primal simplex, then branch and bound with warm-started dual-simplex
re-solves. Branching picks the most fractional integer variable (lowest
index on ties); node selection is best bound with depth-first plunging.
All tie-breaking is pinned, so node counts and solutions are reproducible.

The solver interface is pluggable: anything matching
``solver(problem, limits) -> MilpSolution`` can stand in for :func:`solve`
in the model-building layers, for example to cross-check against an
external MILP engine.
"""

from __future__ import annotations

import enum
import heapq
import math
import time
from dataclasses import dataclass

import numpy as np

from .simplex import FEASTOL, LpStatus, SimplexState, SingularBasisError

INT_TOL = 1e-6
DEFAULT_ABS_GAP = 1e-6


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    GAP_LIMIT = "gap_limit"


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearConstraint:
    """Sparse row: sum(coeffs[k] * x[indices[k]]) <relation> rhs."""

    indices: tuple[int, ...]
    coeffs: tuple[float, ...]
    relation: str  # '<=', '=', '>='
    rhs: float
    name: str = ""

    @staticmethod
    def from_dict(terms: dict[int, float], relation: str, rhs: float,
                  name: str = "") -> "LinearConstraint":
        items = sorted(terms.items())
        return LinearConstraint(
            indices=tuple(k for k, _ in items),
            coeffs=tuple(float(v) for _, v in items),
            relation=relation,
            rhs=float(rhs),
            name=name,
        )


@dataclass
class MilpProblem:
    """A bounded-(mixed-)integer linear minimization problem."""

    num_vars: int
    objective: np.ndarray
    constraints: list[LinearConstraint]
    bounds: np.ndarray            # (n, 2) columns lo, hi; +-inf allowed
    integrality: np.ndarray       # (n,) bool
    names: list[str] | None = None
    objective_offset: float = 0.0

    def check(self) -> None:
        n = self.num_vars
        if self.objective.shape != (n,):
            raise ValueError("objective length must equal num_vars")
        if not np.all(np.isfinite(self.objective)):
            raise ValueError("objective has non-finite coefficients")
        if self.bounds.shape != (n, 2):
            raise ValueError("bounds must be (num_vars, 2)")
        if np.any(self.bounds[:, 0] > self.bounds[:, 1]):
            bad = int(np.argmax(self.bounds[:, 0] > self.bounds[:, 1]))
            raise ValueError(f"variable {bad} has lo > hi")
        for con in self.constraints:
            if any(not math.isfinite(v) for v in con.coeffs) or not math.isfinite(con.rhs):
                raise ValueError(f"constraint {con.name!r} has non-finite data")
            if con.indices and max(con.indices) >= n:
                raise ValueError(f"constraint {con.name!r} references variable >= num_vars")
            if con.relation not in ("<=", "=", ">="):
                raise ValueError(f"bad relation {con.relation!r}")

    def var_name(self, j: int) -> str:
        if self.names is not None:
            return self.names[j]
        return f"x{j}"


@dataclass
class SolveLimits:
    node_cap: int | None = None
    time_cap_s: float | None = None
    abs_gap: float = DEFAULT_ABS_GAP


@dataclass
class MilpSolution:
    status: Status
    values: np.ndarray | None
    objective: float | None
    nodes_explored: int = 0
    wall_time_s: float = 0.0
    best_bound: float | None = None
    lp_iterations: int = 0
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Presolve: bound tightening only.
# ---------------------------------------------------------------------------

def _tighten_bounds(problem: MilpProblem, lo: np.ndarray, hi: np.ndarray,
                    passes: int = 4) -> bool:
    """In-place bound tightening from row activity; False means infeasible."""
    rows: list[tuple[np.ndarray, np.ndarray, float]] = []
    for con in problem.constraints:
        idx = np.asarray(con.indices, dtype=int)
        cof = np.asarray(con.coeffs, dtype=float)
        if con.relation in ("<=", "="):
            rows.append((idx, cof, con.rhs))
        if con.relation in (">=", "="):
            rows.append((idx, -cof, -con.rhs))
    integer = problem.integrality
    for _ in range(passes):
        changed = False
        for idx, cof, rhs in rows:
            if idx.size == 0:
                continue
            contrib = np.where(cof > 0, cof * lo[idx], cof * hi[idx])
            finite = np.isfinite(contrib)
            n_inf = int(np.sum(~finite))
            if n_inf > 1:
                continue
            total = contrib[finite].sum()
            for k in range(len(idx)):
                if n_inf == 1 and finite[k]:
                    continue
                rest = total if n_inf == 1 else total - contrib[k]
                j = idx[k]
                limit = (rhs - rest) / cof[k]
                if cof[k] > 0:
                    if integer[j]:
                        limit = math.floor(limit + INT_TOL)
                    if limit < hi[j] - 1e-9:
                        hi[j] = limit
                        changed = True
                else:
                    if integer[j]:
                        limit = math.ceil(limit - INT_TOL)
                    if limit > lo[j] + 1e-9:
                        lo[j] = limit
                        changed = True
            if np.any(lo[idx] > hi[idx] + FEASTOL):
                return False
        if not changed:
            break
    return not np.any(lo > hi + FEASTOL)


# ---------------------------------------------------------------------------
# Standard-form assembly (row scaling plus slack columns).
# ---------------------------------------------------------------------------

class _Standardized:
    def __init__(self, problem: MilpProblem, lo: np.ndarray, hi: np.ndarray):
        n = problem.num_vars
        m = len(problem.constraints)
        A = np.zeros((m, n + m))
        b = np.zeros(m)
        self.row_scale = np.ones(m)
        slack_lo = np.zeros(m)
        slack_hi = np.zeros(m)
        for i, con in enumerate(problem.constraints):
            idx = np.asarray(con.indices, dtype=int)
            cof = np.asarray(con.coeffs, dtype=float)
            scale = float(np.abs(cof).max()) if cof.size else 1.0
            if scale <= 0:
                scale = 1.0
            self.row_scale[i] = scale
            A[i, idx] = cof / scale
            b[i] = con.rhs / scale
            A[i, n + i] = 1.0
            if con.relation == "<=":
                slack_hi[i] = np.inf
            elif con.relation == ">=":
                slack_lo[i] = -np.inf
        self.A = A
        self.b = b
        self.lo = np.concatenate([lo, slack_lo])
        self.hi = np.concatenate([hi, slack_hi])
        self.c = np.concatenate([problem.objective.astype(float), np.zeros(m)])
        self.n_struct = n
        self.m = m


# ---------------------------------------------------------------------------
# Branch and bound.
# ---------------------------------------------------------------------------

class _Node:
    __slots__ = ("chain", "basis", "vstat", "lb", "depth")

    def __init__(self, chain, basis, vstat, lb, depth):
        self.chain = chain      # tuple of (var, lo, hi), applied over root bounds
        self.basis = basis
        self.vstat = vstat
        self.lb = lb
        self.depth = depth


class _BranchAndBound:
    def __init__(self, problem: MilpProblem, limits: SolveLimits):
        self.problem = problem
        self.limits = limits
        self.t0 = time.perf_counter()
        self.nodes = 0
        self.int_idx = np.flatnonzero(problem.integrality)
        self.incumbent: np.ndarray | None = None
        self.inc_obj = np.inf
        self.heap: list[tuple[float, int, _Node]] = []
        self.seq = 0
        self.plunge: _Node | None = None
        self.live_chain: tuple = ()

    def out_of_budget(self) -> bool:
        if self.limits.node_cap is not None and self.nodes >= self.limits.node_cap:
            return True
        if self.limits.time_cap_s is not None and \
                time.perf_counter() - self.t0 > self.limits.time_cap_s:
            return True
        return False

    def run(self) -> MilpSolution:
        problem = self.problem
        lo = problem.bounds[:, 0].astype(float).copy()
        hi = problem.bounds[:, 1].astype(float).copy()
        if not _tighten_bounds(problem, lo, hi):
            return self._finish(Status.INFEASIBLE, None)
        self.std = _Standardized(problem, lo, hi)
        state = SimplexState(self.std.A, self.std.b, self.std.lo, self.std.hi)
        self.state = state
        status = state.primal_two_phase(self.std.c)
        self.nodes += 1
        if status is LpStatus.INFEASIBLE:
            return self._finish(Status.INFEASIBLE, None)
        if status is LpStatus.UNBOUNDED:
            return self._finish(Status.UNBOUNDED, None)
        if status is LpStatus.ITER_LIMIT:
            raise SolverError("simplex iteration limit hit on root relaxation")
        # the root state may have deduplicated rows; later node solves reuse
        # its reduced matrix so basis snapshots stay dimension-compatible
        self.node_A = state.A
        self.node_b = state.b
        self.node_c = self.std.c[: state.n]
        self.c_ext = self.node_c
        self.root_lo = state.lo.copy()
        self.root_hi = state.hi.copy()

        gap = self.limits.abs_gap
        capped = False
        self._process_solved(LpStatus.OPTIMAL, depth=0)

        while True:
            if self.out_of_budget():
                capped = True
                break
            if self.plunge is not None:
                node = self.plunge
                self.plunge = None
                j, l, h = node.chain[-1]
                self.nodes += 1
                if not state.set_var_bounds(j, l, h):
                    continue
                self.live_chain = node.chain
                lp = state.dual_simplex(self.c_ext)
            elif self.heap:
                _, _, node = heapq.heappop(self.heap)
                if node.lb >= self.inc_obj - gap:
                    continue
                self.nodes += 1
                if not self._rebuild(node):
                    continue
                lp = state.dual_simplex(self.c_ext)
            else:
                break
            self._process_solved(lp, depth=node.depth)

        best_bound = self.inc_obj
        if self.heap:
            best_bound = min(best_bound, min(entry[0] for entry in self.heap))
        if capped:
            return self._finish(Status.GAP_LIMIT, best_bound)
        if self.incumbent is None:
            return self._finish(Status.INFEASIBLE, None)
        return self._finish(Status.OPTIMAL, best_bound)

    # -- node processing --------------------------------------------------

    def _process_solved(self, lp: LpStatus, depth: int) -> None:
        state = self.state
        if lp is LpStatus.ITER_LIMIT:
            if not self._cold_solve(self.live_chain):
                return
            lp = LpStatus.OPTIMAL
        if lp is LpStatus.INFEASIBLE:
            return

        obj = state.objective(self.c_ext)
        if obj >= self.inc_obj - self.limits.abs_gap:
            return

        x = state.x_full()[: self.std.n_struct]
        if self.int_idx.size:
            frac = np.abs(x[self.int_idx] - np.round(x[self.int_idx]))
            max_frac = float(frac.max())
        else:
            frac = np.empty(0)
            max_frac = 0.0

        if max_frac <= INT_TOL:
            verified = self._verify_incumbent()
            if verified is not None:
                cand_obj, cand_x = verified
                if cand_obj < self.inc_obj - 1e-12:
                    self.inc_obj = cand_obj
                    self.incumbent = cand_x
            return

        # branch: most fractional integer variable, lowest index on ties
        dist = np.abs(frac - 0.5)
        var = int(self.int_idx[int(np.argmin(dist))])
        val = float(x[var])
        lo_v, hi_v = self._chain_bounds(var)
        basis, vstat = self.state.snapshot()
        down = _Node(self.live_chain + ((var, lo_v, math.floor(val)),),
                     basis, vstat, obj, depth + 1)
        up = _Node(self.live_chain + ((var, math.ceil(val), hi_v),),
                   basis, vstat, obj, depth + 1)
        # plunge toward the rounding of the fractional value
        dive, defer = (up, down) if val - math.floor(val) >= 0.5 else (down, up)
        self.seq += 1
        heapq.heappush(self.heap, (defer.lb, self.seq, defer))
        self.plunge = dive

    def _chain_bounds(self, var: int) -> tuple[float, float]:
        lo_v, hi_v = self.root_lo[var], self.root_hi[var]
        for (j, l, h) in self.live_chain:
            if j == var:
                lo_v, hi_v = l, h
        return lo_v, hi_v

    def _rebuild(self, node: _Node) -> bool:
        state = self.state
        state.lo[:] = self.root_lo
        state.hi[:] = self.root_hi
        self.live_chain = node.chain
        try:
            state.load_basis(node.basis, node.vstat)
        except SingularBasisError:
            return self._cold_solve(node.chain)
        for (j, l, h) in node.chain:
            if not state.set_var_bounds(j, l, h):
                return False
        return True

    def _cold_solve(self, chain) -> bool:
        """Fallback: fresh two-phase solve of the node from scratch."""
        lo = self.root_lo.copy()
        hi = self.root_hi.copy()
        for (j, l, h) in chain:
            lo[j], hi[j] = l, h
            if l > h:
                return False
        fresh = SimplexState(self.node_A, self.node_b, lo, hi)
        status = fresh.primal_two_phase(self.node_c)
        if status is not LpStatus.OPTIMAL:
            return False
        if fresh.m != self.state.m or fresh.n != self.state.n:
            raise SolverError("rank instability between warm and cold solves")
        state = self.state
        state.A = fresh.A
        state.m, state.n = fresh.m, fresh.n
        state.lo, state.hi = fresh.lo, fresh.hi
        state.T, state.beta = fresh.T, fresh.beta
        state.basis, state.vstat = fresh.basis, fresh.vstat
        state.n_real = fresh.n_real
        self.live_chain = tuple(chain)
        return True

    def _verify_incumbent(self):
        """Refactor before trusting a candidate; guards against drift."""
        state = self.state
        try:
            state.refactor()
        except SingularBasisError:
            if not self._cold_solve(self.live_chain):
                return None
        if state.max_primal_violation() > 10 * FEASTOL:
            if not self._cold_solve(self.live_chain):
                return None
        x = state.x_full()[: self.std.n_struct]
        if self.int_idx.size:
            frac = np.abs(x[self.int_idx] - np.round(x[self.int_idx]))
            if frac.max() > INT_TOL:
                return None
        return state.objective(self.c_ext), x.copy()

    def _finish(self, status: Status, best_bound) -> MilpSolution:
        offset = self.problem.objective_offset
        objective = None if self.incumbent is None else self.inc_obj + offset
        return MilpSolution(
            status=status,
            values=self.incumbent,
            objective=objective,
            nodes_explored=self.nodes,
            wall_time_s=time.perf_counter() - self.t0,
            best_bound=None if best_bound is None or not np.isfinite(best_bound)
            else best_bound + offset,
        )


def solve(problem: MilpProblem, limits: SolveLimits | None = None) -> MilpSolution:
    """Solve to proven optimality (within ``limits.abs_gap``).

    Deterministic for identical input and limits. Hitting a node or time
    cap returns the best incumbent so far with status ``GAP_LIMIT``.
    """
    problem.check()
    return _BranchAndBound(problem, limits or SolveLimits()).run()


def solve_lp_relaxation(problem: MilpProblem) -> MilpSolution:
    """Solve the LP relaxation only; duals and reduced costs included."""
    problem.check()
    t0 = time.perf_counter()
    lo = problem.bounds[:, 0].astype(float).copy()
    hi = problem.bounds[:, 1].astype(float).copy()
    std = _Standardized(problem, lo, hi)
    state = SimplexState(std.A, std.b, std.lo, std.hi)
    status = state.primal_two_phase(std.c)
    wall = time.perf_counter() - t0
    if status is LpStatus.INFEASIBLE:
        return MilpSolution(Status.INFEASIBLE, None, None, 1, wall)
    if status is LpStatus.UNBOUNDED:
        return MilpSolution(Status.UNBOUNDED, None, None, 1, wall)
    if status is LpStatus.ITER_LIMIT:
        raise SolverError("simplex iteration limit hit")
    c_ext = std.c[: state.n]
    x = state.x_full()
    duals = np.zeros(std.m)
    kept = state.row_kept if state.row_kept is not None else np.arange(state.m)
    duals[kept] = state.duals(c_ext)
    duals /= std.row_scale
    d = state.reduced_costs(c_ext)
    return MilpSolution(
        status=Status.OPTIMAL,
        values=x[: std.n_struct].copy(),
        objective=state.objective(c_ext) + problem.objective_offset,
        nodes_explored=1,
        wall_time_s=wall,
        lp_iterations=state.pivots,
        duals=duals,
        reduced_costs=d[: std.n_struct].copy(),
    )


# ---------------------------------------------------------------------------
# LP text-format dump, for cross-checking against external solvers.
# Field order is fixed: objective terms by variable index, constraints in
# model order, bounds by variable index, then the integer section.
# ---------------------------------------------------------------------------

def _num(v: float) -> str:
    return repr(float(v))


def write_lp(problem: MilpProblem, path) -> None:
    lines = ["\\ dualfleet MILP dump", "Minimize"]
    terms = [f"{'+' if c >= 0 else '-'} {_num(abs(c))} {problem.var_name(j)}"
             for j, c in enumerate(problem.objective) if c != 0.0]
    lines.append(" obj: " + (" ".join(terms) if terms else "0"))
    lines.append("Subject To")
    for i, con in enumerate(problem.constraints):
        name = con.name or f"c{i}"
        parts = [f"{'+' if v >= 0 else '-'} {_num(abs(v))} {problem.var_name(j)}"
                 for j, v in zip(con.indices, con.coeffs)]
        lines.append(f" {name}: {' '.join(parts)} {con.relation} {_num(con.rhs)}")
    lines.append("Bounds")
    for j in range(problem.num_vars):
        lo, hi = problem.bounds[j]
        lo_s = "-inf" if not np.isfinite(lo) else _num(lo)
        hi_s = "+inf" if not np.isfinite(hi) else _num(hi)
        lines.append(f" {lo_s} <= {problem.var_name(j)} <= {hi_s}")
    generals = [problem.var_name(j) for j in range(problem.num_vars)
                if problem.integrality[j]]
    if generals:
        lines.append("General")
        lines.append(" " + " ".join(generals))
    lines.append("End")
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
