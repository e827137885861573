"""Branch-and-bound correctness against exhaustive 0/1 enumeration."""

import io

import numpy as np
import pytest

from dualfleet.milp import (LinearConstraint, MilpProblem, SolveLimits, Status,
                            solve, solve_lp_relaxation, write_lp)


def make_problem(c, rows, bounds, integrality, offset=0.0, names=None):
    n = len(c)
    cons = [LinearConstraint.from_dict(terms, rel, rhs)
            for terms, rel, rhs in rows]
    return MilpProblem(
        num_vars=n,
        objective=np.asarray(c, dtype=float),
        constraints=cons,
        bounds=np.asarray(bounds, dtype=float),
        integrality=np.asarray(integrality, dtype=bool),
        objective_offset=offset,
        names=names,
    )


def brute_force_binary(problem: MilpProblem):
    """Enumerate all 0/1 points; None when nothing is feasible."""
    n = problem.num_vars
    best = None
    for mask in range(2 ** n):
        x = np.array([(mask >> j) & 1 for j in range(n)], dtype=float)
        if np.any(x < problem.bounds[:, 0] - 1e-12) or \
           np.any(x > problem.bounds[:, 1] + 1e-12):
            continue
        ok = True
        for con in problem.constraints:
            lhs = sum(v * x[j] for j, v in zip(con.indices, con.coeffs))
            if con.relation == "<=" and lhs > con.rhs + 1e-9:
                ok = False
            elif con.relation == ">=" and lhs < con.rhs - 1e-9:
                ok = False
            elif con.relation == "=" and abs(lhs - con.rhs) > 1e-9:
                ok = False
            if not ok:
                break
        if not ok:
            continue
        obj = float(problem.objective @ x) + problem.objective_offset
        if best is None or obj < best:
            best = obj
    return best


def test_single_binary():
    p = make_problem([-1.0], [], [[0, 1]], [True])
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(-1.0, abs=1e-9)
    assert sol.values[0] == pytest.approx(1.0, abs=1e-6)


def test_two_binary_packing():
    # enumeration of the 4 points gives a=1, b=0, objective -3
    p = make_problem([-3.0, -2.0], [({0: 1.0, 1: 1.0}, "<=", 1.0)],
                     [[0, 1], [0, 1]], [True, True])
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(-3.0, abs=1e-9)
    assert sol.values[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.values[1] == pytest.approx(0.0, abs=1e-6)


def test_contradictory_bounds_infeasible():
    p = make_problem([1.0], [({0: 1.0}, ">=", 1.0), ({0: 1.0}, "<=", 0.0)],
                     [[0, 1]], [True])
    assert solve(p).status is Status.INFEASIBLE


def test_lp_relaxation_simple():
    p = make_problem([-1.0], [], [[0, 1]], [True])
    sol = solve_lp_relaxation(p)
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(-1.0)
    assert sol.values[0] == pytest.approx(1.0)


def test_lp_facet():
    # minimum of x + y on the halfplane x + y >= 0.5 in the positive quadrant
    p = make_problem([1.0, 1.0], [({0: 1.0, 1: 1.0}, ">=", 0.5)],
                     [[0, np.inf], [0, np.inf]], [False, False])
    sol = solve_lp_relaxation(p)
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(0.5, abs=1e-9)


def test_lp_unbounded():
    p = make_problem([-1.0], [], [[0, np.inf]], [False])
    assert solve_lp_relaxation(p).status is Status.UNBOUNDED


def test_degenerate_lp_terminates():
    # redundant equalities stacked on the same point
    rows = [({0: 1.0, 1: 1.0}, "=", 1.0),
            ({0: 2.0, 1: 2.0}, "=", 2.0),
            ({0: 1.0, 1: 1.0}, "<=", 1.0),
            ({0: 1.0, 1: 1.0}, ">=", 1.0)]
    p = make_problem([1.0, -1.0], rows, [[0, 1], [0, 1]], [False, False])
    sol = solve_lp_relaxation(p)
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(-1.0, abs=1e-8)


def test_duality_on_random_lps():
    rng = np.random.default_rng(7)
    for _ in range(60):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, 6))
        c = rng.normal(size=n).round(3)
        rows = []
        for _ in range(m):
            terms = {j: round(float(rng.normal()), 3) for j in range(n)
                     if rng.random() < 0.8}
            if not terms:
                terms = {0: 1.0}
            rel = ["<=", ">=", "="][int(rng.integers(3))]
            rows.append((terms, rel, round(float(rng.normal()), 3) * 2))
        bounds = np.column_stack([np.zeros(n), rng.uniform(0.5, 3.0, size=n)])
        p = make_problem(c, rows, bounds, [False] * n)
        sol = solve_lp_relaxation(p)
        if sol.status is not Status.OPTIMAL:
            continue
        # strong duality for bounded LPs: c.x == y.b + d.x over nonbasic bounds
        x = sol.values
        y = sol.duals
        d = sol.reduced_costs
        b = np.array([con.rhs for con in p.constraints])
        dual_obj = float(y @ b) + float(d @ x)
        assert sol.objective == pytest.approx(dual_obj, abs=1e-6)


def test_random_binary_programs_match_enumeration():
    rng = np.random.default_rng(123)
    mismatches = 0
    for trial in range(200):
        n = int(rng.integers(2, 9))
        m = int(rng.integers(1, 8))
        c = rng.integers(-8, 9, size=n).astype(float)
        rows = []
        for _ in range(m):
            terms = {j: float(rng.integers(-4, 5)) for j in range(n)
                     if rng.random() < 0.7}
            terms = {j: v for j, v in terms.items() if v != 0}
            if not terms:
                continue
            rel = ["<=", ">=", "="][int(rng.integers(3))]
            rhs = float(rng.integers(-4, 7))
            rows.append((terms, rel, rhs))
        p = make_problem(c, rows, [[0, 1]] * n, [True] * n)
        expected = brute_force_binary(p)
        sol = solve(p)
        if expected is None:
            assert sol.status is Status.INFEASIBLE, f"trial {trial}"
        else:
            assert sol.status is Status.OPTIMAL, f"trial {trial}"
            assert sol.objective == pytest.approx(expected, abs=1e-6), f"trial {trial}"
            if abs(sol.objective - expected) > 1e-6:
                mismatches += 1
    assert mismatches == 0


def test_general_integproducers_match_enumeration():
    # small general-integer problems, enumerated over the box
    rng = np.random.default_rng(5)
    for trial in range(60):
        n = int(rng.integers(2, 5))
        ub = rng.integers(1, 4, size=n)
        c = rng.integers(-5, 6, size=n).astype(float)
        terms = {j: float(rng.integers(1, 4)) for j in range(n)}
        cap = float(rng.integers(2, int(sum(terms[j] * ub[j] for j in range(n))) + 2))
        p = make_problem(c, [(terms, "<=", cap)],
                         np.column_stack([np.zeros(n), ub]).tolist(),
                         [True] * n)
        best = None
        grids = np.meshgrid(*[np.arange(u + 1) for u in ub], indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1).astype(float)
        lhs = pts @ np.array([terms[j] for j in range(n)])
        feas = pts[lhs <= cap + 1e-9]
        best = float((feas @ c).min())
        sol = solve(p)
        assert sol.status is Status.OPTIMAL
        assert sol.objective == pytest.approx(best, abs=1e-6), f"trial {trial}"


def test_determinism():
    rng = np.random.default_rng(9)
    n, m = 8, 6
    c = rng.integers(-5, 6, size=n).astype(float)
    rows = []
    for _ in range(m):
        terms = {j: float(rng.integers(-3, 4)) for j in range(n) if rng.random() < 0.6}
        terms = {j: v for j, v in terms.items() if v != 0} or {0: 1.0}
        rows.append((terms, "<=", float(rng.integers(1, 6))))
    p = make_problem(c, rows, [[0, 1]] * n, [True] * n)
    s1 = solve(p)
    s2 = solve(p)
    assert s1.nodes_explored == s2.nodes_explored
    assert s1.objective == s2.objective
    assert np.array_equal(s1.values, s2.values)


def test_node_cap_returns_gap_limit():
    rng = np.random.default_rng(11)
    n = 12
    c = -rng.integers(1, 9, size=n).astype(float)
    w = {j: float(rng.integers(1, 6)) for j in range(n)}
    p = make_problem(c, [(w, "<=", 11.0)], [[0, 1]] * n, [True] * n)
    sol = solve(p, SolveLimits(node_cap=2))
    assert sol.status is Status.GAP_LIMIT


def test_objective_offset():
    p = make_problem([1.0], [({0: 1.0}, ">=", 0.25)], [[0, 1]], [False],
                     offset=10.0)
    sol = solve_lp_relaxation(p)
    assert sol.objective == pytest.approx(10.25)


def test_write_lp_layout():
    p = make_problem([0.5, -1.0], [({0: 1.0, 1: 2.0}, "<=", 3.0)],
                     [[0, 1], [0, 5]], [True, False], names=["use", "flow"])
    buf = io.StringIO()
    write_lp(p, buf)
    text = buf.getvalue()
    assert "Minimize" in text
    assert "use" in text and "flow" in text
    assert "General" in text and " use" in text.split("General")[1]
    assert text.index("Minimize") < text.index("Subject To") < text.index("Bounds")
