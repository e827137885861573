"""Stagewise decomposition of the stochastic delivery program.

The master problem keeps only stage-one variables plus two nonnegative
recourse stand-ins (theta1 for drone travel and penalties, theta2 for
repairs), bounded from below by feedback cuts. One second-stage and one
third-stage sub-problem exist per takeoff scenario; the second stage is a
direct calculation (its only variable is fixed by the assignment and the
takeoff realization), the third stage is a small order MILP shared across
breakdown scenarios.

The feedback coefficients are expectations over scenario data only, so
they never change between iterations. Consequence: the cut added after
iteration zero is already exact for the stand-ins, the convergence test
passes right after the second master solve, and the loop always performs
exactly two master iterations. This differs from classical L-shaped
schemes, where cut coefficients depend on each iteration's sub-problem
duals; here the decomposition acts as a one-shot cost-augmented master.
Because of that, the augmented master objective is exact precisely when
every breakdown scenario either spares a drone entirely or hits all of
its customers (whole-drone events); with partial breakdown matrices the
stand-ins can misprice order-dependent stranding and the returned plan,
while always feasible and honestly costed, may be slightly above the
full-model optimum.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import milp
from .instance import Instance
from .model import (FirstStagePlan, ModelBuilder, decode_first_stage,
                    emit_first_stage, expected_cost, validate_plan)
from .reports import SolveReport
from .scenarios import ScenarioSpace, TakeoffScenario


class NonConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class FeedbackParameters:
    """Constant cut coefficients; every entry is nonpositive.

    ``travel[i-1, d]`` prices expected round-trip cost of assigning i to d,
    ``penalty`` the expected takeoff-plus-direct-breakdown penalties, and
    ``repair`` the expected repair charge. The aux arrays are the per
    takeoff-scenario breakdown terms they aggregate.
    """

    travel: np.ndarray
    penalty: np.ndarray
    repair: np.ndarray
    aux_penalty: np.ndarray
    aux_repair: np.ndarray


@dataclass
class MasterState:
    iteration: int
    theta1: float
    theta2: float
    convergence_bound: float
    incumbent: FirstStagePlan | None
    drone_repair_floor: np.ndarray  # per drone, the repair cut coefficient


def compute_feedback(instance: Instance, scenarios: ScenarioSpace) -> FeedbackParameters:
    c = instance.n_customers
    n_d = len(instance.drones)
    n_w = len(scenarios.takeoff)
    p = instance.costs.penalty
    m = instance.costs.repair

    grounded = np.array([t.grounded for t in scenarios.takeoff], dtype=float)  # (w, d)
    pw = np.array([t.probability for t in scenarios.takeoff])
    pl = np.array([b.probability for b in scenarios.breakdown])
    breaks = np.array([b.breaks for b in scenarios.breakdown], dtype=float)  # (l, c, d)

    # direct-breakdown mass per customer and drone: sum_l P(l) B[i,d](l)
    direct = np.tensordot(pl, breaks, axes=(0, 0))  # (c, d)

    aux_penalty = np.empty((c, n_d, n_w))
    aux_repair = np.empty((c, n_d, n_w))
    for w in range(n_w):
        flying = 1.0 - grounded[w]  # (d,)
        aux_penalty[:, :, w] = p * direct * flying[None, :]
        aux_repair[:, :, w] = m * direct * flying[None, :]

    travel = np.empty((c, n_d))
    fly_prob = np.array([math.fsum(pw[w] * (1.0 - grounded[w, d]) for w in range(n_w))
                         for d in range(n_d)])
    for d in range(n_d):
        for i in range(c):
            travel[i, d] = -instance.costs.drone_cost(i + 1) * fly_prob[d]
    penalty = -(np.tensordot(aux_penalty, pw, axes=(2, 0))
                + p * np.tensordot(pw, grounded, axes=(0, 0))[None, :])
    repair = -np.tensordot(aux_repair, pw, axes=(2, 0))
    return FeedbackParameters(travel=travel, penalty=penalty, repair=repair,
                              aux_penalty=aux_penalty, aux_repair=aux_repair)


@dataclass
class SecondStageResult:
    takeoff_penalties: np.ndarray  # (c, d) 0/1
    cost: float


def solve_second_stage(x_assign: np.ndarray,
                       takeoff: TakeoffScenario,
                       instance: Instance) -> SecondStageResult:
    """Direct calculation: penalties equal assignment times grounding."""
    grounded = takeoff.grounded_array().astype(float)
    zb = x_assign * grounded[None, :]
    travel = 0.0
    for d in range(x_assign.shape[1]):
        if not takeoff.grounded[d]:
            travel += math.fsum(instance.costs.drone_cost(i + 1)
                                for i in np.flatnonzero(x_assign[:, d]))
    cost = travel + instance.costs.penalty * float(zb.sum())
    return SecondStageResult(takeoff_penalties=zb.astype(np.int8), cost=cost)


@dataclass
class ThirdStageResult:
    orders: np.ndarray  # (c, d) ranks, 0 for unassigned
    cost: float
    nodes: int


def solve_third_stage(x_assign: np.ndarray, takeoff: TakeoffScenario,
                      instance: Instance, scenarios: ScenarioSpace,
                      solver=milp.solve) -> ThirdStageResult:
    """Order MILP for one takeoff scenario, shared across breakdowns.

    One serving order per drone is chosen to minimize the expected
    stranded-suffix penalties plus repair charges over all breakdown
    scenarios. Grounded drones contribute nothing but still receive valid
    rank assignments.
    """
    c = instance.n_customers
    n_d = len(instance.drones)
    customers = range(1, c + 1)
    p = instance.costs.penalty
    m_cost = instance.costs.repair
    delta = c + 1

    mb = ModelBuilder()
    u = {(i, d): mb.var(f"U[{i},{d}]", 0, c, True)
         for d in range(n_d) for i in customers}
    mv = {(i, j, d): mb.binary(f"M[{i},{j},{d}]")
          for d in range(n_d) for i in customers for j in customers if i != j}
    for d in range(n_d):
        n_assigned = int(x_assign[:, d].sum())
        for i in customers:
            xi = float(x_assign[i - 1, d])
            mb.add({u[i, d]: 1.0}, ">=", xi, f"order_min[{i},{d}]")
            mb.add({u[i, d]: 1.0}, "<=", float(n_assigned), f"order_cap[{i},{d}]")
        for i in customers:
            for j in customers:
                if i == j:
                    continue
                xi = float(x_assign[i - 1, d])
                mb.add({u[i, d]: 1.0, u[j, d]: -1.0, mv[i, j, d]: -float(delta)},
                       "<=", -xi, f"rank_lt[{i},{j},{d}]")
                mb.add({u[i, d]: 1.0, u[j, d]: -1.0, mv[i, j, d]: -float(delta)},
                       ">=", xi - delta, f"rank_gt[{i},{j},{d}]")

    if instance.has_time_windows:
        # orders must respect the slot precedence for the plan to be usable
        for d in range(n_d):
            for i in instance.morning_ids():
                for j in instance.afternoon_ids():
                    if x_assign[i - 1, d] and x_assign[j - 1, d]:
                        mb.add({u[i, d]: 1.0, u[j, d]: -1.0}, "<=", 0.0,
                               f"tw_order[{i},{j},{d}]")

    for l, brk in enumerate(scenarios.breakdown):
        if brk.probability == 0.0:
            continue
        weight = brk.probability
        for d in range(n_d):
            if takeoff.grounded[d]:
                continue
            column = brk.drone_column(d)
            active = [i for i in customers if column[i - 1] and x_assign[i - 1, d]]
            if not active:
                continue
            za = {i: mb.binary(f"Za[{i},{d},{l}]", obj=p * weight) for i in customers}
            zm = mb.binary(f"Zm[{d},{l}]", obj=m_cost * weight)
            for i in active:
                mb.add({za[i]: 1.0}, ">=", 1.0, f"break[{i},{d},{l}]")
            for i in customers:
                mb.add({za[i]: 1.0, zm: -1.0}, "<=", 0.0, f"repair[{i},{d},{l}]")
            if len(active) != int(x_assign[:, d].sum()):
                for i in customers:
                    for j in customers:
                        if i != j:
                            mb.add({u[i, d]: 1.0, u[j, d]: -1.0,
                                    za[i]: -float(delta), za[j]: float(delta)},
                                   "<=", float(delta), f"suffix[{i},{j},{d},{l}]")

    sol = solver(mb.problem(), milp.SolveLimits())
    if sol.status is not milp.Status.OPTIMAL:
        raise milp.SolverError(f"third-stage sub-problem ended {sol.status}")
    orders = np.zeros((c, n_d), dtype=int)
    for d in range(n_d):
        for i in customers:
            if x_assign[i - 1, d]:
                orders[i - 1, d] = int(round(sol.values[u[i, d]]))
    return ThirdStageResult(orders=orders, cost=float(sol.objective),
                            nodes=sol.nodes_explored)


@dataclass
class LshapeOptions:
    solver: object = milp.solve
    threads: int = 1
    max_iterations: int = 10
    solve_limits: milp.SolveLimits | None = None


def _build_master(instance: Instance, feedback: FeedbackParameters | None,
                  with_cuts: bool):
    mb = ModelBuilder()
    fs = emit_first_stage(mb, instance, include_orders=False,
                          include_drone_window_order=False)
    theta1 = theta2 = None
    if with_cuts:
        theta1 = mb.var("theta1", 0.0, np.inf, False, obj=1.0)
        theta2 = mb.var("theta2", 0.0, np.inf, False, obj=1.0)
        terms = {theta1: 1.0}
        for (i, d), col in fs.x_drone.items():
            terms[col] = float(feedback.penalty[i - 1, d] + feedback.travel[i - 1, d])
        mb.add(terms, ">=", 0.0, "cut_theta1")
        for i in instance.customer_ids:
            terms = {theta2: 1.0}
            for d in range(len(instance.drones)):
                terms[fs.w_drone[d]] = float(feedback.repair[i - 1, d])
            mb.add(terms, ">=", 0.0, f"cut_theta2[{i}]")
    return mb.problem(), fs, theta1, theta2


def run(instance: Instance, scenarios: ScenarioSpace,
        options: LshapeOptions | None = None) -> SolveReport:
    """Full decomposition loop; terminates after exactly two master solves.

    The reported total is the exact expected payment of the incumbent
    plan under the full scenario space, not the master's objective.
    """
    options = options or LshapeOptions()
    problems = scenarios.check()
    if problems:
        raise ValueError("; ".join(problems))
    t_start = time.perf_counter()
    c = instance.n_customers
    n_d = len(instance.drones)
    subproblem_cache: dict = {}

    def solve_subproblems(x_assign: np.ndarray) -> list[dict]:
        def one(w: int) -> dict:
            key = (x_assign.tobytes(), w)
            if key in subproblem_cache:
                return subproblem_cache[key]
            tko = scenarios.takeoff[w]
            t0 = time.perf_counter()
            second = solve_second_stage(x_assign, tko, instance)
            third = solve_third_stage(x_assign, tko, instance, scenarios,
                                      solver=options.solver)
            entry = {
                "scenario": w,
                "probability": tko.probability,
                "second_stage_cost": second.cost,
                "third_stage_cost": third.cost,
                "orders": third.orders,
                "wall_time_s": time.perf_counter() - t0,
            }
            subproblem_cache[key] = entry
            return entry

        indices = range(len(scenarios.takeoff))
        if options.threads > 1:
            with ThreadPoolExecutor(max_workers=options.threads) as pool:
                results = list(pool.map(one, indices))
        else:
            results = [one(w) for w in indices]
        return sorted(results, key=lambda e: e["scenario"])

    iterations: list[dict] = []
    feedback = None
    master_state = None
    plan = None
    sub_results = None
    master_nodes = 0

    for k in range(options.max_iterations):
        t0 = time.perf_counter()
        if k == 0:
            problem, fs, _, _ = _build_master(instance, None, with_cuts=False)
        else:
            problem, fs, theta1_col, theta2_col = _build_master(
                instance, feedback, with_cuts=True)
        sol = options.solver(problem, options.solve_limits or milp.SolveLimits())
        if sol.status is not milp.Status.OPTIMAL:
            raise milp.SolverError(f"master problem ended {sol.status}")
        master_nodes += sol.nodes_explored
        plan = decode_first_stage(sol.values, instance, fs)
        x_assign = np.zeros((c, n_d), dtype=np.int8)
        for d in range(n_d):
            for i in plan.drone_assign[d]:
                x_assign[i - 1, d] = 1
        theta1 = float(sol.values[theta1_col]) if k else -math.inf
        theta2 = float(sol.values[theta2_col]) if k else -math.inf

        sub_results = solve_subproblems(x_assign)

        new_feedback = compute_feedback(instance, scenarios)
        if feedback is not None:
            same = (np.array_equal(new_feedback.travel, feedback.travel)
                    and np.array_equal(new_feedback.penalty, feedback.penalty)
                    and np.array_equal(new_feedback.repair, feedback.repair))
            if not same:
                raise NonConvergence("feedback coefficients changed between iterations")
        feedback = new_feedback

        drone_floor = feedback.repair.max(axis=0) if c else np.zeros(n_d)
        used = np.array([1.0 if plan.drone_used[d] else 0.0 for d in range(n_d)])
        bound = float((feedback.penalty + feedback.travel)[x_assign.astype(bool)].sum()
                      + drone_floor @ used)
        master_state = MasterState(iteration=k, theta1=theta1, theta2=theta2,
                                   convergence_bound=bound, incumbent=plan,
                                   drone_repair_floor=drone_floor)
        iterations.append({
            "k": k,
            "master_objective": float(sol.objective),
            "theta1": None if k == 0 else theta1,
            "theta2": None if k == 0 else theta2,
            "convergence_bound": bound,
            "master_nodes": sol.nodes_explored,
            "wall_time_s": time.perf_counter() - t0,
            "scenario_costs": [
                {kk: vv for kk, vv in entry.items() if kk != "orders"}
                for entry in sub_results
            ],
        })
        if theta1 + theta2 >= bound - 1e-9:
            break
    else:
        raise NonConvergence(f"no convergence in {options.max_iterations} iterations")

    final_plan = _merge_orders(plan, sub_results, instance, scenarios)
    violations = validate_plan(final_plan, instance)
    if violations:
        raise milp.SolverError(f"decomposed plan infeasible: {violations[0]}")
    breakdown = expected_cost(final_plan, instance, scenarios)
    return SolveReport(
        method="lshape",
        status="optimal",
        instance=instance,
        scenarios=scenarios,
        plan=final_plan,
        breakdown=breakdown,
        solver_stats={
            "master_iterations": len(iterations),
            "master_nodes": master_nodes,
            "wall_time_s": time.perf_counter() - t_start,
            "theta1": master_state.theta1,
            "theta2": master_state.theta2,
            "convergence_bound": master_state.convergence_bound,
        },
        options={"threads": options.threads},
        scenario_costs=iterations[-1]["scenario_costs"],
        iterations=iterations,
    )


def _merge_orders(plan: FirstStagePlan, sub_results: list[dict],
                  instance: Instance, scenarios: ScenarioSpace) -> FirstStagePlan:
    """Attach serving orders: per drone, from its first flying scenario.

    Order choices agree across flying scenarios (the third-stage data per
    drone is identical whenever it flies), so the merge is deterministic;
    drones grounded everywhere get ascending-id orders.
    """
    c = instance.n_customers
    n_d = len(instance.drones)
    drone_order = []
    for d in range(n_d):
        order = None
        for entry in sub_results:
            if not scenarios.takeoff[entry["scenario"]].grounded[d]:
                order = [int(entry["orders"][i - 1, d]) for i in instance.customer_ids]
                break
        if order is None:
            order = [0] * c
            for rank, i in enumerate(plan.drone_assign[d], start=1):
                order[i - 1] = rank
        drone_order.append(tuple(order))
    return FirstStagePlan(
        truck_used=plan.truck_used,
        drone_used=plan.drone_used,
        truck_arcs=plan.truck_arcs,
        truck_assign=plan.truck_assign,
        drone_assign=plan.drone_assign,
        truck_order=plan.truck_order,
        drone_order=tuple(drone_order),
        order_disambig=None,
    )
