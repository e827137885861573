"""Deterministic-equivalent model: worked examples, round trips, oracle parity."""

import itertools

import numpy as np
import pytest

from dualfleet import milp
from dualfleet.generators import make_random_instance, make_random_scenarios
from dualfleet.instance import (Customer, DroneSpec, Instance, TruckSpec,
                                default_cost_model)
from dualfleet.model import (InfeasiblePlan, build_monolith, canonical_recourse,
                             evaluate_plan, expected_cost, make_plan,
                             plan_from_dict, plan_to_dict, validate_plan)
from dualfleet.oracle import expected_plan_cost, solve_exhaustive
from dualfleet.scenarios import (BreakdownScenario, ScenarioSpace,
                                 TakeoffScenario, deterministic_space)


def tiny_instance(n=1, truck_initial=280.0, drone_initial=100.0, k01=5.0,
                  trip=15.0, penalty=20.0, repair=50.0):
    coords = np.vstack([[0.0, 0.0], [[k01 * (i + 1), 0.0] for i in range(n)]])
    diff = coords[:, None, :] - coords[None, :, :]
    k = np.sqrt((diff ** 2).sum(axis=2))
    return Instance(
        customers=tuple(Customer(id=i) for i in range(1, n + 1)),
        trucks=(TruckSpec(id=0, initial_cost=truck_initial, capacity_kg=100,
                          daily_distance_km=500, daily_time_h=12,
                          dropoff_time_h=0.1, speed_kmh=50.0),),
        drones=(DroneSpec(id=0, initial_cost=drone_initial, capacity_kg=2,
                          daily_distance_km=150, trip_distance_km=trip,
                          speed_kmh=40.0),),
        distances_km=k,
        costs=default_cost_model(k, penalty=penalty, repair=repair),
        coords=coords,
    )


def three_customer_break_instance(p_break=1.0):
    """One drone, customers A,B,C in range; breakdown hits B only."""
    inst = tiny_instance(n=3, k01=2.0, trip=50.0)
    breaks = (
        (0,),
        (1,),
        (0,),
    )
    space = ScenarioSpace(
        takeoff=(TakeoffScenario(grounded=(0,), probability=1.0),),
        breakdown=(
            BreakdownScenario(breaks=((0,), (0,), (0,)), probability=1.0 - p_break),
            BreakdownScenario(breaks=breaks, probability=p_break),
        ),
    )
    return inst, space


def test_single_customer_drone_cheaper():
    inst = tiny_instance(n=1)
    space = deterministic_space(1, 1)
    problem, decoder = build_monolith(inst, space)
    sol = milp.solve(problem)
    assert sol.status is milp.Status.OPTIMAL
    plan, recourse, breakdown = decoder.decode(sol)
    # two options: drone 100 + 0.005*10 = 100.05, truck 280 + 0.105*10 = 281.05
    assert breakdown.total == pytest.approx(100.05, abs=1e-9)
    assert plan.drone_assign[0] == (1,)
    assert breakdown.drone_initial == pytest.approx(100.0)
    assert breakdown.expected_drone_travel == pytest.approx(0.05)


def test_out_of_range_customer_forced_to_truck():
    inst = tiny_instance(n=1, k01=20.0, trip=15.0)  # round trip 40 > 15
    space = deterministic_space(1, 1)
    problem, decoder = build_monolith(inst, space)
    sol = milp.solve(problem)
    plan, _, _ = decoder.decode(sol)
    assert plan.drone_assign[0] == ()
    assert plan.truck_assign[0] == (1,)


def test_zero_customers_zero_cost():
    inst = tiny_instance(n=1)
    inst = Instance(customers=(), trucks=inst.trucks, drones=inst.drones,
                    distances_km=np.zeros((1, 1)),
                    costs=default_cost_model(np.zeros((1, 1))))
    space = deterministic_space(0, 1)
    problem, decoder = build_monolith(inst, space)
    sol = milp.solve(problem)
    plan, _, breakdown = decoder.decode(sol)
    assert breakdown.total == pytest.approx(0.0, abs=1e-12)
    assert not any(plan.truck_used) and not any(plan.drone_used)


def test_suffix_penalty_example():
    # drone serves 1,2,3 in order; breakdown at 2 strands {2,3}: 2p + m
    inst, space = three_customer_break_instance(p_break=1.0)
    plan = make_plan(inst, truck_routes=[[]], drone_orders=[[1, 2, 3]])
    breakdown = evaluate_plan(plan, inst, space)
    travel = sum(inst.costs.drone_cost(i) for i in (1, 2, 3))
    assert breakdown.expected_penalty == pytest.approx(2 * 20.0)
    assert breakdown.expected_repair == pytest.approx(50.0)
    assert breakdown.expected_drone_travel == pytest.approx(travel)
    assert breakdown.total == pytest.approx(100.0 + travel + 40.0 + 50.0)


def test_all_grounded_pays_penalty_only():
    inst = tiny_instance(n=2, k01=2.0, trip=50.0)
    space = ScenarioSpace(
        takeoff=(TakeoffScenario(grounded=(1,), probability=1.0),),
        breakdown=deterministic_space(2, 1).breakdown,
    )
    plan = make_plan(inst, truck_routes=[[]], drone_orders=[[1, 2]])
    breakdown = expected_cost(plan, inst, space)
    assert breakdown.expected_drone_travel == 0.0
    assert breakdown.expected_penalty == pytest.approx(2 * 20.0)
    assert breakdown.expected_repair == 0.0


def test_deterministic_scenarios_no_recourse_cost():
    inst = tiny_instance(n=2, k01=2.0, trip=50.0)
    space = deterministic_space(2, 1)
    plan = make_plan(inst, truck_routes=[[]], drone_orders=[[2, 1]])
    breakdown = evaluate_plan(plan, inst, space)
    assert breakdown.expected_penalty == 0.0
    assert breakdown.expected_repair == 0.0


def test_evaluate_rejects_bad_allocation():
    inst = tiny_instance(n=2, k01=2.0, trip=50.0)
    space = deterministic_space(2, 1)
    plan = make_plan(inst, truck_routes=[[1]], drone_orders=[[1, 2]])
    with pytest.raises(InfeasiblePlan):
        evaluate_plan(plan, inst, space)


def test_decode_round_trip_matches_objective():
    inst, space = three_customer_break_instance(p_break=0.25)
    problem, decoder = build_monolith(inst, space)
    sol = milp.solve(problem)
    plan, recourse, breakdown = decoder.decode(sol)
    assert breakdown.total == pytest.approx(sol.objective, abs=1e-6)
    assert not validate_plan(plan, inst)


def test_suffix_property_of_decoded_solutions():
    inst, space = three_customer_break_instance(p_break=0.3)
    problem, decoder = build_monolith(inst, space)
    sol = milp.solve(problem)
    plan, recourse, _ = decoder.decode(sol)
    for w, tko in enumerate(space.takeoff):
        for d in range(len(inst.drones)):
            for l, brk in enumerate(space.breakdown):
                flags = recourse.breakdown_penalties[:, d, w, l]
                if tko.grounded[d]:
                    assert not flags.any()
                    continue
                assigned = plan.drone_assign[d]
                ranks = [plan.drone_order[d][i - 1] for i in assigned
                         if brk.breaks[i - 1][d]]
                expected = set()
                if ranks:
                    first = min(ranks)
                    expected = {i for i in assigned
                                if plan.drone_order[d][i - 1] >= first}
                assert {i for i in inst.customer_ids if flags[i - 1]} == expected


def test_order_pessimism_of_optimal_plans():
    # reordering a drone's customers never beats the solver's order
    inst, space = three_customer_break_instance(p_break=0.4)
    problem, decoder = build_monolith(inst, space)
    sol = milp.solve(problem)
    plan, _, breakdown = decoder.decode(sol)
    d = 0
    served = list(plan.drone_sequence(d))
    if len(served) >= 2:
        routes = [list(plan.truck_route(t))[1:-1]
                  for t in range(len(inst.trucks))]
        for perm in itertools.permutations(served):
            alt = make_plan(inst, routes, [list(perm)])
            alt_cost = expected_cost(alt, inst, space)
            assert breakdown.total <= alt_cost.total + 1e-9


def test_scaling_invariance_of_argmin():
    inst = tiny_instance(n=2, k01=3.0, trip=20.0, penalty=8.0, repair=12.0)
    space = ScenarioSpace(
        takeoff=(TakeoffScenario((0,), 0.8), TakeoffScenario((1,), 0.2)),
        breakdown=(BreakdownScenario(((0,), (0,)), 0.7),
                   BreakdownScenario(((1,), (1,)), 0.3)),
    )
    problem, decoder = build_monolith(inst, space)
    plan1, _, b1 = decoder.decode(milp.solve(problem))
    scale = 3.7
    scaled = Instance(
        customers=inst.customers, trucks=tuple(
            TruckSpec(t.id, t.initial_cost * scale, t.capacity_kg,
                      t.daily_distance_km, t.daily_time_h, t.dropoff_time_h,
                      t.speed_kmh) for t in inst.trucks),
        drones=tuple(DroneSpec(d.id, d.initial_cost * scale, d.capacity_kg,
                               d.daily_distance_km, d.trip_distance_km,
                               d.speed_kmh) for d in inst.drones),
        distances_km=inst.distances_km,
        costs=type(inst.costs)(inst.costs.truck_arc * scale,
                               inst.costs.drone_roundtrip * scale,
                               inst.costs.penalty * scale,
                               inst.costs.repair * scale),
    )
    problem2, decoder2 = build_monolith(scaled, space)
    plan2, _, b2 = decoder2.decode(milp.solve(problem2))
    assert plan1.drone_assign == plan2.drone_assign
    assert plan1.truck_assign == plan2.truck_assign
    assert b2.total == pytest.approx(scale * b1.total, rel=1e-9)


def test_plan_json_round_trip():
    inst = tiny_instance(n=3, k01=2.0, trip=50.0)
    plan = make_plan(inst, truck_routes=[[2]], drone_orders=[[3, 1]])
    doc = plan_to_dict(plan)
    back = plan_from_dict(doc, inst)
    assert back == plan


def test_oracle_equals_evaluate_on_enumerated_plans():
    inst = tiny_instance(n=3, k01=2.0, trip=50.0)
    space = make_random_scenarios(3, inst, n_takeoff=2, n_breakdown=2,
                                  structure="general")
    for routes, orders in [
        ([[1, 2, 3]], [[]]),
        ([[2]], [[3, 1]]),
        ([[]], [[1, 3, 2]]),
        ([[3, 1]], [[2]]),
    ]:
        plan = make_plan(inst, routes, orders)
        mine = expected_cost(plan, inst, space).total
        other = expected_plan_cost(inst, space, [tuple(r) for r in routes],
                                   [tuple(o) for o in orders])
        assert mine == pytest.approx(other, abs=1e-9)


@pytest.mark.parametrize("seed", range(12))
def test_monolith_matches_oracle_general_breakdowns(seed):
    inst = make_random_instance(seed, n_customers=4, n_trucks=1, n_drones=2)
    space = make_random_scenarios(seed, inst, n_takeoff=2, n_breakdown=2,
                                  structure="general")
    oracle_result = solve_exhaustive(inst, space)
    problem, decoder = build_monolith(inst, space)
    sol = milp.solve(problem)
    assert sol.status is milp.Status.OPTIMAL
    _, _, breakdown = decoder.decode(sol)
    assert breakdown.total == pytest.approx(oracle_result.objective, abs=1e-6)
