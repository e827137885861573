"""Exhaustive ground truth for tiny instances.

Enumerates every assignment of customers to vehicles, every truck route
permutation and every drone serving order, and evaluates exact expected
cost with an implementation that shares no code with the MILP layer. Used
to certify the deterministic-equivalent encoding and the decomposition.

Serving orders are optimized per drone with a subset dynamic program: the
expected stranded-suffix penalty of an order equals the penalty rate times
the sum, over order prefixes, of the probability that the prefix already
contains a broken customer. Permutation search is therefore never needed,
but stays available (``expected_plan_cost``) as a second, loop-based
evaluator for consistency tests.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .instance import DEPOT, Instance, WindowClass, validate
from .model import FirstStagePlan, make_plan
from .scenarios import ScenarioSpace


class CapExceeded(ValueError):
    pass


@dataclass(frozen=True)
class OracleCaps:
    max_customers: int = 7
    max_trucks: int = 2
    max_drones: int = 3


@dataclass
class OracleResult:
    objective: float
    plan: FirstStagePlan
    truck_routes: tuple[tuple[int, ...], ...]
    drone_orders: tuple[tuple[int, ...], ...]
    n_assignments: int


def expected_plan_cost(instance: Instance, scenarios: ScenarioSpace,
                       truck_routes: list[tuple[int, ...]],
                       drone_orders: list[tuple[int, ...]]) -> float:
    """Loop-based exact expected payment of explicit visit sequences.

    Whole-day replay per scenario pair: reservation and truck travel are
    certain; drone travel is paid when the drone flies; a grounded drone
    pays the penalty for each of its customers; a breakdown strands the
    order suffix from the first broken customer and costs one repair.
    """
    p = instance.costs.penalty
    m = instance.costs.repair
    total = 0.0
    for t, seq in enumerate(truck_routes):
        if seq:
            total += instance.trucks[t].initial_cost
            tour = [DEPOT, *seq, DEPOT]
            total += sum(instance.costs.truck_cost(i, j)
                         for i, j in zip(tour[:-1], tour[1:]))
    for d, seq in enumerate(drone_orders):
        if not seq:
            continue
        total += instance.drones[d].initial_cost
        travel = sum(instance.costs.drone_cost(i) for i in seq)
        for tko in scenarios.takeoff:
            if tko.grounded[d]:
                total += tko.probability * p * len(seq)
                continue
            total += tko.probability * travel
            for brk in scenarios.breakdown:
                first = None
                for pos, i in enumerate(seq):
                    if brk.breaks[i - 1][d]:
                        first = pos
                        break
                if first is not None:
                    stranded = len(seq) - first
                    total += tko.probability * brk.probability * (p * stranded + m)
    return total


# ---------------------------------------------------------------------------
# Per-vehicle subset costing.
# ---------------------------------------------------------------------------

def _truck_subset_costs(instance: Instance, t: int,
                        check_limits: bool = True) -> dict[frozenset, tuple[float, tuple]]:
    """Cheapest feasible route per customer subset; infeasible sets absent."""
    spec = instance.trucks[t]
    k = instance.distances_km
    morning = set(instance.morning_ids())
    afternoon = set(instance.afternoon_ids())
    l_m = instance.morning_limit_h if instance.morning_limit_h is not None else math.inf
    l_a = instance.afternoon_limit_h if instance.afternoon_limit_h is not None else math.inf
    ids = list(instance.customer_ids)
    out: dict[frozenset, tuple[float, tuple]] = {frozenset(): (0.0, ())}
    for size in range(1, len(ids) + 1):
        for subset in itertools.combinations(ids, size):
            if sum(instance.weight(i) for i in subset) > spec.capacity_kg + 1e-9:
                continue
            best = None
            for perm in itertools.permutations(subset):
                tour = [DEPOT, *perm, DEPOT]
                arcs = list(zip(tour[:-1], tour[1:]))
                if check_limits:
                    dist = sum(k[i, j] for i, j in arcs)
                    if dist > spec.daily_distance_km + 1e-9:
                        continue
                    hours = sum(k[i, j] / spec.speed(i, j) + spec.dropoff_time_h
                                for i, j in arcs)
                    if hours > spec.daily_time_h + 1e-9:
                        continue
                if instance.has_time_windows:
                    seen_a = False
                    ok = True
                    for i in perm:
                        if i in afternoon:
                            seen_a = True
                        elif i in morning and seen_a:
                            ok = False
                            break
                    if not ok:
                        continue
                    tm = sum(k[i, j] / spec.speed(i, j) + spec.dropoff_time_h
                             for i, j in arcs if j in morning)
                    ta = sum(k[i, j] / spec.speed(i, j) + spec.dropoff_time_h
                             for i, j in arcs
                             if i != DEPOT and (j in afternoon or j == DEPOT))
                    if tm > l_m + 1e-9 or ta > l_a + 1e-9:
                        continue
                cost = sum(instance.costs.truck_cost(i, j) for i, j in arcs)
                if best is None or cost < best[0] - 1e-15:
                    best = (cost, perm)
            if best is not None:
                out[frozenset(subset)] = (best[0] + spec.initial_cost, best[1])
    return out


def _drone_subset_costs(instance: Instance, scenarios: ScenarioSpace,
                        d: int) -> dict[frozenset, tuple[float, tuple]]:
    """Expected cost and optimal serving order per feasible subset.

    The order DP runs over prefix sets: appending customer a to prefix S
    adds hit(S) once, where hit(S) is the probability mass of breakdown
    scenarios touching S, so minimizing the summed hit over prefixes
    minimizes the expected stranded-suffix count.
    """
    spec = instance.drones[d]
    p = instance.costs.penalty
    m = instance.costs.repair
    ids = [i for i in instance.customer_ids
           if instance.weight(i) <= spec.capacity_kg + 1e-9
           and instance.roundtrip_km(i) <= spec.trip_distance_km + 1e-9]
    morning = set(instance.morning_ids())
    afternoon = set(instance.afternoon_ids())
    l_m = instance.morning_limit_h if instance.morning_limit_h is not None else math.inf
    l_a = instance.afternoon_limit_h if instance.afternoon_limit_h is not None else math.inf

    grounded_prob = math.fsum(t.probability for t in scenarios.takeoff if t.grounded[d])
    flying_prob = math.fsum(t.probability for t in scenarios.takeoff if not t.grounded[d])
    break_masks = []
    for brk in scenarios.breakdown:
        mask = 0
        for pos, i in enumerate(ids):
            if brk.breaks[i - 1][d]:
                mask |= 1 << pos
        break_masks.append((mask, brk.probability))

    n = len(ids)
    hit = [0.0] * (1 << n)
    for s in range(1, 1 << n):
        hit[s] = math.fsum(prob for mask, prob in break_masks if mask & s)

    # f[s]: minimal summed hit over prefixes of an order of set s
    f = [math.inf] * (1 << n)
    last = [-1] * (1 << n)
    f[0] = 0.0
    for s in range(1, 1 << n):
        best = math.inf
        arg = -1
        for pos in range(n):
            if not s & (1 << pos):
                continue
            if instance.has_time_windows and ids[pos] in morning:
                rest = s & ~(1 << pos)
                if any(rest & (1 << q) and ids[q] in afternoon for q in range(n)):
                    continue  # appending a morning stop after an afternoon one
            prev = f[s & ~(1 << pos)]
            if prev < best:
                best = prev
                arg = pos
        if arg >= 0:
            f[s] = best + hit[s]
            last[s] = arg

    out: dict[frozenset, tuple[float, tuple]] = {frozenset(): (0.0, ())}
    for s in range(1, 1 << n):
        members = [ids[pos] for pos in range(n) if s & (1 << pos)]
        if math.isinf(f[s]):
            continue
        roundtrips = sum(instance.roundtrip_km(i) for i in members)
        if roundtrips > spec.daily_distance_km + 1e-9:
            continue
        if instance.has_time_windows:
            fm = sum(instance.roundtrip_km(i) / spec.speed_kmh
                     for i in members if i in morning)
            fa = sum(instance.roundtrip_km(i) / spec.speed_kmh
                     for i in members if i in afternoon)
            if fm > l_m + 1e-9 or fa > l_a + 1e-9:
                continue
        travel = math.fsum(instance.costs.drone_cost(i) for i in members)
        cost = spec.initial_cost \
            + grounded_prob * p * len(members) \
            + flying_prob * (travel + p * f[s] + m * hit[s])
        order = []
        cur = s
        while cur:
            pos = last[cur]
            order.append(ids[pos])
            cur &= ~(1 << pos)
        out[frozenset(members)] = (cost, tuple(reversed(order)))
    return out


def solve_exhaustive(instance: Instance, scenarios: ScenarioSpace,
                     caps: OracleCaps | None = None) -> OracleResult:
    """Global optimum over all assignments, routes and serving orders.

    Ties are broken by the lexicographically smallest assignment vector,
    so the argmin plan is deterministic.
    """
    caps = caps or OracleCaps()
    c = instance.n_customers
    if c > caps.max_customers:
        raise CapExceeded(f"{c} customers exceed the oracle cap {caps.max_customers}")
    if len(instance.trucks) > caps.max_trucks:
        raise CapExceeded("too many trucks for exhaustive search")
    if len(instance.drones) > caps.max_drones:
        raise CapExceeded("too many drones for exhaustive search")

    n_t = len(instance.trucks)
    n_d = len(instance.drones)
    truck_tables = [_truck_subset_costs(instance, t) for t in range(n_t)]
    drone_tables = [_drone_subset_costs(instance, scenarios, d) for d in range(n_d)]

    ids = list(instance.customer_ids)
    options = []
    for i in ids:
        opts = list(range(n_t))  # vehicle codes: 0..n_t-1 trucks, then drones
        for d in range(n_d):
            if frozenset({i}) in drone_tables[d]:
                opts.append(n_t + d)
        options.append(tuple(opts))

    best = None
    count = 0
    for assign in itertools.product(*options):
        count += 1
        truck_sets = [frozenset(i for i, v in zip(ids, assign) if v == t)
                      for t in range(n_t)]
        drone_sets = [frozenset(i for i, v in zip(ids, assign) if v == n_t + d)
                      for d in range(n_d)]
        cost = 0.0
        routes = []
        feasible = True
        for t in range(n_t):
            entry = truck_tables[t].get(truck_sets[t])
            if entry is None:
                feasible = False
                break
            cost += entry[0]
            routes.append(entry[1])
        if not feasible:
            continue
        orders = []
        for d in range(n_d):
            entry = drone_tables[d].get(drone_sets[d])
            if entry is None:
                feasible = False
                break
            cost += entry[0]
            orders.append(entry[1])
        if not feasible:
            continue
        key = (cost, assign)
        if best is None or cost < best[0] - 1e-12 or \
                (abs(cost - best[0]) <= 1e-12 and assign < best[1]):
            best = (cost, assign, tuple(routes), tuple(orders))
    if best is None:
        raise ValueError("no feasible assignment exists")
    cost, _, routes, orders = best
    plan = make_plan(instance, [list(r) for r in routes], [list(o) for o in orders])
    return OracleResult(objective=cost, plan=plan, truck_routes=routes,
                        drone_orders=orders, n_assignments=count)


def cross_check(instance: Instance, scenarios: ScenarioSpace,
                caps: OracleCaps | None = None, tol: float = 1e-6) -> dict:
    """Compare oracle, monolith and decomposition optima on one instance."""
    from . import lshape
    from .milp import solve
    from .model import build_monolith

    bad = validate(instance)
    if bad:
        raise ValueError(f"invalid instance: {bad[0]}")
    oracle_result = solve_exhaustive(instance, scenarios, caps)
    problem, decoder = build_monolith(instance, scenarios)
    sol = solve(problem)
    _, _, breakdown = decoder.decode(sol)
    report = lshape.run(instance, scenarios)
    values = {
        "oracle": oracle_result.objective,
        "monolith": breakdown.total,
        "decomposed": report.breakdown.total,
    }
    gaps = {
        "oracle_vs_monolith": abs(values["oracle"] - values["monolith"]),
        "monolith_vs_decomposed": abs(values["monolith"] - values["decomposed"]),
        "oracle_vs_decomposed": abs(values["oracle"] - values["decomposed"]),
    }
    return {
        "objectives": values,
        "gaps": gaps,
        "flagged": sorted(name for name, g in gaps.items() if g > tol),
    }
