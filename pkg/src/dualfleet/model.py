"""Three-stage stochastic delivery model and its deterministic equivalent.

The planning problem has three decision stages: reserve vehicles, assign
customers, fix truck routes and drone serving orders (stage one, before
any uncertainty resolves); pay penalties for customers of grounded drones
(stage two, after takeoff conditions are observed); pay penalties and
repair for in-flight breakdowns (stage three). A breakdown strands the
whole order-suffix of the drone's customers: the broken-at customer and
everyone served after it.

:func:`build_monolith` compiles an instance plus scenario space into one
mixed-integer program over all stages and scenarios whose optimum equals
the stochastic optimum. :func:`evaluate_plan` computes the exact expected
payment of any first-stage plan, and decoding round-trips solver output
back into plan form.

Cost conventions follow the payment model exactly: a grounded drone pays
no travel cost but keeps its reservation cost; a drone that breaks mid-day
still pays the full round-trip travel term for every assigned customer;
one repair is charged per broken drone per scenario pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import milp
from .instance import DEPOT, Instance, Violation, WindowClass
from .scenarios import ScenarioSpace


class ModelTooLarge(ValueError):
    pass


class DecodeMismatch(RuntimeError):
    pass


class InfeasiblePlan(ValueError):
    def __init__(self, violation: Violation):
        super().__init__(str(violation))
        self.violation = violation


# ---------------------------------------------------------------------------
# Plans and costs.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FirstStagePlan:
    """Every stage-one decision.

    Orders: ``drone_order[d][i-1]`` is customer i's serving rank on drone d
    (0 when not assigned; assigned customers carry distinct ranks 1..n_d).
    ``truck_order`` carries the subtour-elimination ranks, informational
    only. ``order_disambig`` is the solver's pairwise order indicator and
    may be None for hand-built plans.
    """

    truck_used: tuple[bool, ...]
    drone_used: tuple[bool, ...]
    truck_arcs: tuple[tuple[tuple[int, int], ...], ...]
    truck_assign: tuple[tuple[int, ...], ...]
    drone_assign: tuple[tuple[int, ...], ...]
    truck_order: tuple[tuple[int, ...], ...]
    drone_order: tuple[tuple[int, ...], ...]
    order_disambig: tuple | None = None

    def drone_sequence(self, d: int) -> tuple[int, ...]:
        """Customers of drone d in serving order."""
        ranked = [(self.drone_order[d][i - 1], i) for i in self.drone_assign[d]]
        return tuple(i for _, i in sorted(ranked))

    def truck_route(self, t: int) -> tuple[int, ...]:
        """Depot-to-depot location sequence of truck t ((), when unused)."""
        arcs = dict(self.truck_arcs[t])
        if not arcs:
            return ()
        route = [DEPOT]
        loc = arcs.get(DEPOT)
        while loc is not None and loc != DEPOT and len(route) <= len(arcs) + 1:
            route.append(loc)
            loc = arcs.get(loc)
        route.append(DEPOT)
        return tuple(route)

    def n_drone_customers(self) -> int:
        return sum(len(a) for a in self.drone_assign)


@dataclass(frozen=True)
class RecourseOutcome:
    """Scenario-indexed recourse indicators implied by a plan.

    ``takeoff_penalties[i-1, d, w]``, ``breakdown_penalties[i-1, d, w, l]``
    and ``repairs[d, w, l]`` are 0/1 arrays over customers, drones and
    scenario indices.
    """

    takeoff_penalties: np.ndarray
    breakdown_penalties: np.ndarray
    repairs: np.ndarray


@dataclass(frozen=True)
class CostBreakdown:
    truck_initial: float
    drone_initial: float
    truck_travel: float
    expected_drone_travel: float
    expected_penalty: float
    expected_repair: float
    total: float

    @staticmethod
    def build(truck_initial, drone_initial, truck_travel,
              expected_drone_travel, expected_penalty, expected_repair):
        total = math.fsum([truck_initial, drone_initial, truck_travel,
                           expected_drone_travel, expected_penalty, expected_repair])
        return CostBreakdown(truck_initial, drone_initial, truck_travel,
                             expected_drone_travel, expected_penalty,
                             expected_repair, total)

    def to_dict(self) -> dict:
        return {
            "truck_initial": self.truck_initial,
            "drone_initial": self.drone_initial,
            "truck_travel": self.truck_travel,
            "expected_drone_travel": self.expected_drone_travel,
            "expected_penalty": self.expected_penalty,
            "expected_repair": self.expected_repair,
            "total": self.total,
        }


def make_plan(instance: Instance,
              truck_routes: list[list[int]],
              drone_orders: list[list[int]]) -> FirstStagePlan:
    """Build a plan from explicit visit sequences.

    ``truck_routes[t]`` lists customer ids in visiting order (no depot);
    ``drone_orders[d]`` lists customer ids in serving order. Vehicles with
    an empty sequence are unused.
    """
    c = instance.n_customers
    truck_used, truck_arcs, truck_assign, truck_order = [], [], [], []
    for seq in truck_routes:
        truck_used.append(bool(seq))
        truck_assign.append(tuple(sorted(seq)))
        order = [0] * c
        arcs = []
        if seq:
            tour = [DEPOT, *seq, DEPOT]
            arcs = sorted(zip(tour[:-1], tour[1:]))
            for pos, i in enumerate(seq, start=1):
                order[i - 1] = pos
        truck_arcs.append(tuple(arcs))
        truck_order.append(tuple(order))
    drone_used, drone_assign, drone_order = [], [], []
    for seq in drone_orders:
        drone_used.append(bool(seq))
        drone_assign.append(tuple(sorted(seq)))
        order = [0] * c
        for pos, i in enumerate(seq, start=1):
            order[i - 1] = pos
        drone_order.append(tuple(order))
    return FirstStagePlan(
        truck_used=tuple(truck_used),
        drone_used=tuple(drone_used),
        truck_arcs=tuple(truck_arcs),
        truck_assign=tuple(truck_assign),
        drone_assign=tuple(drone_assign),
        truck_order=tuple(truck_order),
        drone_order=tuple(drone_order),
    )


def plan_to_dict(plan: FirstStagePlan) -> dict:
    return {
        "trucks": [
            {"used": bool(plan.truck_used[t]),
             "customers": list(plan.truck_assign[t]),
             "arcs": [list(a) for a in plan.truck_arcs[t]],
             "route": list(plan.truck_route(t)),
             "order": list(plan.truck_order[t])}
            for t in range(len(plan.truck_used))
        ],
        "drones": [
            {"used": bool(plan.drone_used[d]),
             "customers": list(plan.drone_assign[d]),
             "serving_order": list(plan.drone_sequence(d))}
            for d in range(len(plan.drone_used))
        ],
    }


def plan_from_dict(doc: dict, instance: Instance) -> FirstStagePlan:
    c = instance.n_customers
    truck_used, truck_arcs, truck_assign, truck_order = [], [], [], []
    for entry in doc["trucks"]:
        truck_used.append(bool(entry["used"]))
        truck_assign.append(tuple(sorted(int(i) for i in entry["customers"])))
        truck_arcs.append(tuple(sorted((int(a), int(b)) for a, b in entry["arcs"])))
        order = entry.get("order")
        if order is None:
            order = [0] * c
            for pos, loc in enumerate(entry["route"][1:-1], start=1):
                order[loc - 1] = pos
        truck_order.append(tuple(int(v) for v in order))
    drone_used, drone_assign, drone_order = [], [], []
    for entry in doc["drones"]:
        drone_used.append(bool(entry["used"]))
        drone_assign.append(tuple(sorted(int(i) for i in entry["customers"])))
        order = [0] * c
        for pos, i in enumerate(entry["serving_order"], start=1):
            order[int(i) - 1] = pos
        drone_order.append(tuple(order))
    return FirstStagePlan(
        truck_used=tuple(truck_used),
        drone_used=tuple(drone_used),
        truck_arcs=tuple(truck_arcs),
        truck_assign=tuple(truck_assign),
        drone_assign=tuple(drone_assign),
        truck_order=tuple(truck_order),
        drone_order=tuple(drone_order),
    )


# ---------------------------------------------------------------------------
# Plan feasibility and exact expected cost.
# ---------------------------------------------------------------------------

def validate_plan(plan: FirstStagePlan, instance: Instance,
                  check_limits: bool = True) -> list[Violation]:
    """First-stage feasibility; empty list when the plan is admissible.

    With ``check_limits`` off, daily distance/time budgets are skipped,
    which is how plans from the relaxed baseline are costed.
    """
    out: list[Violation] = []
    c = instance.n_customers
    n_t, n_d = len(instance.trucks), len(instance.drones)
    if len(plan.truck_used) != n_t or len(plan.drone_used) != n_d:
        return [Violation("plan", "vehicle counts do not match the instance")]

    owner = {i: 0 for i in instance.customer_ids}
    for t in range(n_t):
        for i in plan.truck_assign[t]:
            owner[i] += 1
    for d in range(n_d):
        for i in plan.drone_assign[d]:
            owner[i] += 1
    for i, count in owner.items():
        if count != 1:
            out.append(Violation("allocation.unique",
                                 "each customer needs exactly one vehicle",
                                 f"customer {i} has {count}"))

    for t, spec in enumerate(instance.trucks):
        assigned = plan.truck_assign[t]
        if assigned and not plan.truck_used[t]:
            out.append(Violation("linking.truck_used",
                                 "assigned truck must be reserved", f"truck {spec.id}"))
        load = sum(instance.weight(i) for i in assigned)
        if load > spec.capacity_kg + 1e-9:
            out.append(Violation("truck.capacity", "load exceeds capacity",
                                 f"truck {spec.id}: {load} > {spec.capacity_kg}"))
        arcs = plan.truck_arcs[t]
        if assigned:
            route = plan.truck_route(t)
            visited = tuple(sorted(route[1:-1]))
            degree_ok = (len(arcs) == len(assigned) + 1)
            if not degree_ok or visited != assigned or route[0] != DEPOT or route[-1] != DEPOT:
                out.append(Violation("route.structure",
                                     "arcs must form one depot-rooted tour over "
                                     "the assigned customers", f"truck {spec.id}"))
                continue
        elif arcs:
            out.append(Violation("route.structure", "unloaded truck must have no arcs",
                                 f"truck {spec.id}"))
        if check_limits:
            dist = sum(instance.distances_km[i, j] for i, j in arcs)
            if dist > spec.daily_distance_km + 1e-9:
                out.append(Violation("truck.daily_distance", "route too long",
                                     f"truck {spec.id}: {dist} km"))
            hours = sum(instance.distances_km[i, j] / spec.speed(i, j)
                        + spec.dropoff_time_h for i, j in arcs)
            if hours > spec.daily_time_h + 1e-9:
                out.append(Violation("truck.daily_time", "route exceeds working hours",
                                     f"truck {spec.id}: {hours} h"))

    for d, spec in enumerate(instance.drones):
        assigned = plan.drone_assign[d]
        if assigned and not plan.drone_used[d]:
            out.append(Violation("linking.drone_used",
                                 "assigned drone must be reserved", f"drone {spec.id}"))
        for i in assigned:
            if instance.weight(i) > spec.capacity_kg + 1e-9:
                out.append(Violation("drone.capacity", "package too heavy",
                                     f"drone {spec.id}, customer {i}"))
            if instance.roundtrip_km(i) > spec.trip_distance_km + 1e-9:
                out.append(Violation("drone.trip_range", "round trip beyond per-trip limit",
                                     f"drone {spec.id}, customer {i}"))
        if check_limits:
            total = sum(instance.roundtrip_km(i) for i in assigned)
            if total > spec.daily_distance_km + 1e-9:
                out.append(Violation("drone.daily_distance", "daily flying limit exceeded",
                                     f"drone {spec.id}: {total} km"))
        ranks = sorted(plan.drone_order[d][i - 1] for i in assigned)
        if ranks != list(range(1, len(assigned) + 1)):
            out.append(Violation("orders.permutation",
                                 "assigned customers need distinct ranks 1..n",
                                 f"drone {spec.id}: {ranks}"))
        for i in instance.customer_ids:
            if i not in assigned and plan.drone_order[d][i - 1] != 0:
                out.append(Violation("orders.unassigned",
                                     "unassigned customers carry rank 0",
                                     f"drone {spec.id}, customer {i}"))

    if instance.has_time_windows:
        out.extend(_validate_windows(plan, instance))
    return out


def _validate_windows(plan: FirstStagePlan, instance: Instance) -> list[Violation]:
    out = []
    morning = set(instance.morning_ids())
    afternoon = set(instance.afternoon_ids())
    l_m = instance.morning_limit_h if instance.morning_limit_h is not None else math.inf
    l_a = instance.afternoon_limit_h if instance.afternoon_limit_h is not None else math.inf

    for t, spec in enumerate(instance.trucks):
        route = plan.truck_route(t)
        inner = route[1:-1]
        seen_afternoon = False
        for i in inner:
            if i in afternoon:
                seen_afternoon = True
            elif i in morning and seen_afternoon:
                out.append(Violation("windows.order",
                                     "morning customers must precede afternoon ones",
                                     f"truck {spec.id}"))
                break
        arcs = list(zip(route[:-1], route[1:]))
        t_morning = sum(instance.distances_km[i, j] / spec.speed(i, j) + spec.dropoff_time_h
                        for i, j in arcs if j in morning)
        if t_morning > l_m + 1e-9:
            out.append(Violation("windows.truck_morning_budget",
                                 "morning leg exceeds the slot budget", f"truck {spec.id}"))
        t_afternoon = sum(instance.distances_km[i, j] / spec.speed(i, j) + spec.dropoff_time_h
                          for i, j in arcs
                          if i != DEPOT and (j in afternoon or j == DEPOT))
        if t_afternoon > l_a + 1e-9:
            out.append(Violation("windows.truck_afternoon_budget",
                                 "afternoon leg exceeds the slot budget", f"truck {spec.id}"))

    for d, spec in enumerate(instance.drones):
        seq = plan.drone_sequence(d)
        seen_afternoon = False
        for i in seq:
            if i in afternoon:
                seen_afternoon = True
            elif i in morning and seen_afternoon:
                out.append(Violation("windows.order",
                                     "morning customers must precede afternoon ones",
                                     f"drone {spec.id}"))
                break
        fly_m = sum(instance.roundtrip_km(i) / spec.speed_kmh
                    for i in plan.drone_assign[d] if i in morning)
        if fly_m > l_m + 1e-9:
            out.append(Violation("windows.drone_morning_budget",
                                 "morning flights exceed the slot budget",
                                 f"drone {spec.id}"))
        fly_a = sum(instance.roundtrip_km(i) / spec.speed_kmh
                    for i in plan.drone_assign[d] if i in afternoon)
        if fly_a > l_a + 1e-9:
            out.append(Violation("windows.drone_afternoon_budget",
                                 "afternoon flights exceed the slot budget",
                                 f"drone {spec.id}"))
    return out


def stranded_suffix(plan: FirstStagePlan, d: int,
                    breaks_column: tuple[int, ...] | np.ndarray) -> tuple[int, ...]:
    """Customers of drone d penalized under the given breakdown column.

    The first broken customer in serving order strands itself and every
    later-served customer; earlier ones are already delivered.
    """
    assigned = plan.drone_assign[d]
    broken_ranks = [plan.drone_order[d][i - 1] for i in assigned if breaks_column[i - 1]]
    if not broken_ranks:
        return ()
    first = min(broken_ranks)
    return tuple(i for i in assigned if plan.drone_order[d][i - 1] >= first)


def canonical_recourse(plan: FirstStagePlan, instance: Instance,
                       scenarios: ScenarioSpace) -> RecourseOutcome:
    """Minimal recourse indicators implied by the plan under every scenario."""
    c = instance.n_customers
    n_d = len(instance.drones)
    n_w = len(scenarios.takeoff)
    n_l = len(scenarios.breakdown)
    zb = np.zeros((c, n_d, n_w), dtype=np.int8)
    za = np.zeros((c, n_d, n_w, n_l), dtype=np.int8)
    zm = np.zeros((n_d, n_w, n_l), dtype=np.int8)
    for w, tko in enumerate(scenarios.takeoff):
        for d in range(n_d):
            if tko.grounded[d]:
                for i in plan.drone_assign[d]:
                    zb[i - 1, d, w] = 1
                continue
            for l, brk in enumerate(scenarios.breakdown):
                col = brk.drone_column(d)
                suffix = stranded_suffix(plan, d, col)
                for i in suffix:
                    za[i - 1, d, w, l] = 1
                if suffix:
                    zm[d, w, l] = 1
    return RecourseOutcome(zb, za, zm)


def expected_cost(plan: FirstStagePlan, instance: Instance,
                  scenarios: ScenarioSpace) -> CostBreakdown:
    """Exact expected payment of a plan; no feasibility checks."""
    p = instance.costs.penalty
    m = instance.costs.repair
    truck_initial = math.fsum(spec.initial_cost
                              for t, spec in enumerate(instance.trucks)
                              if plan.truck_used[t])
    drone_initial = math.fsum(spec.initial_cost
                              for d, spec in enumerate(instance.drones)
                              if plan.drone_used[d])
    truck_travel = math.fsum(instance.costs.truck_cost(i, j)
                             for t in range(len(instance.trucks))
                             for i, j in plan.truck_arcs[t])
    travel_terms: list[float] = []
    penalty_terms: list[float] = []
    repair_terms: list[float] = []
    for tko in scenarios.takeoff:
        pw = tko.probability
        for d in range(len(instance.drones)):
            assigned = plan.drone_assign[d]
            if tko.grounded[d]:
                penalty_terms.append(pw * p * len(assigned))
                continue
            travel_terms.append(pw * math.fsum(
                instance.costs.drone_cost(i) for i in assigned))
            for brk in scenarios.breakdown:
                pl = brk.probability
                suffix = stranded_suffix(plan, d, brk.drone_column(d))
                if suffix:
                    penalty_terms.append(pw * pl * p * len(suffix))
                    repair_terms.append(pw * pl * m)
    return CostBreakdown.build(
        truck_initial=truck_initial,
        drone_initial=drone_initial,
        truck_travel=truck_travel,
        expected_drone_travel=math.fsum(travel_terms),
        expected_penalty=math.fsum(penalty_terms),
        expected_repair=math.fsum(repair_terms),
    )


def evaluate_plan(plan: FirstStagePlan, instance: Instance,
                  scenarios: ScenarioSpace) -> CostBreakdown:
    """Expected payment of a feasible plan; raises on the first violation."""
    violations = validate_plan(plan, instance)
    if violations:
        raise InfeasiblePlan(violations[0])
    return expected_cost(plan, instance, scenarios)


# ---------------------------------------------------------------------------
# MILP assembly.
# ---------------------------------------------------------------------------

class ModelBuilder:
    """Incremental MILP assembly with named variables."""

    def __init__(self):
        self.names: list[str] = []
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.integer: list[bool] = []
        self.obj: list[float] = []
        self.cons: list[milp.LinearConstraint] = []
        self.offset = 0.0

    def var(self, name: str, lo: float, hi: float, integer: bool,
            obj: float = 0.0) -> int:
        self.names.append(name)
        self.lo.append(lo)
        self.hi.append(hi)
        self.integer.append(integer)
        self.obj.append(obj)
        return len(self.names) - 1

    def binary(self, name: str, obj: float = 0.0) -> int:
        return self.var(name, 0.0, 1.0, True, obj)

    def add_obj(self, col: int, coeff: float) -> None:
        self.obj[col] += coeff

    def add(self, terms: dict[int, float], relation: str, rhs: float,
            name: str = "") -> None:
        self.cons.append(milp.LinearConstraint.from_dict(terms, relation, rhs, name))

    @property
    def num_vars(self) -> int:
        return len(self.names)

    def problem(self) -> milp.MilpProblem:
        return milp.MilpProblem(
            num_vars=self.num_vars,
            objective=np.asarray(self.obj, dtype=float),
            constraints=self.cons,
            bounds=np.column_stack([np.asarray(self.lo), np.asarray(self.hi)]),
            integrality=np.asarray(self.integer, dtype=bool),
            names=self.names,
            objective_offset=self.offset,
        )


@dataclass
class FirstStageVars:
    """Column handles for the stage-one block, shared by all model builders."""

    w_truck: dict
    w_drone: dict
    v: dict            # (i, j, t) -> column, i != j over locations
    x_truck: dict      # (i, t)
    x_drone: dict      # (i, d)
    s: dict            # (i, t)
    u: dict | None     # (i, d)
    m: dict | None     # (i, j, d), i != j over customers
    delta: int


def emit_first_stage(mb: ModelBuilder, instance: Instance, *,
                     include_orders: bool = True,
                     include_drone_window_order: bool = True) -> FirstStageVars:
    """Reservation, allocation, routing and ordering block.

    Emits initial-cost linking, capacities, per-trip and daily distance
    limits, the truck time budget, unique allocation, degree-balanced
    depot-rooted routing with subtour-elimination ranks, drone serving
    orders with pairwise-distinct ranks, and hard morning/afternoon slot
    constraints when the instance defines window classes.
    """
    c = instance.n_customers
    locs = range(c + 1)
    customers = list(instance.customer_ids)
    trucks = range(len(instance.trucks))
    drones = range(len(instance.drones))
    k = instance.distances_km
    delta = c + 1

    w_truck = {t: mb.binary(f"Wt[{t}]", obj=instance.trucks[t].initial_cost)
               for t in trucks}
    w_drone = {d: mb.binary(f"Wd[{d}]", obj=instance.drones[d].initial_cost)
               for d in drones}
    v = {}
    for t in trucks:
        for i in locs:
            for j in locs:
                if i != j:
                    v[i, j, t] = mb.binary(f"V[{i},{j},{t}]",
                                           obj=instance.costs.truck_cost(i, j))
    x_truck = {(i, t): mb.binary(f"Xt[{i},{t}]") for t in trucks for i in customers}
    x_drone = {(i, d): mb.binary(f"Xd[{i},{d}]") for d in drones for i in customers}
    s = {(i, t): mb.var(f"S[{i},{t}]", 0, c, True) for t in trucks for i in customers}
    u = mv = None
    if include_orders:
        u = {(i, d): mb.var(f"U[{i},{d}]", 0, c, True) for d in drones for i in customers}
        mv = {(i, j, d): mb.binary(f"M[{i},{j},{d}]")
              for d in drones for i in customers for j in customers if i != j}

    for t in trucks:
        mb.add({x_truck[i, t]: 1.0 for i in customers} | {w_truck[t]: -float(delta)},
               "<=", 0.0, f"use_truck[{t}]")
        for i in customers:
            # disaggregated form of the same linking; tightens the relaxation
            mb.add({x_truck[i, t]: 1.0, w_truck[t]: -1.0}, "<=", 0.0,
                   f"use_truck_one[{i},{t}]")
        mb.add({x_truck[i, t]: instance.weight(i) for i in customers},
               "<=", instance.trucks[t].capacity_kg, f"truck_cap[{t}]")
    for d in drones:
        mb.add({x_drone[i, d]: 1.0 for i in customers} | {w_drone[d]: -float(delta)},
               "<=", 0.0, f"use_drone[{d}]")
        for i in customers:
            mb.add({x_drone[i, d]: 1.0, w_drone[d]: -1.0}, "<=", 0.0,
                   f"use_drone_one[{i},{d}]")
        for i in customers:
            mb.add({x_drone[i, d]: instance.weight(i)}, "<=",
                   instance.drones[d].capacity_kg, f"drone_cap[{i},{d}]")
            mb.add({x_drone[i, d]: instance.roundtrip_km(i)}, "<=",
                   instance.drones[d].trip_distance_km, f"trip[{i},{d}]")
        mb.add({x_drone[i, d]: instance.roundtrip_km(i) for i in customers},
               "<=", instance.drones[d].daily_distance_km, f"fly_day[{d}]")
    for t in trucks:
        mb.add({v[i, j, t]: float(k[i, j]) for i in locs for j in locs if i != j},
               "<=", instance.trucks[t].daily_distance_km, f"drive_day[{t}]")
        spec = instance.trucks[t]
        mb.add({v[i, j, t]: float(k[i, j]) / spec.speed(i, j) + spec.dropoff_time_h
                for i in locs for j in locs if i != j},
               "<=", spec.daily_time_h, f"work_hours[{t}]")

    for i in customers:
        terms = {x_truck[i, t]: 1.0 for t in trucks}
        terms.update({x_drone[i, d]: 1.0 for d in drones})
        mb.add(terms, "=", 1.0, f"alloc[{i}]")

    for t in trucks:
        mb.add({v[DEPOT, i, t]: 1.0 for i in customers}, "<=", 1.0, f"depart[{t}]")
        mb.add({v[i, DEPOT, t]: 1.0 for i in customers}, "<=", 1.0, f"return[{t}]")
        for i in customers:
            mb.add({v[i2, i, t]: 1.0 for i2 in locs if i2 != i} | {x_truck[i, t]: -1.0},
                   "=", 0.0, f"deg_in[{i},{t}]")
            mb.add({v[i, j2, t]: 1.0 for j2 in locs if j2 != i} | {x_truck[i, t]: -1.0},
                   "=", 0.0, f"deg_out[{i},{t}]")
            # valid for depot-rooted single cycles; tightens the relaxation
            mb.add({v[DEPOT, j, t]: 1.0 for j in customers} | {x_truck[i, t]: -1.0},
                   ">=", 0.0, f"depot_link[{i},{t}]")
        for i in customers:
            for j in customers:
                if i != j:
                    # rank-based subtour elimination, lifted with the reverse
                    # arc (kills two-cycles in the relaxation as well)
                    mb.add({s[i, t]: 1.0, s[j, t]: -1.0, v[i, j, t]: float(c),
                            v[j, i, t]: float(c - 2)},
                           "<=", float(c - 1), f"mtz[{i},{j},{t}]")

    if include_orders:
        for d in drones:
            for i in customers:
                mb.add({x_drone[i, d]: 1.0, u[i, d]: -1.0}, "<=", 0.0,
                       f"order_min[{i},{d}]")
            for j in customers:
                mb.add({u[j, d]: 1.0} | {x_drone[i, d]: -1.0 for i in customers},
                       "<=", 0.0, f"order_cap[{j},{d}]")
            for i in customers:
                for j in customers:
                    if i == j:
                        continue
                    mb.add({u[i, d]: 1.0, u[j, d]: -1.0, mv[i, j, d]: -float(delta),
                            x_drone[i, d]: 1.0}, "<=", 0.0, f"rank_lt[{i},{j},{d}]")
                    mb.add({u[i, d]: 1.0, u[j, d]: -1.0, mv[i, j, d]: -float(delta),
                            x_drone[i, d]: -1.0}, ">=", -float(delta),
                           f"rank_gt[{i},{j},{d}]")

    if instance.has_time_windows:
        _emit_time_windows(mb, instance, v, x_truck, x_drone, s, u, delta,
                           include_drone_window_order and include_orders)
    return FirstStageVars(w_truck=w_truck, w_drone=w_drone, v=v,
                          x_truck=x_truck, x_drone=x_drone, s=s, u=u, m=mv,
                          delta=delta)


def _emit_time_windows(mb, instance, v, x_truck, x_drone, s, u, delta,
                       drone_order_rows: bool) -> None:
    """Hard morning/afternoon slots.

    Precedence is enforced pairwise for customers on the same vehicle;
    per-slot travel-time budgets bound the morning and afternoon legs.
    """
    c = instance.n_customers
    locs = range(c + 1)
    customers = list(instance.customer_ids)
    morning = instance.morning_ids()
    afternoon = instance.afternoon_ids()
    l_m = instance.morning_limit_h
    l_a = instance.afternoon_limit_h
    k = instance.distances_km

    for t in range(len(instance.trucks)):
        spec = instance.trucks[t]
        for i in morning:
            for j in afternoon:
                mb.add({s[i, t]: 1.0, s[j, t]: -1.0,
                        x_truck[i, t]: float(delta), x_truck[j, t]: float(delta)},
                       "<=", 2.0 * delta, f"tw_truck[{i},{j},{t}]")
        if morning:
            mb.add({v[i2, mcust, t]: float(k[i2, mcust]) / spec.speed(i2, mcust)
                    + spec.dropoff_time_h
                    for mcust in morning for i2 in locs if i2 != mcust},
                   "<=", l_m, f"tw_truck_morning[{t}]")
        targets = [*afternoon, DEPOT]
        terms = {}
        for i in customers:
            for j in targets:
                if i != j:
                    terms[v[i, j, t]] = float(k[i, j]) / spec.speed(i, j) \
                        + spec.dropoff_time_h
        if terms:
            mb.add(terms, "<=", l_a, f"tw_truck_afternoon[{t}]")

    for d in range(len(instance.drones)):
        spec = instance.drones[d]
        if drone_order_rows and u is not None:
            for i in morning:
                for j in afternoon:
                    mb.add({u[i, d]: 1.0, u[j, d]: -1.0,
                            x_drone[i, d]: float(delta), x_drone[j, d]: float(delta)},
                           "<=", 2.0 * delta, f"tw_drone[{i},{j},{d}]")
        if morning:
            mb.add({x_drone[i, d]: instance.roundtrip_km(i) / spec.speed_kmh
                    for i in morning}, "<=", l_m, f"tw_fly_morning[{d}]")
        if afternoon:
            mb.add({x_drone[i, d]: instance.roundtrip_km(i) / spec.speed_kmh
                    for i in afternoon}, "<=", l_a, f"tw_fly_afternoon[{d}]")


@dataclass
class BuildOptions:
    max_variables: int = 20000


@dataclass
class MonolithDecoder:
    """Maps solver output back to plan, recourse and cost breakdown."""

    instance: Instance
    scenarios: ScenarioSpace
    fs: FirstStageVars
    problem: milp.MilpProblem

    def decode(self, solution: milp.MilpSolution):
        if solution.status not in (milp.Status.OPTIMAL, milp.Status.GAP_LIMIT) \
                or solution.values is None:
            raise DecodeMismatch(f"nothing to decode from status {solution.status}")
        plan = decode_first_stage(solution.values, self.instance, self.fs)
        violations = validate_plan(plan, self.instance)
        if violations:
            raise DecodeMismatch(f"decoded plan infeasible: {violations[0]}")
        recourse = canonical_recourse(plan, self.instance, self.scenarios)
        breakdown = expected_cost(plan, self.instance, self.scenarios)
        if solution.status is milp.Status.OPTIMAL and \
                abs(breakdown.total - solution.objective) > 1e-6:
            raise DecodeMismatch(
                f"decoded total {breakdown.total!r} does not match MILP "
                f"objective {solution.objective!r}")
        return plan, recourse, breakdown


def decode_first_stage(values: np.ndarray, instance: Instance,
                       fs: FirstStageVars) -> FirstStagePlan:
    c = instance.n_customers
    trucks = range(len(instance.trucks))
    drones = range(len(instance.drones))

    def on(col: int) -> bool:
        return values[col] > 0.5

    truck_used = tuple(on(fs.w_truck[t]) for t in trucks)
    drone_used = tuple(on(fs.w_drone[d]) for d in drones)
    truck_arcs = tuple(
        tuple(sorted((i, j) for (i, j, t2), col in fs.v.items()
                     if t2 == t and on(col)))
        for t in trucks)
    truck_assign = tuple(
        tuple(i for i in instance.customer_ids if on(fs.x_truck[i, t]))
        for t in trucks)
    drone_assign = tuple(
        tuple(i for i in instance.customer_ids if on(fs.x_drone[i, d]))
        for d in drones)
    truck_order = tuple(
        tuple(int(round(values[fs.s[i, t]])) for i in instance.customer_ids)
        for t in trucks)
    if fs.u is not None:
        drone_order = tuple(
            tuple(int(round(values[fs.u[i, d]])) if i in drone_assign[d] else 0
                  for i in instance.customer_ids)
            for d in drones)
    else:
        drone_order = tuple(
            tuple(0 for _ in instance.customer_ids) for _ in drones)
    disambig = None
    if fs.m is not None:
        disambig = tuple(sorted((i, j, d) for (i, j, d), col in fs.m.items() if on(col)))
    return FirstStagePlan(
        truck_used=truck_used,
        drone_used=drone_used,
        truck_arcs=truck_arcs,
        truck_assign=truck_assign,
        drone_assign=drone_assign,
        truck_order=truck_order,
        drone_order=drone_order,
        order_disambig=disambig,
    )


def build_monolith(instance: Instance, scenarios: ScenarioSpace,
                   options: BuildOptions | None = None
                   ) -> tuple[milp.MilpProblem, MonolithDecoder]:
    """Compile the full deterministic equivalent over all scenario pairs.

    Recourse blocks that cannot activate contribute nothing to the optimum
    and are not materialized: grounded drones have their takeoff penalties
    tied directly to the assignment, scenario pairs without breakdowns for
    a drone stay out, and zero-probability scenarios carry no weight. The
    decoder reconstructs the full recourse indicator arrays canonically,
    so round-trips are exact.
    """
    options = options or BuildOptions()
    problems = scenarios.check()
    if problems:
        raise ValueError("; ".join(problems))
    if scenarios.n_drones != len(instance.drones) or \
            (instance.n_customers and scenarios.n_customers != instance.n_customers):
        raise ValueError("scenario space dimensions do not match the instance")

    mb = ModelBuilder()
    fs = emit_first_stage(mb, instance, include_orders=True)
    customers = list(instance.customer_ids)
    p = instance.costs.penalty
    m_cost = instance.costs.repair
    delta = fs.delta

    # expected drone travel: charged per assigned customer whenever flying
    for d in range(len(instance.drones)):
        flying_prob = math.fsum(t.probability for t in scenarios.takeoff
                                if not t.grounded[d])
        if flying_prob:
            for i in customers:
                mb.add_obj(fs.x_drone[i, d],
                           flying_prob * instance.costs.drone_cost(i))

    # stage two: grounded drones pay the penalty for every assigned customer
    for w, tko in enumerate(scenarios.takeoff):
        if tko.probability == 0.0:
            continue
        for d in range(len(instance.drones)):
            if not tko.grounded[d]:
                continue
            for i in customers:
                zb = mb.binary(f"Zb[{i},{d},{w}]", obj=p * tko.probability)
                mb.add({zb: 1.0, fs.x_drone[i, d]: -1.0}, "=", 0.0,
                       f"grounded[{i},{d},{w}]")

    # stage three: breakdown suffix penalties and repairs
    for w, tko in enumerate(scenarios.takeoff):
        if tko.probability == 0.0:
            continue
        for d in range(len(instance.drones)):
            if tko.grounded[d]:
                continue
            for l, brk in enumerate(scenarios.breakdown):
                weight = tko.probability * brk.probability
                if weight == 0.0:
                    continue
                column = brk.drone_column(d)
                if not any(column):
                    continue
                za = {i: mb.binary(f"Za[{i},{d},{w},{l}]", obj=p * weight)
                      for i in customers}
                zm = mb.binary(f"Zm[{d},{w},{l}]", obj=m_cost * weight)
                for i in customers:
                    if column[i - 1]:
                        mb.add({fs.x_drone[i, d]: 1.0, za[i]: -1.0}, "<=", 0.0,
                               f"break[{i},{d},{w},{l}]")
                    mb.add({za[i]: 1.0, zm: -1.0}, "<=", 0.0,
                           f"repair[{i},{d},{w},{l}]")
                if not all(column):
                    # suffix propagation; redundant when every customer breaks
                    for i in customers:
                        for j in customers:
                            if i != j:
                                mb.add({fs.u[i, d]: 1.0, fs.u[j, d]: -1.0,
                                        za[i]: -float(delta), za[j]: float(delta)},
                                       "<=", float(delta),
                                       f"suffix[{i},{j},{d},{w},{l}]")

    if mb.num_vars > options.max_variables:
        raise ModelTooLarge(
            f"{mb.num_vars} variables exceed the cap of {options.max_variables}")
    problem = mb.problem()
    return problem, MonolithDecoder(instance, scenarios, fs, problem)
