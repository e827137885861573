"""Seeded random instances for studies and verification suites.

Instances are Euclidean (coordinates kept for rendering), always feasible
for at least one truck, and sized for exhaustive cross-checking. Three
uncertainty structures are supported:

* ``whole_drone``: breakdown scenarios ground entire drones (a random
  drone subset breaks at every customer); takeoff scenarios are arbitrary
  random grounding patterns.
* ``two_point``: the classic pair of all-fly/all-grounded takeoff
  scenarios plus no-break/prefix-break breakdown scenarios.
* ``general``: independent Bernoulli entries in the breakdown matrices,
  exercising the stranded-suffix machinery with partial failures.
"""

from __future__ import annotations

import math

import numpy as np

from .instance import (Customer, DroneSpec, Instance, TruckSpec,
                       default_cost_model)
from .scenarios import (BreakdownScenario, ScenarioSpace, TakeoffScenario,
                        two_point_spaces)


def _euclidean(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def _route_length_upper_bound(k: np.ndarray) -> float:
    # nearest-neighbour tour over every location, a generous single-truck bound
    n = k.shape[0]
    unvisited = set(range(1, n))
    loc = 0
    total = 0.0
    while unvisited:
        nxt = min(unvisited, key=lambda j: k[loc, j])
        total += k[loc, nxt]
        unvisited.remove(nxt)
        loc = nxt
    return total + k[loc, 0]


def make_random_instance(seed: int, n_customers: int = 5, n_trucks: int = 1,
                         n_drones: int = 2, generous_limits: bool = False,
                         name: str | None = None) -> Instance:
    rng = np.random.default_rng(seed)
    c = n_customers
    coords = np.vstack([[5.0, 5.0], rng.uniform(0.0, 10.0, size=(c, 2))])
    k = _euclidean(coords)
    tour = _route_length_upper_bound(k)

    customers = tuple(Customer(id=i, package_weight_kg=1.0) for i in range(1, c + 1))
    trucks = []
    for t in range(n_trucks):
        daily_km = tour * rng.uniform(1.1, 2.0) if not generous_limits else 10_000.0
        speed = rng.uniform(35.0, 60.0)
        dropoff = rng.uniform(0.05, 0.25)
        daily_h = (daily_km / speed + (c + 1) * dropoff) * rng.uniform(1.1, 1.8) \
            if not generous_limits else 1_000.0
        trucks.append(TruckSpec(
            id=t, initial_cost=float(rng.uniform(20.0, 80.0)),
            capacity_kg=float(rng.uniform(2 * c, 10 * c)),
            daily_distance_km=float(daily_km), daily_time_h=float(daily_h),
            dropoff_time_h=float(dropoff), speed_kmh=float(speed)))
    drones = []
    for d in range(n_drones):
        trip = float(rng.uniform(8.0, 18.0))
        drones.append(DroneSpec(
            id=d, initial_cost=float(rng.uniform(3.0, 25.0)),
            capacity_kg=float(rng.uniform(1.0, 3.0)),
            daily_distance_km=float(trip * rng.uniform(1.5, 4.0)),
            trip_distance_km=trip,
            speed_kmh=float(rng.uniform(30.0, 80.0))))

    base = default_cost_model(k,
                              penalty=float(rng.uniform(0.0, 30.0)),
                              repair=float(rng.uniform(0.0, 60.0)))
    costs = type(base)(
        truck_arc=base.truck_arc * rng.uniform(0.5, 3.0),
        drone_roundtrip=base.drone_roundtrip * rng.uniform(0.5, 4.0),
        penalty=base.penalty,
        repair=base.repair,
    )
    return Instance(
        customers=customers, trucks=tuple(trucks), drones=tuple(drones),
        distances_km=k, costs=costs, coords=coords,
        name=name or f"random-{seed}-c{c}t{n_trucks}d{n_drones}")


def _normalized(rng: np.random.Generator, n: int) -> list[float]:
    w = rng.uniform(0.05, 1.0, size=n)
    w = w / w.sum()
    return [float(v) for v in w]


def make_random_scenarios(seed: int, instance: Instance,
                          n_takeoff: int = 2, n_breakdown: int = 2,
                          structure: str = "whole_drone") -> ScenarioSpace:
    rng = np.random.default_rng(seed + 10_000)
    c = instance.n_customers
    n_d = len(instance.drones)

    if structure == "two_point":
        return two_point_spaces(float(rng.uniform(0.0, 0.4)),
                                float(rng.uniform(0.0, 0.4)),
                                float(rng.uniform(0.2, 1.0)), instance)

    takeoff_probs = _normalized(rng, n_takeoff)
    takeoff = [TakeoffScenario(grounded=tuple([0] * n_d),
                               probability=takeoff_probs[0])]
    for w in range(1, n_takeoff):
        pattern = tuple(int(v) for v in rng.integers(0, 2, size=n_d))
        takeoff.append(TakeoffScenario(grounded=pattern,
                                       probability=takeoff_probs[w]))

    breakdown_probs = _normalized(rng, n_breakdown)
    no_break = tuple(tuple([0] * n_d) for _ in range(c))
    breakdown = [BreakdownScenario(breaks=no_break, probability=breakdown_probs[0])]
    for l in range(1, n_breakdown):
        if structure == "whole_drone":
            subset = rng.integers(0, 2, size=n_d)
            if not subset.any():
                subset[int(rng.integers(n_d))] = 1
            rows = tuple(tuple(int(subset[d]) for d in range(n_d)) for _ in range(c))
        elif structure == "general":
            mat = (rng.random((c, n_d)) < 0.35).astype(int)
            rows = tuple(tuple(int(v) for v in row) for row in mat)
        else:
            raise ValueError(f"unknown structure {structure!r}")
        breakdown.append(BreakdownScenario(breaks=rows, probability=breakdown_probs[l]))
    return ScenarioSpace(takeoff=tuple(takeoff), breakdown=tuple(breakdown))
