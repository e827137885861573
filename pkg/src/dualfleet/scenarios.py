"""Discrete uncertainty model for drone operations.

Two independent scenario sets drive the stochastic program: takeoff
scenarios (which drones are grounded before departure, observed before
delivery starts) and breakdown scenarios (a customer x drone matrix of
in-flight failures, observed during delivery). Scenario objects are
immutable value types, so they hash and compare by content and are safe
cache keys.

Zero-probability scenarios are kept, never pruned: scenario indices stay
stable across experiments and reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .instance import Instance

PROB_SUM_TOL = 1e-9
MAX_ENUMERATED_DRONES = 20


class ScenarioOverflowError(ValueError):
    """Raised when full takeoff enumeration would need more than 2^20 states."""


@dataclass(frozen=True)
class TakeoffScenario:
    """One realization of which drones cannot leave the depot.

    ``grounded[d] == 1`` means drone d stays on the ground.
    """

    grounded: tuple[int, ...]
    probability: float

    def grounded_array(self) -> np.ndarray:
        return np.asarray(self.grounded, dtype=np.int8)


@dataclass(frozen=True)
class BreakdownScenario:
    """One realization of in-flight failures.

    ``breaks[i-1][d] == 1`` means drone d breaks down while serving
    customer i. Entries for pairs the plan never serves are inert.
    """

    breaks: tuple[tuple[int, ...], ...]
    probability: float

    def breaks_array(self) -> np.ndarray:
        return np.asarray(self.breaks, dtype=np.int8)

    def drone_column(self, d: int) -> tuple[int, ...]:
        return tuple(row[d] for row in self.breaks)


@dataclass(frozen=True)
class ScenarioSpace:
    """The full discrete uncertainty model: both scenario lists."""

    takeoff: tuple[TakeoffScenario, ...]
    breakdown: tuple[BreakdownScenario, ...]

    @property
    def n_drones(self) -> int:
        return len(self.takeoff[0].grounded)

    @property
    def n_customers(self) -> int:
        return len(self.breakdown[0].breaks)

    def check(self) -> list[str]:
        """Invariant check; returns human-readable problems, empty if fine."""
        problems = []
        if not self.takeoff:
            problems.append("takeoff scenario list is empty")
        if not self.breakdown:
            problems.append("breakdown scenario list is empty")
        for label, scens in (("takeoff", self.takeoff), ("breakdown", self.breakdown)):
            if not scens:
                continue
            total = math.fsum(s.probability for s in scens)
            if abs(total - 1.0) > PROB_SUM_TOL:
                problems.append(f"{label} probabilities sum to {total!r}, not 1")
            if any(s.probability < 0 for s in scens):
                problems.append(f"{label} probabilities must be nonnegative")
        return problems


def deterministic_space(n_customers: int, n_drones: int) -> ScenarioSpace:
    """Single all-fly, no-breakdown scenario pair (the certainty case)."""
    zero_row = tuple([0] * n_drones)
    return ScenarioSpace(
        takeoff=(TakeoffScenario(grounded=zero_row, probability=1.0),),
        breakdown=(BreakdownScenario(
            breaks=tuple(zero_row for _ in range(n_customers)), probability=1.0),),
    )


def enumerate_takeoff(n_drones: int, per_drone_ground_prob: float) -> list[TakeoffScenario]:
    """All 2^d takeoff combinations under independent per-drone grounding.

    Scenario k has drone d grounded iff bit d of k is set, so the all-fly
    scenario comes first and ordering is reproducible. Probabilities are
    the independent Bernoulli product and sum to one.
    """
    if not 0.0 <= per_drone_ground_prob <= 1.0:
        raise ValueError(f"ground probability must be in [0, 1], got {per_drone_ground_prob}")
    if n_drones > MAX_ENUMERATED_DRONES:
        raise ScenarioOverflowError(
            f"enumerating 2^{n_drones} takeoff scenarios is above the "
            f"2^{MAX_ENUMERATED_DRONES} cap")
    p = per_drone_ground_prob
    out = []
    for pattern in range(2 ** n_drones):
        grounded = tuple((pattern >> d) & 1 for d in range(n_drones))
        g = sum(grounded)
        out.append(TakeoffScenario(
            grounded=grounded,
            probability=(p ** g) * ((1.0 - p) ** (n_drones - g)),
        ))
    return out


def two_point_spaces(
    p_ground: float,
    p_break: float,
    break_fraction: float,
    instance: Instance,
) -> ScenarioSpace:
    """The two-scenario-per-condition uncertainty structure.

    Takeoff: all drones fly with probability 1 - p_ground, all are grounded
    with p_ground. Breakdown: nothing breaks with 1 - p_break; with p_break
    the first ceil(break_fraction * c) customers break on every drone.
    Zero-probability members are retained so indices stay stable.
    """
    for name, v in (("p_ground", p_ground), ("p_break", p_break),
                    ("break_fraction", break_fraction)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    c = instance.n_customers
    d = len(instance.drones)
    all_fly = tuple([0] * d)
    all_ground = tuple([1] * d)
    n_break = math.ceil(break_fraction * c - 1e-9)
    breaks = tuple(
        tuple([1] * d) if i < n_break else tuple([0] * d)
        for i in range(c)
    )
    no_breaks = tuple(tuple([0] * d) for _ in range(c))
    return ScenarioSpace(
        takeoff=(
            TakeoffScenario(grounded=all_fly, probability=1.0 - p_ground),
            TakeoffScenario(grounded=all_ground, probability=p_ground),
        ),
        breakdown=(
            BreakdownScenario(breaks=no_breaks, probability=1.0 - p_break),
            BreakdownScenario(breaks=breaks, probability=p_break),
        ),
    )


def draw_breakdown_matrix(prob_matrix: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample one breakdown matrix from independent per-pair probabilities.

    Helper for simulation-style studies only; the optimization model always
    consumes the explicit global matrices of a :class:`ScenarioSpace`.
    """
    probs = np.asarray(prob_matrix, dtype=float)
    return (rng.random(probs.shape) < probs).astype(np.int8)


# ---------------------------------------------------------------------------
# JSON form ("scenarios" key of the native instance document).
# ---------------------------------------------------------------------------

def space_to_dict(space: ScenarioSpace) -> dict:
    return {
        "takeoff": [
            {"grounded": list(s.grounded), "probability": s.probability}
            for s in space.takeoff
        ],
        "breakdown": [
            {"breaks": [list(row) for row in s.breaks], "probability": s.probability}
            for s in space.breakdown
        ],
    }


def space_from_dict(doc: dict) -> ScenarioSpace:
    takeoff = tuple(
        TakeoffScenario(grounded=tuple(int(v) for v in s["grounded"]),
                        probability=float(s["probability"]))
        for s in doc["takeoff"]
    )
    breakdown = tuple(
        BreakdownScenario(
            breaks=tuple(tuple(int(v) for v in row) for row in s["breaks"]),
            probability=float(s["probability"]))
        for s in doc["breakdown"]
    )
    return ScenarioSpace(takeoff=takeoff, breakdown=breakdown)
