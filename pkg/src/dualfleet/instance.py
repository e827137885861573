"""Problem data for joint truck-and-drone parcel delivery planning.

An :class:`Instance` bundles everything the solvers need: the customer set,
the truck and drone fleets, an explicit travel-distance matrix over the depot
plus customer locations, and a cost model. Location 0 is always the single
depot; customers are numbered 1..c. Distances are always supplied as a
matrix (road networks are asymmetric, so nothing here assumes symmetry;
Euclidean generation from coordinates lives in the Solomon converter).

Units throughout: kilometres, kilograms, hours, S$.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

DEPOT = 0

#: Absolute tolerance for money comparisons.
MONEY_EPS = 1e-9

# Cost-model constants: fuel price factor times average consumption factor
# for trucks, and the per-km round-trip rate for drones.
TRUCK_COST_PER_KM = 1.05 * 0.1
DRONE_COST_PER_KM = 0.005
DEFAULT_PENALTY = 20.0
DEFAULT_REPAIR = 50.0


class WindowClass(str, Enum):
    """Hard delivery-slot class of a customer."""

    NONE = "none"
    MORNING = "morning"
    AFTERNOON = "afternoon"


@dataclass(frozen=True)
class Customer:
    """One customer with a single package.

    ``id`` is the 1-based location index into the distance matrix.
    """

    id: int
    package_weight_kg: float = 1.0
    window_class: WindowClass = WindowClass.NONE


@dataclass(frozen=True, eq=False)
class TruckSpec:
    """A reservable truck.

    ``speed_kmh`` is either a scalar or a full (c+1)x(c+1) per-arc matrix.
    ``dropoff_time_h`` is the fixed package hand-over time charged per arc
    in the daily time budget.
    """

    id: int
    initial_cost: float
    capacity_kg: float
    daily_distance_km: float
    daily_time_h: float
    dropoff_time_h: float
    speed_kmh: float | np.ndarray

    def speed(self, i: int, j: int) -> float:
        if isinstance(self.speed_kmh, np.ndarray):
            return float(self.speed_kmh[i, j])
        return float(self.speed_kmh)


@dataclass(frozen=True)
class DroneSpec:
    """A reservable drone; carries one package per round trip."""

    id: int
    initial_cost: float
    capacity_kg: float
    daily_distance_km: float
    trip_distance_km: float
    speed_kmh: float


@dataclass(frozen=True, eq=False)
class CostModel:
    """The six payment categories.

    ``truck_arc`` is a (c+1)x(c+1) matrix of per-arc truck travel costs,
    ``drone_roundtrip`` a length-c vector of per-customer round-trip costs
    (index i-1 for customer i). ``penalty`` is charged per undelivered
    package, ``repair`` once per broken drone per scenario.
    """

    truck_arc: np.ndarray
    drone_roundtrip: np.ndarray
    penalty: float
    repair: float

    def truck_cost(self, i: int, j: int) -> float:
        return float(self.truck_arc[i, j])

    def drone_cost(self, customer_id: int) -> float:
        return float(self.drone_roundtrip[customer_id - 1])


@dataclass(frozen=True, eq=False)
class Instance:
    """An immutable delivery-planning problem.

    ``distances_km`` is (c+1)x(c+1) with a zero diagonal; row/column 0 is
    the depot. ``coords`` is optional (c+1)x2 map coordinates, only used
    for rendering. Morning/afternoon limits are the per-class travel-time
    budgets and only matter when some customer carries a window class.
    Instances are safe to share across concurrent solver workers.
    """

    customers: tuple[Customer, ...]
    trucks: tuple[TruckSpec, ...]
    drones: tuple[DroneSpec, ...]
    distances_km: np.ndarray
    costs: CostModel
    morning_limit_h: float | None = None
    afternoon_limit_h: float | None = None
    coords: np.ndarray | None = None
    name: str = "instance"

    @property
    def n_customers(self) -> int:
        return len(self.customers)

    @property
    def n_locations(self) -> int:
        return len(self.customers) + 1

    @property
    def customer_ids(self) -> range:
        return range(1, len(self.customers) + 1)

    def customer(self, cid: int) -> Customer:
        return self.customers[cid - 1]

    def weight(self, cid: int) -> float:
        return self.customers[cid - 1].package_weight_kg

    def roundtrip_km(self, cid: int) -> float:
        """Depot -> customer -> depot flying distance."""
        return float(self.distances_km[DEPOT, cid] + self.distances_km[cid, DEPOT])

    def morning_ids(self) -> list[int]:
        return [c.id for c in self.customers if c.window_class is WindowClass.MORNING]

    def afternoon_ids(self) -> list[int]:
        return [c.id for c in self.customers if c.window_class is WindowClass.AFTERNOON]

    @property
    def has_time_windows(self) -> bool:
        return any(c.window_class is not WindowClass.NONE for c in self.customers)


@dataclass(frozen=True)
class Violation:
    """One broken invariant; data, not an exception."""

    field: str
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        msg = f"{self.field}: {self.rule}"
        return f"{msg} ({self.detail})" if self.detail else msg


def _finite_positive(value: float) -> bool:
    return math.isfinite(value) and value > 0


def validate(instance: Instance) -> list[Violation]:
    """Check every structural invariant; empty list means well-formed.

    Pure and idempotent. Violations are returned as data so callers can
    report all of them at once instead of failing on the first.
    """
    out: list[Violation] = []
    c = instance.n_customers

    seen: set[int] = set()
    for idx, cust in enumerate(instance.customers, start=1):
        if cust.id != idx:
            out.append(Violation("customers", "ids must be 1..c in order",
                                 f"position {idx} has id {cust.id}"))
        if cust.id in seen:
            out.append(Violation("customers", "duplicate id", str(cust.id)))
        seen.add(cust.id)
        if not (math.isfinite(cust.package_weight_kg) and cust.package_weight_kg > 0):
            out.append(Violation(f"customers[{cust.id}].package_weight_kg",
                                 "must be finite and > 0", str(cust.package_weight_kg)))

    for t in instance.trucks:
        for fname in ("capacity_kg", "daily_distance_km", "daily_time_h"):
            if not _finite_positive(getattr(t, fname)):
                out.append(Violation(f"trucks[{t.id}].{fname}", "must be finite and > 0"))
        if not (math.isfinite(t.initial_cost) and t.initial_cost >= 0):
            out.append(Violation(f"trucks[{t.id}].initial_cost", "must be finite and >= 0"))
        if not (math.isfinite(t.dropoff_time_h) and t.dropoff_time_h >= 0):
            out.append(Violation(f"trucks[{t.id}].dropoff_time_h", "must be finite and >= 0"))
        speeds = np.atleast_2d(np.asarray(t.speed_kmh, dtype=float))
        if not np.all(np.isfinite(speeds) & (speeds > 0)):
            out.append(Violation(f"trucks[{t.id}].speed_kmh", "all speeds must be > 0"))
        if isinstance(t.speed_kmh, np.ndarray) and t.speed_kmh.shape != (c + 1, c + 1):
            out.append(Violation(f"trucks[{t.id}].speed_kmh",
                                 "matrix must be (c+1)x(c+1)", str(t.speed_kmh.shape)))

    for d in instance.drones:
        for fname in ("capacity_kg", "daily_distance_km", "trip_distance_km", "speed_kmh"):
            if not _finite_positive(getattr(d, fname)):
                out.append(Violation(f"drones[{d.id}].{fname}", "must be finite and > 0"))
        if not (math.isfinite(d.initial_cost) and d.initial_cost >= 0):
            out.append(Violation(f"drones[{d.id}].initial_cost", "must be finite and >= 0"))
        if d.trip_distance_km > d.daily_distance_km + MONEY_EPS:
            out.append(Violation(f"drones[{d.id}].trip_distance_km",
                                 "per-trip limit must not exceed the daily limit",
                                 f"{d.trip_distance_km} > {d.daily_distance_km}"))

    k = instance.distances_km
    if k.shape != (c + 1, c + 1):
        out.append(Violation("distances_km", "matrix must be (c+1)x(c+1)", str(k.shape)))
    else:
        if np.isnan(k).any():
            out.append(Violation("distances_km", "NaN entries not allowed"))
        elif (k < 0).any():
            out.append(Violation("distances_km", "negative entries not allowed"))
        diag = np.diagonal(k)
        bad = np.nonzero(diag != 0)[0]
        if bad.size:
            out.append(Violation("distances_km", "diagonal must be zero",
                                 f"location {int(bad[0])} has {float(diag[bad[0]])}"))

    cm = instance.costs
    if cm.truck_arc.shape != (c + 1, c + 1):
        out.append(Violation("costs.truck_arc", "matrix must be (c+1)x(c+1)",
                             str(cm.truck_arc.shape)))
    elif not np.all(np.isfinite(cm.truck_arc) & (cm.truck_arc >= 0)):
        out.append(Violation("costs.truck_arc", "arc costs must be finite and >= 0"))
    if cm.drone_roundtrip.shape != (c,):
        out.append(Violation("costs.drone_roundtrip", "vector must have length c",
                             str(cm.drone_roundtrip.shape)))
    elif not np.all(np.isfinite(cm.drone_roundtrip) & (cm.drone_roundtrip >= 0)):
        out.append(Violation("costs.drone_roundtrip", "costs must be finite and >= 0"))
    if not (math.isfinite(cm.penalty) and cm.penalty >= 0):
        out.append(Violation("costs.penalty", "must be finite and >= 0"))
    if not (math.isfinite(cm.repair) and cm.repair >= 0):
        out.append(Violation("costs.repair", "must be finite and >= 0"))

    if instance.has_time_windows:
        for fname in ("morning_limit_h", "afternoon_limit_h"):
            value = getattr(instance, fname)
            if value is None or not (math.isfinite(value) and value >= 0):
                out.append(Violation(fname, "required and >= 0 when window classes are used",
                                     str(value)))

    if instance.coords is not None and instance.coords.shape != (c + 1, 2):
        out.append(Violation("coords", "must be (c+1)x2 when present",
                             str(instance.coords.shape)))
    return out


def default_cost_model(
    distances_km: np.ndarray,
    penalty: float = DEFAULT_PENALTY,
    repair: float = DEFAULT_REPAIR,
) -> CostModel:
    """Cost model from the standard rate constants.

    Truck arc cost is distance times 1.05 (fuel price factor) times 0.1
    (average consumption factor); a drone round trip to customer i costs
    0.005 x (out distance + return distance).
    """
    k = np.asarray(distances_km, dtype=float)
    truck = k * TRUCK_COST_PER_KM
    roundtrips = k[DEPOT, 1:] + k[1:, DEPOT]
    return CostModel(
        truck_arc=truck,
        drone_roundtrip=DRONE_COST_PER_KM * roundtrips,
        penalty=float(penalty),
        repair=float(repair),
    )


# ---------------------------------------------------------------------------
# JSON form. Field names mirror the dataclasses one-to-one; see README for
# the documented schema.
# ---------------------------------------------------------------------------

def instance_to_dict(instance: Instance) -> dict:
    def truck_dict(t: TruckSpec) -> dict:
        speed = t.speed_kmh.tolist() if isinstance(t.speed_kmh, np.ndarray) else t.speed_kmh
        return {
            "id": t.id,
            "initial_cost": t.initial_cost,
            "capacity_kg": t.capacity_kg,
            "daily_distance_km": t.daily_distance_km,
            "daily_time_h": t.daily_time_h,
            "dropoff_time_h": t.dropoff_time_h,
            "speed_kmh": speed,
        }

    doc = {
        "name": instance.name,
        "customers": [
            {"id": cc.id, "package_weight_kg": cc.package_weight_kg,
             "window_class": cc.window_class.value}
            for cc in instance.customers
        ],
        "trucks": [truck_dict(t) for t in instance.trucks],
        "drones": [
            {"id": d.id, "initial_cost": d.initial_cost, "capacity_kg": d.capacity_kg,
             "daily_distance_km": d.daily_distance_km,
             "trip_distance_km": d.trip_distance_km, "speed_kmh": d.speed_kmh}
            for d in instance.drones
        ],
        "distances_km": instance.distances_km.tolist(),
        "costs": {
            "truck_arc": instance.costs.truck_arc.tolist(),
            "drone_roundtrip": instance.costs.drone_roundtrip.tolist(),
            "penalty": instance.costs.penalty,
            "repair": instance.costs.repair,
        },
    }
    if instance.morning_limit_h is not None:
        doc["morning_limit_h"] = instance.morning_limit_h
    if instance.afternoon_limit_h is not None:
        doc["afternoon_limit_h"] = instance.afternoon_limit_h
    if instance.coords is not None:
        doc["coords"] = instance.coords.tolist()
    return doc


def instance_from_dict(doc: dict) -> Instance:
    customers = tuple(
        Customer(
            id=int(cc["id"]),
            package_weight_kg=float(cc.get("package_weight_kg", 1.0)),
            window_class=WindowClass(cc.get("window_class", "none")),
        )
        for cc in doc["customers"]
    )
    trucks = tuple(
        TruckSpec(
            id=int(t["id"]),
            initial_cost=float(t["initial_cost"]),
            capacity_kg=float(t["capacity_kg"]),
            daily_distance_km=float(t["daily_distance_km"]),
            daily_time_h=float(t["daily_time_h"]),
            dropoff_time_h=float(t["dropoff_time_h"]),
            speed_kmh=(np.asarray(t["speed_kmh"], dtype=float)
                       if isinstance(t["speed_kmh"], list) else float(t["speed_kmh"])),
        )
        for t in doc["trucks"]
    )
    drones = tuple(
        DroneSpec(
            id=int(d["id"]),
            initial_cost=float(d["initial_cost"]),
            capacity_kg=float(d["capacity_kg"]),
            daily_distance_km=float(d["daily_distance_km"]),
            trip_distance_km=float(d["trip_distance_km"]),
            speed_kmh=float(d["speed_kmh"]),
        )
        for d in doc["drones"]
    )
    costs = CostModel(
        truck_arc=np.asarray(doc["costs"]["truck_arc"], dtype=float),
        drone_roundtrip=np.asarray(doc["costs"]["drone_roundtrip"], dtype=float),
        penalty=float(doc["costs"]["penalty"]),
        repair=float(doc["costs"]["repair"]),
    )
    coords = doc.get("coords")
    return Instance(
        customers=customers,
        trucks=trucks,
        drones=drones,
        distances_km=np.asarray(doc["distances_km"], dtype=float),
        costs=costs,
        morning_limit_h=doc.get("morning_limit_h"),
        afternoon_limit_h=doc.get("afternoon_limit_h"),
        coords=None if coords is None else np.asarray(coords, dtype=float),
        name=str(doc.get("name", "instance")),
    )
