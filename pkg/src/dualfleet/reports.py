"""Solve reports: plan, cost breakdown, solver statistics, JSON form.

Reports embed the instance document and the full option set, plus a hash
of the canonical instance JSON, so results stay attributable to their
exact inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .instance import Instance, instance_to_dict
from .model import CostBreakdown, FirstStagePlan, plan_from_dict, plan_to_dict
from .scenarios import ScenarioSpace, space_from_dict, space_to_dict


def instance_hash(instance: Instance, scenarios: ScenarioSpace | None = None) -> str:
    doc = instance_to_dict(instance)
    if scenarios is not None:
        doc["scenarios"] = space_to_dict(scenarios)
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


@dataclass
class SolveReport:
    method: str
    status: str
    instance: Instance
    scenarios: ScenarioSpace
    plan: FirstStagePlan
    breakdown: CostBreakdown
    solver_stats: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    scenario_costs: list[dict] = field(default_factory=list)
    iterations: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "status": self.status,
            "instance_hash": instance_hash(self.instance, self.scenarios),
            "options": self.options,
            "objective": self.breakdown.total,
            "cost_breakdown": self.breakdown.to_dict(),
            "plan": plan_to_dict(self.plan),
            "solver_stats": self.solver_stats,
            "scenario_costs": self.scenario_costs,
            "iterations": self.iterations,
            "instance": instance_to_dict(self.instance),
            "scenarios": space_to_dict(self.scenarios),
        }

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def load_report_plan(path) -> tuple[dict, Instance, FirstStagePlan]:
    """Read a report file back; returns (raw document, instance, plan)."""
    from .instance import instance_from_dict

    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    instance = instance_from_dict(doc["instance"])
    plan = plan_from_dict(doc["plan"], instance)
    return doc, instance, plan


def load_problem(path) -> tuple[Instance, ScenarioSpace | None]:
    """Read a native instance JSON file; scenarios key is optional."""
    from .instance import instance_from_dict

    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    instance = instance_from_dict(doc)
    scenarios = None
    if "scenarios" in doc:
        scenarios = space_from_dict(doc["scenarios"])
    return instance, scenarios


def save_problem(path, instance: Instance,
                 scenarios: ScenarioSpace | None = None) -> None:
    doc = instance_to_dict(instance)
    if scenarios is not None:
        doc["scenarios"] = space_to_dict(scenarios)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
