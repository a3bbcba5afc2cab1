"""Timeline-based experiment scenarios.

A scenario is an ordered timeline of user/operator requests: VM starts and
stops, optimizer reconfiguration. Events trigger either at an absolute
simulation time or relative to the *completion* of another event, which is
what makes orchestrated deployments expressible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .model import (
    VmFlavor,
    WorkloadModel,
    flavor_from_dict,
    flavor_to_dict,
    workload_from_dict,
    workload_to_dict,
)


class ScenarioError(ValueError):
    """Raised for malformed scenario documents; message names the offender."""


class EventStatus(str, Enum):
    PENDING = "pending"
    READY = "ready"
    EXECUTING = "executing"
    COMPLETED = "completed"


@dataclass(frozen=True)
class AbsoluteTime:
    time: float  # seconds from scenario start


@dataclass(frozen=True)
class RelativeTo:
    reference: str  # event id whose completion this trigger chains off
    offset: float  # seconds after the reference completes


Trigger = AbsoluteTime | RelativeTo


@dataclass(frozen=True)
class StartApplication:
    template: str
    vm_id: str
    flavor_override: VmFlavor | None = None


@dataclass(frozen=True)
class StopApplication:
    #: A VM id, or the id of a StartApplication event in the same scenario
    #: (the VM may not exist yet when the scenario is written).
    target: str


@dataclass(frozen=True)
class ReconfigureOptimisationAlgorithm:
    algorithm: str


@dataclass(frozen=True)
class ChangeOptimisationInterval:
    interval: float  # seconds, > 0


Request = (
    StartApplication
    | StopApplication
    | ReconfigureOptimisationAlgorithm
    | ChangeOptimisationInterval
)


@dataclass
class TimelineEvent:
    id: str
    trigger: Trigger
    request: Request
    status: EventStatus = EventStatus.PENDING


@dataclass(frozen=True)
class ApplicationTemplate:
    """What a StartApplication request assembles: flavor, workload, parameters."""

    flavor: VmFlavor
    workload: WorkloadModel
    parameters: Mapping[str, str] = field(default_factory=dict)


@dataclass
class ExperimentScenario:
    events: list[TimelineEvent]
    templates: dict[str, ApplicationTemplate] = field(default_factory=dict)

    def event(self, event_id: str) -> TimelineEvent:
        for ev in self.events:
            if ev.id == event_id:
                return ev
        raise KeyError(event_id)

    def start_events(self) -> list[TimelineEvent]:
        return [ev for ev in self.events if isinstance(ev.request, StartApplication)]


def resolve_trigger_time(
    event: TimelineEvent, completions: Mapping[str, float]
) -> float | None:
    """Trigger time of an event, or None while its dependency is unresolved.

    Absolute events resolve immediately. A relative event resolves to
    ``completion_of_reference + offset`` once the referenced event has
    completed. Resolution is monotone: adding completions never un-resolves.
    """
    if isinstance(event.trigger, AbsoluteTime):
        return event.trigger.time
    if event.trigger.reference in completions:
        return completions[event.trigger.reference] + event.trigger.offset
    return None


def check_scenario(scenario: ExperimentScenario, known_vm_ids: Iterable[str] = ()) -> None:
    """Raise ScenarioError on any violated scenario invariant."""
    ids: set[str] = set()
    for ev in scenario.events:
        if ev.id in ids:
            raise ScenarioError(f"duplicate event id {ev.id!r}")
        ids.add(ev.id)

    scenario_vm_ids = set(known_vm_ids)
    for ev in scenario.start_events():
        req = ev.request
        if req.template not in scenario.templates:
            raise ScenarioError(
                f"event {ev.id!r} references missing template {req.template!r}"
            )
        if req.vm_id in scenario_vm_ids:
            raise ScenarioError(
                f"event {ev.id!r} starts duplicate vm id {req.vm_id!r}"
            )
        scenario_vm_ids.add(req.vm_id)

    for ev in scenario.events:
        if isinstance(ev.trigger, AbsoluteTime):
            if ev.trigger.time < 0:
                raise ScenarioError(f"event {ev.id!r} has negative absolute time")
        else:
            if ev.trigger.reference not in ids:
                raise ScenarioError(
                    f"event {ev.id!r} references missing event {ev.trigger.reference!r}"
                )
            if ev.trigger.offset < 0:
                raise ScenarioError(f"event {ev.id!r} has negative relative offset")
        if isinstance(ev.request, StopApplication):
            target = ev.request.target
            if target not in ids and target not in scenario_vm_ids:
                raise ScenarioError(
                    f"stop event {ev.id!r} references missing id {target!r}"
                )
            if target in ids and not isinstance(
                scenario.event(target).request, StartApplication
            ):
                raise ScenarioError(
                    f"stop event {ev.id!r} target {target!r} is not a start event"
                )
        if isinstance(ev.request, ChangeOptimisationInterval):
            if ev.request.interval <= 0:
                raise ScenarioError(f"event {ev.id!r} interval must be > 0")

    # Relative references must not form a cycle.
    edges = {
        ev.id: ev.trigger.reference
        for ev in scenario.events
        if isinstance(ev.trigger, RelativeTo)
    }
    for start in edges:
        seen = {start}
        node = start
        while node in edges:
            node = edges[node]
            if node in seen:
                raise ScenarioError(f"reference cycle involving event {start!r}")
            seen.add(node)


# --- JSON serialization ----------------------------------------------------


def _trigger_to_dict(trigger: Trigger) -> dict:
    if isinstance(trigger, AbsoluteTime):
        return {"type": "absolute", "time": trigger.time}
    return {"type": "relative", "reference": trigger.reference, "offset": trigger.offset}


def _trigger_from_dict(obj: Mapping, event_id: str) -> Trigger:
    kind = obj.get("type")
    if kind == "absolute":
        return AbsoluteTime(float(obj["time"]))
    if kind == "relative":
        return RelativeTo(str(obj["reference"]), float(obj["offset"]))
    raise ScenarioError(f"event {event_id!r}: unknown trigger type {kind!r}")


def _request_to_dict(request: Request) -> dict:
    if isinstance(request, StartApplication):
        out: dict = {
            "type": "start_application",
            "template": request.template,
            "vm_id": request.vm_id,
        }
        if request.flavor_override is not None:
            out["flavor_override"] = flavor_to_dict(request.flavor_override)
        return out
    if isinstance(request, StopApplication):
        return {"type": "stop_application", "target": request.target}
    if isinstance(request, ReconfigureOptimisationAlgorithm):
        return {"type": "reconfigure_optimisation_algorithm", "algorithm": request.algorithm}
    return {"type": "change_optimisation_interval", "interval": request.interval}


def _request_from_dict(obj: Mapping, event_id: str) -> Request:
    kind = obj.get("type")
    if kind == "start_application":
        override = obj.get("flavor_override")
        return StartApplication(
            template=str(obj["template"]),
            vm_id=str(obj["vm_id"]),
            flavor_override=flavor_from_dict(override) if override else None,
        )
    if kind == "stop_application":
        return StopApplication(target=str(obj["target"]))
    if kind == "reconfigure_optimisation_algorithm":
        return ReconfigureOptimisationAlgorithm(algorithm=str(obj["algorithm"]))
    if kind == "change_optimisation_interval":
        return ChangeOptimisationInterval(interval=float(obj["interval"]))
    raise ScenarioError(f"event {event_id!r}: unknown request type {kind!r}")


def scenario_to_dict(scenario: ExperimentScenario) -> dict:
    return {
        "templates": {
            tid: {
                "flavor": flavor_to_dict(tpl.flavor),
                "workload": workload_to_dict(tpl.workload),
                "parameters": dict(tpl.parameters),
            }
            for tid, tpl in scenario.templates.items()
        },
        "events": [
            {
                "id": ev.id,
                "trigger": _trigger_to_dict(ev.trigger),
                "request": _request_to_dict(ev.request),
            }
            for ev in scenario.events
        ],
    }


def scenario_from_dict(
    obj: Mapping, known_vm_ids: Iterable[str] = ()
) -> ExperimentScenario:
    templates: dict[str, ApplicationTemplate] = {}
    for tid, raw in obj.get("templates", {}).items():
        workload = raw["workload"]
        templates[str(tid)] = ApplicationTemplate(
            flavor=flavor_from_dict(raw["flavor"]),
            workload=workload_from_dict(workload),
            parameters={str(k): str(v) for k, v in raw.get("parameters", {}).items()},
        )
    events = []
    for raw in obj.get("events", []):
        event_id = str(raw.get("id", "<missing id>"))
        events.append(
            TimelineEvent(
                id=event_id,
                trigger=_trigger_from_dict(raw.get("trigger", {}), event_id),
                request=_request_from_dict(raw.get("request", {}), event_id),
            )
        )
    scenario = ExperimentScenario(events=events, templates=templates)
    check_scenario(scenario, known_vm_ids)
    return scenario


def serialize_scenario(scenario: ExperimentScenario) -> str:
    """Scenario to a JSON document; inverse of parse_scenario."""
    return json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True)


def parse_scenario(text: str, known_vm_ids: Iterable[str] = ()) -> ExperimentScenario:
    """Parse and validate a scenario document.

    ``known_vm_ids`` lets stop requests target VMs that exist outside the
    scenario (the model's initial VMs); anything else must resolve inside
    the document.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ScenarioError("scenario must be a JSON object")
    return scenario_from_dict(obj, known_vm_ids)


def load_scenario(path, known_vm_ids: Iterable[str] = ()) -> ExperimentScenario:
    """Load a scenario file, resolving ``{"file": ...}`` workload references.

    Template workloads may be inlined or written as ``{"file": "relative or
    absolute path"}`` pointing at a standalone workload JSON document.
    """
    import os

    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ScenarioError("scenario must be a JSON object")
    base = os.path.dirname(os.path.abspath(path))
    for tid, raw in obj.get("templates", {}).items():
        workload = raw.get("workload")
        if isinstance(workload, dict) and "file" in workload:
            ref = workload["file"]
            wl_path = ref if os.path.isabs(ref) else os.path.join(base, ref)
            with open(wl_path, "r", encoding="utf-8") as fh:
                raw["workload"] = json.load(fh)
    return scenario_from_dict(obj, known_vm_ids)
