"""Domain types for the simulated data center.

Servers, VM flavors and instances, workload models, and parametric power
models, plus validation of a complete data center description. Everything
here is immutable after construction; mutable runtime state lives in
``dcsim.state``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence


class VmState(str, Enum):
    PENDING = "pending"
    BOOTING = "booting"
    RUNNING = "running"
    MIGRATING = "migrating"
    COMPLETED = "completed"
    TERMINATED = "terminated"


#: States in which a VM occupies a host.
HOSTED_STATES = frozenset({VmState.BOOTING, VmState.RUNNING, VmState.MIGRATING})

#: Terminal states; no transition leaves them.
TERMINAL_STATES = frozenset({VmState.COMPLETED, VmState.TERMINATED})


class Initiator(str, Enum):
    TENANT = "tenant"
    AUTOSCALER = "autoscaler"


POWER_ON = "on"
POWER_OFF = "off"


@dataclass(frozen=True)
class VmFlavor:
    """Resource shape of a VM: virtual CPU count and RAM reservation in MiB."""

    vcpus: int
    ram: float

    def check(self) -> list[str]:
        errs = []
        if self.vcpus < 1:
            errs.append(f"flavor vcpus must be >= 1, got {self.vcpus}")
        if self.ram <= 0:
            errs.append(f"flavor ram must be > 0 MiB, got {self.ram}")
        return errs


@dataclass(frozen=True)
class BlackBoxTrace:
    """Piecewise-constant CPU demand of a run-to-completion VM.

    Each segment is ``(duration_s, demand)`` where demand is in normalized
    work-units per second, independent of any particular host speed. A
    segment with demand 0 is idle time; its duration is wall-clock and is
    not stretched by contention.
    """

    segments: tuple[tuple[float, float], ...]

    def check(self) -> list[str]:
        errs = []
        for i, (duration, demand) in enumerate(self.segments):
            if duration <= 0:
                errs.append(f"trace segment {i} duration must be > 0, got {duration}")
            if demand < 0:
                errs.append(f"trace segment {i} demand must be >= 0, got {demand}")
        return errs

    def total_duration(self) -> float:
        return sum(d for d, _ in self.segments)

    def total_work(self) -> float:
        return sum(d * w for d, w in self.segments)


@dataclass(frozen=True)
class OpenRequestLoad:
    """Open request-rate workload for a horizontally scalable tier.

    ``series`` holds ``(time_s, requests_per_s)`` points; a rate holds until
    the next point. ``per_instance_capacity`` is the request rate one
    instance can absorb at full utilization.
    """

    series: tuple[tuple[float, float], ...]
    per_instance_capacity: float

    def check(self) -> list[str]:
        errs = []
        if self.per_instance_capacity <= 0:
            errs.append(
                f"per_instance_capacity must be > 0, got {self.per_instance_capacity}"
            )
        prev = -math.inf
        for i, (t, rate) in enumerate(self.series):
            if t <= prev:
                errs.append(f"series times must be strictly increasing at index {i}")
            prev = t
            if rate < 0:
                errs.append(f"series rate must be >= 0 at index {i}, got {rate}")
        return errs

    def rate_at(self, t: float) -> float:
        """Offered rate at time t (0 before the first point, last value after)."""
        rate = 0.0
        for point_t, point_rate in self.series:
            if point_t > t:
                break
            rate = point_rate
        return rate


WorkloadModel = BlackBoxTrace | OpenRequestLoad


POLYNOMIAL = "polynomial"
POLYNOMIAL_PLUS_EXPONENTIAL = "polynomial_plus_exponential"


@dataclass(frozen=True)
class PowerModel:
    """Parametric utilization-to-watts function.

    ``polynomial`` with coefficients ``(c0 .. cd)`` evaluates to
    ``c0*u + c1*u^2 + ... + c_{d-1}*u^d + c_d``, powers first and the
    constant term last. ``polynomial_plus_exponential`` appends ``(a, b)`` to a cubic
    layout and adds ``a * (exp(b*u) - 1)``, which keeps the value at u=0
    equal to the constant coefficient.
    """

    family: str
    coefficients: tuple[float, ...]

    @property
    def degree(self) -> int:
        if self.family == POLYNOMIAL:
            return len(self.coefficients) - 1
        return 3

    def check(self) -> list[str]:
        errs = []
        if self.family == POLYNOMIAL:
            if len(self.coefficients) < 1:
                errs.append("polynomial power model needs at least one coefficient")
        elif self.family == POLYNOMIAL_PLUS_EXPONENTIAL:
            if len(self.coefficients) != 6:
                errs.append(
                    "polynomial_plus_exponential power model needs exactly 6 "
                    f"coefficients, got {len(self.coefficients)}"
                )
        else:
            errs.append(f"unknown power model family {self.family!r}")
        return errs


def eval_power(model: PowerModel, u: float) -> float:
    """Evaluate a power model at aggregate CPU utilization u in [0, 1]."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"utilization must be in [0, 1], got {u}")
    if model.family == POLYNOMIAL:
        poly = model.coefficients
        watts = poly[-1]
        for k, c in enumerate(poly[:-1], start=1):
            watts += c * u**k
        return watts
    if model.family == POLYNOMIAL_PLUS_EXPONENTIAL:
        c0, c1, c2, c3, a, b = model.coefficients
        return c0 * u + c1 * u**2 + c2 * u**3 + c3 + a * (math.exp(b * u) - 1.0)
    raise ValueError(f"unknown power model family {model.family!r}")


@dataclass(frozen=True)
class ServerSpec:
    """Static description of a physical server."""

    id: str
    cores: int
    core_speed: float  # work-units per second per core
    ram_capacity: float  # MiB
    power_model_id: str
    has_power_meter: bool = True
    idle_off_power: float = 0.0  # watts drawn while powered off

    def check(self) -> list[str]:
        errs = []
        if self.cores < 1:
            errs.append(f"server {self.id}: cores must be >= 1, got {self.cores}")
        if self.core_speed <= 0:
            errs.append(f"server {self.id}: core_speed must be > 0, got {self.core_speed}")
        if self.ram_capacity <= 0:
            errs.append(
                f"server {self.id}: ram_capacity must be > 0, got {self.ram_capacity}"
            )
        if self.idle_off_power < 0:
            errs.append(
                f"server {self.id}: idle_off_power must be >= 0, got {self.idle_off_power}"
            )
        return errs


def host_capacity(server: ServerSpec) -> float:
    """Total processing speed of a server in work-units per second."""
    return server.cores * server.core_speed


def free_ram(server: ServerSpec, placed: Sequence["VmInstance"]) -> float:
    """RAM left on a server after subtracting the placed VMs' reservations."""
    return server.ram_capacity - sum(vm.flavor.ram for vm in placed)


@dataclass(frozen=True)
class VmInstance:
    """A VM as the simulation knows it: flavor, workload, placement, state."""

    id: str
    flavor: VmFlavor
    workload: WorkloadModel
    host: str | None = None
    state: VmState = VmState.PENDING
    initiator: Initiator = Initiator.TENANT

    def check(self) -> list[str]:
        errs = []
        errs.extend(self.flavor.check())
        errs.extend(self.workload.check())
        hosted = self.state in HOSTED_STATES
        if hosted and self.host is None:
            errs.append(f"vm {self.id}: state {self.state.value} requires a host")
        if not hosted and self.host is not None:
            errs.append(f"vm {self.id}: state {self.state.value} must not have a host")
        return errs


@dataclass(frozen=True)
class DataCenterModel:
    """Ground-truth description of the data center at simulation start."""

    servers: tuple[ServerSpec, ...]
    power_models: Mapping[str, PowerModel]
    initial_vms: tuple[VmInstance, ...] = ()
    initial_power_states: Mapping[str, str] = field(default_factory=dict)

    def server(self, server_id: str) -> ServerSpec:
        for s in self.servers:
            if s.id == server_id:
                return s
        raise KeyError(server_id)

    def power_state(self, server_id: str) -> str:
        return self.initial_power_states.get(server_id, POWER_ON)


def validate(model: DataCenterModel) -> list[str]:
    """Check every invariant of a data center model.

    Returns one human-readable entry per violation, naming the offending
    entity; an empty list means the model is valid. Never raises.
    """
    errs: list[str] = []
    seen_servers: set[str] = set()
    for server in model.servers:
        if server.id in seen_servers:
            errs.append(f"duplicate server id {server.id}")
        seen_servers.add(server.id)
        errs.extend(server.check())
        if server.power_model_id not in model.power_models:
            errs.append(
                f"server {server.id}: power_model_id {server.power_model_id!r} "
                "does not resolve"
            )
    for pm_id, pm in model.power_models.items():
        errs.extend(f"power model {pm_id}: {e}" for e in pm.check())

    seen_vms: set[str] = set()
    placements: dict[str, list[VmInstance]] = {s.id: [] for s in model.servers}
    for vm in model.initial_vms:
        if vm.id in seen_vms:
            errs.append(f"duplicate vm id {vm.id}")
        seen_vms.add(vm.id)
        errs.extend(vm.check())
        if vm.host is None:
            errs.append(f"initial vm {vm.id} has no host assignment")
            continue
        if vm.host not in placements:
            errs.append(f"initial vm {vm.id} placed on unknown server {vm.host}")
            continue
        placements[vm.host].append(vm)
        if model.power_state(vm.host) != POWER_ON:
            errs.append(f"initial vm {vm.id} placed on powered-off server {vm.host}")

    for server in model.servers:
        if free_ram(server, placements[server.id]) < 0:
            errs.append(
                f"server {server.id}: initial placements exceed RAM capacity "
                f"({server.ram_capacity} MiB)"
            )

    for server_id, state in model.initial_power_states.items():
        if server_id not in seen_servers:
            errs.append(f"initial_power_states names unknown server {server_id}")
        if state not in (POWER_ON, POWER_OFF):
            errs.append(f"initial power state for {server_id} must be on/off, got {state!r}")
    return errs


# --- JSON serialization ----------------------------------------------------

_MODEL_KEYS = {"servers", "power_models", "initial_vms", "initial_power_states"}
_SERVER_KEYS = {
    "id", "cores", "core_speed", "ram_capacity", "power_model_id",
    "has_power_meter", "idle_off_power",
}
_VM_KEYS = {"id", "flavor", "workload", "host", "state", "initiator"}


class ModelFormatError(ValueError):
    """Raised when a JSON document does not match the expected schema."""


def _reject_unknown(obj: Mapping, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ModelFormatError(f"{where}: unknown keys {sorted(unknown)}")


def workload_to_dict(workload: WorkloadModel) -> dict:
    if isinstance(workload, BlackBoxTrace):
        return {
            "kind": "blackbox_trace",
            "segments": [[d, w] for d, w in workload.segments],
        }
    return {
        "kind": "open_request_load",
        "series": [[t, r] for t, r in workload.series],
        "per_instance_capacity": workload.per_instance_capacity,
    }


def workload_from_dict(obj: Mapping) -> WorkloadModel:
    kind = obj.get("kind")
    if kind == "blackbox_trace":
        _reject_unknown(obj, {"kind", "segments"}, "workload")
        return BlackBoxTrace(tuple((float(d), float(w)) for d, w in obj["segments"]))
    if kind == "open_request_load":
        _reject_unknown(obj, {"kind", "series", "per_instance_capacity"}, "workload")
        return OpenRequestLoad(
            tuple((float(t), float(r)) for t, r in obj["series"]),
            float(obj["per_instance_capacity"]),
        )
    raise ModelFormatError(f"workload: unknown kind {kind!r}")


def flavor_to_dict(flavor: VmFlavor) -> dict:
    return {"vcpus": flavor.vcpus, "ram": flavor.ram}


def flavor_from_dict(obj: Mapping) -> VmFlavor:
    _reject_unknown(obj, {"vcpus", "ram"}, "flavor")
    return VmFlavor(int(obj["vcpus"]), float(obj["ram"]))


def power_model_to_dict(pm: PowerModel) -> dict:
    return {"family": pm.family, "coefficients": list(pm.coefficients)}


def power_model_from_dict(obj: Mapping) -> PowerModel:
    _reject_unknown(obj, {"family", "coefficients"}, "power model")
    return PowerModel(str(obj["family"]), tuple(float(c) for c in obj["coefficients"]))


def vm_to_dict(vm: VmInstance) -> dict:
    return {
        "id": vm.id,
        "flavor": flavor_to_dict(vm.flavor),
        "workload": workload_to_dict(vm.workload),
        "host": vm.host,
        "state": vm.state.value,
        "initiator": vm.initiator.value,
    }


def vm_from_dict(obj: Mapping) -> VmInstance:
    _reject_unknown(obj, _VM_KEYS, "vm")
    return VmInstance(
        id=str(obj["id"]),
        flavor=flavor_from_dict(obj["flavor"]),
        workload=workload_from_dict(obj["workload"]),
        host=obj.get("host"),
        state=VmState(obj.get("state", "running")),
        initiator=Initiator(obj.get("initiator", "tenant")),
    )


def model_to_dict(model: DataCenterModel) -> dict:
    return {
        "servers": [
            {
                "id": s.id,
                "cores": s.cores,
                "core_speed": s.core_speed,
                "ram_capacity": s.ram_capacity,
                "power_model_id": s.power_model_id,
                "has_power_meter": s.has_power_meter,
                "idle_off_power": s.idle_off_power,
            }
            for s in model.servers
        ],
        "power_models": {
            pm_id: power_model_to_dict(pm) for pm_id, pm in model.power_models.items()
        },
        "initial_vms": [vm_to_dict(vm) for vm in model.initial_vms],
        "initial_power_states": dict(model.initial_power_states),
    }


def model_from_dict(obj: Mapping) -> DataCenterModel:
    _reject_unknown(obj, _MODEL_KEYS, "data center model")
    servers = []
    for raw in obj.get("servers", []):
        _reject_unknown(raw, _SERVER_KEYS, "server")
        servers.append(
            ServerSpec(
                id=str(raw["id"]),
                cores=int(raw["cores"]),
                core_speed=float(raw["core_speed"]),
                ram_capacity=float(raw["ram_capacity"]),
                power_model_id=str(raw["power_model_id"]),
                has_power_meter=bool(raw.get("has_power_meter", True)),
                idle_off_power=float(raw.get("idle_off_power", 0.0)),
            )
        )
    power_models = {
        str(pm_id): power_model_from_dict(raw)
        for pm_id, raw in obj.get("power_models", {}).items()
    }
    initial_vms = tuple(vm_from_dict(raw) for raw in obj.get("initial_vms", []))
    power_states = {str(k): str(v) for k, v in obj.get("initial_power_states", {}).items()}
    return DataCenterModel(tuple(servers), power_models, initial_vms, power_states)


def dump_model(model: DataCenterModel) -> str:
    return json.dumps(model_to_dict(model), indent=2, sort_keys=True)


def parse_model(text: str) -> DataCenterModel:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ModelFormatError("data center model must be a JSON object")
    return model_from_dict(obj)


def load_model(path) -> DataCenterModel:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model(fh.read())
