"""Runtime-model view, entity links, and adaptation enactment rules.

Management algorithms never touch simulation state directly. They read a
``RuntimeModelSnapshot`` (a consistent copy synchronized from the
simulation) and return ``AdaptationAction`` values, which ``enact``
translates into simulation state changes and scheduled events. The
``CorrespondenceModel`` keeps the typed, bidirectional entity links plus
the bits derivable from neither side, such as which timeline event spawned
a VM.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import (
    POWER_OFF,
    POWER_ON,
    DataCenterModel,
    Initiator,
    VmFlavor,
    VmState,
    validate,
)
from .state import POWER_TRANSITION_FINISHED, SimEvent, SimulationState

SERVER = "server"
VM = "vm"
APPLICATION = "application"
WORKLOAD = "workload"


@dataclass(frozen=True)
class ServerView:
    id: str
    cores: int
    core_speed: float
    ram_capacity: float
    power_state: str
    utilization: float
    free_ram: float


@dataclass(frozen=True)
class VmView:
    id: str
    flavor: VmFlavor
    host: str | None
    state: VmState
    recent_demand: float


@dataclass(frozen=True)
class ApplicationView:
    id: str
    instance_ids: tuple[str, ...]
    offered_rate: float
    per_instance_capacity: float


@dataclass(frozen=True)
class RuntimeModelSnapshot:
    """Read-only data-center view handed to algorithms."""

    servers: tuple[ServerView, ...]
    vms: tuple[VmView, ...]
    applications: tuple[ApplicationView, ...]
    current_time: float

    def server(self, server_id: str) -> ServerView:
        for s in self.servers:
            if s.id == server_id:
                return s
        raise KeyError(server_id)


class CorrespondenceModel:
    """Bidirectional links between runtime-model and simulation entities."""

    def __init__(self) -> None:
        self._to_sim: dict[str, dict[str, str]] = {
            SERVER: {}, VM: {}, APPLICATION: {}, WORKLOAD: {},
        }
        self._to_runtime: dict[str, dict[str, str]] = {
            SERVER: {}, VM: {}, APPLICATION: {}, WORKLOAD: {},
        }
        #: event id that spawned a VM; not derivable from either model.
        self.vm_spawn_event: dict[str, str] = {}
        #: application membership of autoscaled instance VMs.
        self.vm_application: dict[str, str] = {}

    def link(self, kind: str, runtime_id: str, sim_id: str) -> None:
        existing = self._to_sim[kind].get(runtime_id)
        if existing is not None and existing != sim_id:
            raise ValueError(f"{kind} link for {runtime_id!r} already exists")
        reverse = self._to_runtime[kind].get(sim_id)
        if reverse is not None and reverse != runtime_id:
            raise ValueError(f"{kind} link for sim entity {sim_id!r} already exists")
        self._to_sim[kind][runtime_id] = sim_id
        self._to_runtime[kind][sim_id] = runtime_id

    def unlink(self, kind: str, runtime_id: str) -> None:
        sim_id = self._to_sim[kind].pop(runtime_id, None)
        if sim_id is not None:
            self._to_runtime[kind].pop(sim_id, None)

    def sim_id(self, kind: str, runtime_id: str) -> str | None:
        return self._to_sim[kind].get(runtime_id)

    def runtime_id(self, kind: str, sim_id: str) -> str | None:
        return self._to_runtime[kind].get(sim_id)

    def links(self, kind: str) -> dict[str, str]:
        return dict(self._to_sim[kind])


# --- adaptation actions ------------------------------------------------------


@dataclass(frozen=True)
class Place:
    vm_id: str
    server_id: str


@dataclass(frozen=True)
class Migrate:
    vm_id: str
    source: str
    target: str


@dataclass(frozen=True)
class PowerOn:
    server_id: str


@dataclass(frozen=True)
class PowerOff:
    server_id: str


@dataclass(frozen=True)
class ScaleOut:
    application_id: str


@dataclass(frozen=True)
class ScaleIn:
    application_id: str
    instance_id: str


AdaptationAction = Place | Migrate | PowerOn | PowerOff | ScaleOut | ScaleIn


@dataclass(frozen=True)
class Enacted:
    events: tuple[SimEvent, ...] = ()


@dataclass(frozen=True)
class Rejected:
    reason: str


ActionOutcome = Enacted | Rejected


def describe(action: AdaptationAction) -> tuple[str, str]:
    """(action name, subject) pair for the action log."""
    if isinstance(action, Place):
        return "place", f"{action.vm_id}->{action.server_id}"
    if isinstance(action, Migrate):
        return "migrate", f"{action.vm_id}:{action.source}->{action.target}"
    if isinstance(action, PowerOn):
        return "power-on", action.server_id
    if isinstance(action, PowerOff):
        return "power-off", action.server_id
    if isinstance(action, ScaleOut):
        return "scale-out", action.application_id
    return "scale-in", f"{action.application_id}/{action.instance_id}"


# --- building and synchronizing the runtime view -----------------------------


def build_initial(
    model: DataCenterModel, sim: SimulationState | None = None
) -> tuple[RuntimeModelSnapshot, CorrespondenceModel]:
    """Initial runtime view and correspondence for a validated model.

    When ``sim`` is given the links attach to live simulation entities;
    otherwise a detached view is produced (useful for inspecting a model).
    """
    problems = validate(model)
    if problems:
        raise ValueError("model does not validate: " + "; ".join(problems))
    corr = CorrespondenceModel()
    for server in model.servers:
        corr.link(SERVER, server.id, server.id)
    for vm in model.initial_vms:
        corr.link(VM, vm.id, vm.id)
    if sim is not None:
        snapshot = sync_measurements(sim)
    else:
        placed: dict[str, float] = {s.id: 0.0 for s in model.servers}
        for vm in model.initial_vms:
            if vm.host in placed:
                placed[vm.host] += vm.flavor.ram
        snapshot = RuntimeModelSnapshot(
            servers=tuple(
                ServerView(
                    id=s.id,
                    cores=s.cores,
                    core_speed=s.core_speed,
                    ram_capacity=s.ram_capacity,
                    power_state=model.power_state(s.id),
                    utilization=0.0,
                    free_ram=s.ram_capacity - placed[s.id],
                )
                for s in model.servers
            ),
            vms=tuple(
                VmView(vm.id, vm.flavor, vm.host, vm.state, 0.0)
                for vm in model.initial_vms
            ),
            applications=(),
            current_time=0.0,
        )
    return snapshot, corr


def sync_measurements(
    sim: SimulationState, snapshot: RuntimeModelSnapshot | None = None
) -> RuntimeModelSnapshot:
    """Fresh runtime view reflecting the simulation's current values.

    The returned snapshot is a consistent copy; algorithms observing it
    mid-tick can never see partially applied plans.
    """
    servers = []
    for server_id, server in sim.servers.items():
        effective = POWER_ON if server.usable() else POWER_OFF
        servers.append(
            ServerView(
                id=server_id,
                cores=server.spec.cores,
                core_speed=server.spec.core_speed,
                ram_capacity=server.spec.ram_capacity,
                power_state=effective,
                utilization=sim.server_utilization(server_id),
                free_ram=server.free_ram(sim),
            )
        )
    vms = []
    for vm_id, vm in sim.vms.items():
        if vm.state in (VmState.COMPLETED, VmState.TERMINATED):
            continue
        vms.append(VmView(vm_id, vm.flavor, vm.host, vm.state, vm.current_demand(sim)))
    apps = tuple(
        ApplicationView(
            id=app_id,
            instance_ids=tuple(app.instance_ids),
            offered_rate=app.offered_rate(sim.now),
            per_instance_capacity=app.load.per_instance_capacity,
        )
        for app_id, app in sim.apps.items()
    )
    return RuntimeModelSnapshot(
        servers=tuple(servers), vms=tuple(vms), applications=apps, current_time=sim.now
    )


# --- enactment ----------------------------------------------------------------


def enact(
    action: AdaptationAction,
    sim: SimulationState,
    corr: CorrespondenceModel,
    extra_boot_delay: float = 0.0,
) -> ActionOutcome:
    """Apply one adaptation action to the simulation.

    Immediate effects (RAM reservations, bookkeeping) happen synchronously;
    delayed effects arrive through the returned scheduled events. Infeasible
    actions are rejected with a reason, never raised. Every action lands in
    the action log either way.
    """
    name, subject = describe(action)
    outcome = _enact(action, sim, corr, extra_boot_delay)
    if isinstance(outcome, Rejected):
        sim.log(name, subject, f"rejected: {outcome.reason}")
    else:
        sim.log(name, subject, "enacted")
    return outcome


def _enact(
    action: AdaptationAction,
    sim: SimulationState,
    corr: CorrespondenceModel,
    extra_boot_delay: float,
) -> ActionOutcome:
    if isinstance(action, Place):
        vm = sim.vms.get(action.vm_id)
        if vm is None:
            return Rejected(f"unknown vm {action.vm_id}")
        if vm.state is not VmState.PENDING:
            return Rejected(f"vm {vm.id} is {vm.state.value}, not pending")
        server = sim.servers.get(action.server_id)
        if server is None:
            return Rejected(f"unknown server {action.server_id}")
        if not server.usable():
            return Rejected(f"server {action.server_id} is powered off")
        if server.free_ram(sim) < vm.flavor.ram:
            return Rejected(f"insufficient RAM on {action.server_id}")
        event = sim.place_vm(
            vm, action.server_id, extra_boot_delay + sim.config.boot_latency
        )
        if corr.runtime_id(VM, vm.id) is None:
            corr.link(VM, vm.id, vm.id)
        return Enacted((event,))

    if isinstance(action, Migrate):
        vm = sim.vms.get(action.vm_id)
        if vm is None:
            return Rejected(f"unknown vm {action.vm_id}")
        if vm.state is not VmState.RUNNING:
            return Rejected(f"vm {vm.id} is {vm.state.value}, not running")
        if vm.host != action.source:
            return Rejected(f"vm {vm.id} is on {vm.host}, not {action.source}")
        if action.source == action.target:
            return Rejected("migration source equals target")
        target = sim.servers.get(action.target)
        if target is None:
            return Rejected(f"unknown server {action.target}")
        if not target.usable():
            return Rejected(f"server {action.target} is powered off")
        if target.free_ram(sim) < vm.flavor.ram:
            return Rejected(f"insufficient RAM on {action.target}")
        event = sim.start_migration(vm, action.target)
        return Enacted((event,))

    if isinstance(action, (PowerOn, PowerOff)):
        server = sim.servers.get(action.server_id)
        if server is None:
            return Rejected(f"unknown server {action.server_id}")
        target_state = POWER_ON if isinstance(action, PowerOn) else POWER_OFF
        if server.pending_power is not None:
            return Rejected(f"server {action.server_id} has a transition in progress")
        if server.power_state == target_state:
            return Rejected(f"server {action.server_id} is already {target_state}")
        if target_state == POWER_OFF and server.vm_ids:
            return Rejected("server not empty")
        server.pending_power = target_state
        server.power_epoch += 1
        event = sim.schedule(
            sim.now + sim.config.power_transition_latency,
            POWER_TRANSITION_FINISHED,
            (action.server_id, server.power_epoch, target_state),
        )
        return Enacted((event,))

    if isinstance(action, ScaleOut):
        app = sim.apps.get(action.application_id)
        if app is None:
            return Rejected(f"unknown application {action.application_id}")
        if sim.placement_fn is None:
            return Rejected("no placement algorithm configured")
        instance_id = f"{app.id}-i{app.next_seq:04d}"
        app.next_seq += 1
        vm = sim.create_vm(
            instance_id, app.flavor, app.load, Initiator.AUTOSCALER, app_id=app.id
        )
        server_id = sim.placement_fn(sync_measurements(sim), vm.flavor)
        if server_id is None:
            vm.record.end_kind = "rejected"
            vm.record.end_time = sim.now
            return Rejected("no feasible server")
        event = sim.place_vm(vm, server_id, sim.config.boot_latency)
        corr.link(VM, instance_id, instance_id)
        corr.vm_application[instance_id] = app.id
        app.instance_ids.append(instance_id)
        sim.record_app_count(app, sim.now)
        sim.log("place", f"{instance_id}->{server_id}", "enacted")
        return Enacted((event,))

    if isinstance(action, ScaleIn):
        app = sim.apps.get(action.application_id)
        if app is None:
            return Rejected(f"unknown application {action.application_id}")
        if action.instance_id not in app.instance_ids:
            return Rejected(
                f"{action.instance_id} is not an instance of {action.application_id}"
            )
        if len(app.instance_ids) <= 1:
            return Rejected("cannot remove the last instance")
        vm = sim.vms[action.instance_id]
        sim.terminate_vm(vm)
        return Enacted(())

    return Rejected(f"unsupported action {action!r}")


def handle_boot_finished(sim: SimulationState, vm_id: str, epoch: int) -> bool:
    """Engine hook for BOOT_FINISHED events; returns False for stale events."""
    vm = sim.vms.get(vm_id)
    if vm is None or vm.move_epoch != epoch or vm.state is not VmState.BOOTING:
        return False
    sim.finish_boot(vm)
    return True


def handle_migration_finished(sim: SimulationState, vm_id: str, epoch: int) -> bool:
    vm = sim.vms.get(vm_id)
    if vm is None or vm.move_epoch != epoch or vm.state is not VmState.MIGRATING:
        return False
    sim.finish_migration(vm)
    return True


def handle_power_transition(
    sim: SimulationState, server_id: str, epoch: int, target_state: str
) -> bool:
    server = sim.servers.get(server_id)
    if server is None or server.power_epoch != epoch or server.pending_power != target_state:
        return False
    if target_state == POWER_OFF and server.vm_ids:
        server.pending_power = None
        sim.log("power-off", server_id, "aborted: server no longer empty")
        return False
    sim.advance_host(server_id, sim.now)
    server.power_state = target_state
    server.pending_power = None
    sim.refresh_host(server_id, sim.now)
    return True
