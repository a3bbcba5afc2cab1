"""Mutable simulation state and the CPU/power bookkeeping that keeps it exact.

The discrete-event engine owns a single ``SimulationState``. Adaptation
enactment (``dcsim.correspondence``) mutates it through the methods here, so
every state change settles in-progress work first and re-records the
utilization/power series at the instant of change. Power series therefore
stay piecewise-constant with a point at every change, which makes energy
integration exact rather than sampled.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .model import (
    POWER_OFF,
    POWER_ON,
    BlackBoxTrace,
    DataCenterModel,
    Initiator,
    OpenRequestLoad,
    VmFlavor,
    VmState,
    WorkloadModel,
    eval_power,
    host_capacity,
)


def proportional_share_rates(demands: Sequence[float], capacity: float) -> list[float]:
    """Generalized processor sharing: grant demands, scaled down on overload.

    If total demand fits the capacity every VM receives exactly its demand;
    otherwise each receives ``demand * capacity / total``, so the granted
    total equals ``min(total, capacity)``.
    """
    total = sum(demands)
    if total <= capacity:
        return list(demands)
    scale = capacity / total
    return [d * scale for d in demands]


@dataclass(frozen=True)
class SimEvent:
    """A scheduled kernel event; the queue pops in (time, sequence) order."""

    time: float
    sequence: int
    kind: str
    payload: tuple = ()


# Event kinds understood by the engine loop.
SCENARIO_REQUEST = "scenario_request"
SEGMENT_BOUNDARY = "segment_boundary"
VM_COMPLETED = "vm_completed"
OPTIMIZER_TICK = "optimizer_tick"
AUTOSCALER_TICK = "autoscaler_tick"
MEASUREMENT_SAMPLE = "measurement_sample"
MIGRATION_FINISHED = "migration_finished"
BOOT_FINISHED = "boot_finished"
POWER_TRANSITION_FINISHED = "power_transition_finished"
RATE_UPDATE = "rate_update"


@dataclass(frozen=True)
class MetricSample:
    time: float
    entity_kind: str  # "server" | "vm"
    entity_id: str
    metric: str
    value: float


@dataclass(frozen=True)
class LifecycleEntry:
    time: float
    vm_id: str
    event: str  # submitted | started | migrated | terminated | completed
    host_id: str | None
    vcpus: int
    ram: float
    initiator: str


@dataclass(frozen=True)
class ActionEntry:
    time: float
    action: str
    subject: str
    outcome: str


@dataclass
class VmRecord:
    """Per-VM report line: lifecycle timestamps and host history."""

    vm_id: str
    initiator: str
    submit_time: float
    start_time: float | None = None
    end_time: float | None = None
    end_kind: str = "running"  # completed | terminated | running | rejected
    hosts: list[tuple[float, str]] = field(default_factory=list)


@dataclass
class VmRuntime:
    id: str
    flavor: VmFlavor
    workload: WorkloadModel
    initiator: Initiator
    record: VmRecord
    state: VmState = VmState.PENDING
    host: str | None = None
    migration_target: str | None = None
    app_id: str | None = None
    # Black-box trace progress: seg_remaining counts work-units while the
    # segment demands CPU, wall-clock seconds while it is idle (demand 0).
    seg_idx: int = 0
    seg_remaining: float = 0.0
    granted_rate: float = 0.0
    last_settle: float = 0.0
    epoch: int = 0  # invalidates pending segment/completion events
    move_epoch: int = 0  # invalidates pending boot/migration events

    def is_trace(self) -> bool:
        return isinstance(self.workload, BlackBoxTrace)

    def current_demand(self, sim: "SimulationState") -> float:
        if self.state not in (VmState.RUNNING, VmState.MIGRATING):
            return 0.0
        if self.is_trace():
            segments = self.workload.segments
            if self.seg_idx >= len(segments):
                return 0.0
            return segments[self.seg_idx][1]
        app = sim.apps.get(self.app_id or "")
        return app.instance_demand if app is not None else 0.0


@dataclass
class ServerRuntime:
    spec: object  # ServerSpec
    power_state: str = POWER_ON
    pending_power: str | None = None
    vm_ids: list[str] = field(default_factory=list)  # every VM reserving RAM here
    power_epoch: int = 0
    util_points: list[tuple[float, float]] = field(default_factory=list)
    power_points: list[tuple[float, float]] = field(default_factory=list)

    def free_ram(self, sim: "SimulationState") -> float:
        used = sum(sim.vms[vm_id].flavor.ram for vm_id in self.vm_ids)
        return self.spec.ram_capacity - used

    def usable(self) -> bool:
        """Can accept placements: powered on and not about to power off."""
        return self.power_state == POWER_ON and self.pending_power != POWER_OFF


@dataclass
class AppRuntime:
    """A horizontally scalable application tier driven by an open request load."""

    id: str
    load: OpenRequestLoad
    flavor: VmFlavor
    created_at: float
    instance_ids: list[str] = field(default_factory=list)  # commissioned, in order
    next_seq: int = 1
    instance_demand: float = 0.0
    count_points: list[tuple[float, int]] = field(default_factory=list)
    rate_history: list[tuple[float, float]] = field(default_factory=list)

    def offered_rate(self, t: float) -> float:
        # Series times are relative to the application's creation.
        return self.load.rate_at(t - self.created_at)


class SimulationState:
    """Everything the kernel mutates, plus the scheduling primitives."""

    def __init__(self, model: DataCenterModel, config) -> None:
        self.model = model
        self.config = config
        self.now = 0.0
        self.sequence = 0
        self._queue: list[tuple[float, int, SimEvent]] = []
        self.servers: dict[str, ServerRuntime] = {
            s.id: ServerRuntime(spec=s, power_state=model.power_state(s.id))
            for s in model.servers
        }
        self.vms: dict[str, VmRuntime] = {}
        self.apps: dict[str, AppRuntime] = {}
        self.action_log: list[ActionEntry] = []
        self.metrics: list[MetricSample] = []
        self.lifecycle: list[LifecycleEntry] = []
        # Set by the engine: (snapshot, flavor) -> server id or None.
        self.placement_fn: Callable | None = None
        self.optimizer_epoch = 0

    # -- scheduling ----------------------------------------------------------

    def schedule(self, time: float, kind: str, payload: tuple = ()) -> SimEvent:
        event = SimEvent(time=time, sequence=self.sequence, kind=kind, payload=payload)
        self.sequence += 1
        heapq.heappush(self._queue, (event.time, event.sequence, event))
        return event

    def pop_event(self) -> SimEvent | None:
        if not self._queue:
            return None
        return heapq.heappop(self._queue)[2]

    # -- logging ---------------------------------------------------------------

    def log(self, action: str, subject: str, outcome: str) -> None:
        self.action_log.append(ActionEntry(self.now, action, subject, outcome))

    def record_lifecycle(self, vm: VmRuntime, event: str, host_id: str | None = None) -> None:
        self.lifecycle.append(
            LifecycleEntry(
                time=self.now,
                vm_id=vm.id,
                event=event,
                host_id=host_id,
                vcpus=vm.flavor.vcpus,
                ram=vm.flavor.ram,
                initiator=vm.initiator.value,
            )
        )

    # -- instantaneous readings -------------------------------------------------

    def active_vms(self, server_id: str) -> list[VmRuntime]:
        """VMs currently executing on this server (migration sources included)."""
        out = []
        for vm_id in self.servers[server_id].vm_ids:
            vm = self.vms[vm_id]
            if vm.host == server_id and vm.state in (VmState.RUNNING, VmState.MIGRATING):
                out.append(vm)
        return out

    def server_utilization(self, server_id: str) -> float:
        server = self.servers[server_id]
        if server.power_state != POWER_ON:
            return 0.0
        cap = host_capacity(server.spec)
        total = sum(vm.current_demand(self) for vm in self.active_vms(server_id))
        return min(total, cap) / cap

    def server_power(self, server_id: str) -> float:
        server = self.servers[server_id]
        if server.power_state != POWER_ON:
            return server.spec.idle_off_power
        pm = self.model.power_models[server.spec.power_model_id]
        return eval_power(pm, self.server_utilization(server_id))

    # -- work settlement ----------------------------------------------------------

    def advance_host(self, server_id: str, now: float) -> None:
        """Settle in-progress segment work on a host up to ``now``."""
        for vm in self.active_vms(server_id):
            self._advance_vm(vm, now)

    def _advance_vm(self, vm: VmRuntime, now: float) -> None:
        dt = now - vm.last_settle
        if dt > 0 and vm.is_trace() and vm.seg_idx < len(vm.workload.segments):
            demand = vm.workload.segments[vm.seg_idx][1]
            if demand > 0:
                vm.seg_remaining -= vm.granted_rate * dt
            else:
                vm.seg_remaining -= dt
        vm.last_settle = now

    def refresh_host(self, server_id: str, now: float) -> None:
        """Recompute granted rates, reschedule boundaries, re-record series."""
        server = self.servers[server_id]
        active = self.active_vms(server_id)
        cap = host_capacity(server.spec)
        demands = [vm.current_demand(self) for vm in active]
        rates = proportional_share_rates(demands, cap)
        for vm, rate in zip(active, rates):
            vm.granted_rate = rate
            if vm.is_trace():
                self._schedule_boundary(vm, now)
        self.record_series_point(server_id, now)

    def _schedule_boundary(self, vm: VmRuntime, now: float) -> None:
        vm.epoch += 1
        segments = vm.workload.segments
        if vm.seg_idx >= len(segments):
            return
        demand = segments[vm.seg_idx][1]
        remaining = max(vm.seg_remaining, 0.0)
        if demand > 0:
            # a granted rate of zero only arises from degenerate (denormal)
            # demands; such a VM is starved and never finishes the segment
            if vm.granted_rate <= 0.0:
                return
            eta = remaining / vm.granted_rate
        else:
            eta = remaining
        last = vm.seg_idx == len(segments) - 1
        kind = VM_COMPLETED if last else SEGMENT_BOUNDARY
        self.schedule(now + eta, kind, (vm.id, vm.epoch))

    def init_segment(self, vm: VmRuntime) -> None:
        duration, demand = vm.workload.segments[vm.seg_idx]
        vm.seg_remaining = duration * demand if demand > 0 else duration

    def record_series_point(self, server_id: str, now: float) -> None:
        server = self.servers[server_id]
        util = self.server_utilization(server_id)
        watts = self.server_power(server_id)
        for points, value in ((server.util_points, util), (server.power_points, watts)):
            if points and points[-1][0] == now:
                points[-1] = (now, value)
            elif not points or points[-1][1] != value:
                points.append((now, value))

    # -- application demand -----------------------------------------------------

    def serving_instances(self, app: AppRuntime) -> list[VmRuntime]:
        return [
            self.vms[vm_id]
            for vm_id in app.instance_ids
            if self.vms[vm_id].state in (VmState.RUNNING, VmState.MIGRATING)
        ]

    def recompute_app_demand(self, app: AppRuntime, now: float) -> None:
        """Re-split the offered request rate over serving instances.

        A fully loaded instance demands ``vcpus`` work-units per second;
        partial load scales linearly and excess load saturates at full
        utilization.
        """
        serving = self.serving_instances(app)
        rate = app.offered_rate(now)
        if serving:
            share = rate / len(serving)
            demand = min(share / app.load.per_instance_capacity, 1.0) * app.flavor.vcpus
        else:
            demand = 0.0
        if demand == app.instance_demand:
            return
        hosts = sorted({vm.host for vm in serving if vm.host is not None})
        for host in hosts:
            self.advance_host(host, now)
        app.instance_demand = demand
        for host in hosts:
            self.refresh_host(host, now)

    def record_app_count(self, app: AppRuntime, now: float) -> None:
        count = len(app.instance_ids)
        points = app.count_points
        if points and points[-1][0] == now:
            points[-1] = (now, count)
        else:
            points.append((now, count))

    # -- VM lifecycle transitions -----------------------------------------------

    def create_vm(
        self,
        vm_id: str,
        flavor: VmFlavor,
        workload: WorkloadModel,
        initiator: Initiator,
        app_id: str | None = None,
    ) -> VmRuntime:
        if vm_id in self.vms:
            raise ValueError(f"vm id {vm_id!r} already exists")
        record = VmRecord(vm_id=vm_id, initiator=initiator.value, submit_time=self.now)
        vm = VmRuntime(
            id=vm_id,
            flavor=flavor,
            workload=workload,
            initiator=initiator,
            record=record,
            app_id=app_id,
        )
        self.vms[vm_id] = vm
        self.record_lifecycle(vm, "submitted")
        return vm

    def place_vm(self, vm: VmRuntime, server_id: str, boot_delay: float) -> SimEvent:
        """Reserve RAM now and schedule the boot completion."""
        server = self.servers[server_id]
        server.vm_ids.append(vm.id)
        vm.host = server_id
        vm.state = VmState.BOOTING
        vm.move_epoch += 1
        vm.record.hosts.append((self.now, server_id))
        return self.schedule(self.now + boot_delay, BOOT_FINISHED, (vm.id, vm.move_epoch))

    def finish_boot(self, vm: VmRuntime) -> None:
        assert vm.host is not None
        self.advance_host(vm.host, self.now)
        vm.state = VmState.RUNNING
        vm.last_settle = self.now
        vm.record.start_time = self.now
        self.record_lifecycle(vm, "started", host_id=vm.host)
        if vm.is_trace():
            if not vm.workload.segments:  # empty trace: nothing to execute
                self.complete_vm(vm)
                return
            vm.seg_idx = 0
            self.init_segment(vm)
        if vm.app_id is not None:
            app = self.apps[vm.app_id]
            self.recompute_app_demand(app, self.now)
        self.refresh_host(vm.host, self.now)

    def start_migration(self, vm: VmRuntime, target_id: str) -> SimEvent:
        """Reserve RAM on the target and schedule the cutover."""
        self.servers[target_id].vm_ids.append(vm.id)
        vm.migration_target = target_id
        vm.state = VmState.MIGRATING
        vm.move_epoch += 1
        duration = vm.flavor.ram / self.config.migration_bandwidth
        return self.schedule(
            self.now + duration, MIGRATION_FINISHED, (vm.id, vm.move_epoch)
        )

    def finish_migration(self, vm: VmRuntime) -> None:
        source, target = vm.host, vm.migration_target
        assert source is not None and target is not None
        self.advance_host(source, self.now)
        self.advance_host(target, self.now)
        self.servers[source].vm_ids.remove(vm.id)
        vm.host = target
        vm.migration_target = None
        vm.state = VmState.RUNNING
        vm.record.hosts.append((self.now, target))
        self.record_lifecycle(vm, "migrated", host_id=target)
        self.refresh_host(source, self.now)
        self.refresh_host(target, self.now)

    def complete_vm(self, vm: VmRuntime) -> None:
        self._release_vm(vm, VmState.COMPLETED, "completed")

    def terminate_vm(self, vm: VmRuntime) -> None:
        self._release_vm(vm, VmState.TERMINATED, "terminated")

    def _release_vm(self, vm: VmRuntime, final_state: VmState, kind: str) -> None:
        vm.epoch += 1
        vm.move_epoch += 1
        touched = []
        if vm.host is not None:
            self.advance_host(vm.host, self.now)
            self.servers[vm.host].vm_ids.remove(vm.id)
            touched.append(vm.host)
        if vm.migration_target is not None:
            self.advance_host(vm.migration_target, self.now)
            self.servers[vm.migration_target].vm_ids.remove(vm.id)
            touched.append(vm.migration_target)
        vm.host = None
        vm.migration_target = None
        vm.state = final_state
        vm.record.end_time = self.now
        vm.record.end_kind = kind
        self.record_lifecycle(vm, kind)
        app = self.apps.get(vm.app_id or "")
        if app is not None and vm.id in app.instance_ids:
            app.instance_ids.remove(vm.id)
            self.record_app_count(app, self.now)
            self.recompute_app_demand(app, self.now)
        for host in touched:
            self.refresh_host(host, self.now)
