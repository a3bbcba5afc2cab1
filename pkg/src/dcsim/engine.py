"""Deterministic discrete-event simulation kernel.

Processes the scenario timeline, feeds the runtime view to the configured
algorithms at their intervals, enacts their decisions, and assembles the
report. The kernel is single-threaded; identical inputs (including the
seed) yield identical reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import correspondence as corr_mod
from .algorithms import (
    OPTIMIZER_FUNCTIONS,
    PLACEMENT_FUNCTIONS,
    AlgorithmConfig,
    ScaleInInstances,
    ScaleOutBy,
    manage_power,
    react_decide,
    reg_decide,
)
from .correspondence import (
    APPLICATION,
    SERVER,
    VM,
    WORKLOAD,
    CorrespondenceModel,
    Place,
    Rejected,
    ScaleIn,
    ScaleOut,
    enact,
    sync_measurements,
)
from .model import (
    DataCenterModel,
    Initiator,
    OpenRequestLoad,
    VmState,
    host_capacity,
    validate,
)
from .scenario import (
    ChangeOptimisationInterval,
    EventStatus,
    ExperimentScenario,
    ReconfigureOptimisationAlgorithm,
    StartApplication,
    StopApplication,
    TimelineEvent,
    check_scenario,
    resolve_trigger_time,
)
from .state import (
    AUTOSCALER_TICK,
    BOOT_FINISHED,
    MEASUREMENT_SAMPLE,
    MIGRATION_FINISHED,
    OPTIMIZER_TICK,
    POWER_TRANSITION_FINISHED,
    RATE_UPDATE,
    SCENARIO_REQUEST,
    SEGMENT_BOUNDARY,
    VM_COMPLETED,
    ActionEntry,
    AppRuntime,
    LifecycleEntry,
    MetricSample,
    SimEvent,
    SimulationState,
    VmRecord,
    proportional_share_rates,
)

__all__ = [
    "SimConfig",
    "SimulationReport",
    "run",
    "proportional_share_rates",
    "integrate_energy",
    "sample_measurements",
    "SimEvent",
]

@dataclass(frozen=True)
class SimConfig:
    end_time: float
    measurement_interval: float = 30.0
    optimizer_interval: float = 300.0
    autoscaler_interval: float = 60.0
    boot_latency: float = 0.0
    placement_decision_latency: float = 0.0
    migration_bandwidth: float = 1024.0  # MiB/s
    power_transition_latency: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.end_time <= 0:
            raise ValueError("end_time must be > 0")
        for name in ("measurement_interval", "optimizer_interval", "autoscaler_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.migration_bandwidth <= 0:
            raise ValueError("migration_bandwidth must be > 0")
        for name in ("boot_latency", "placement_decision_latency", "power_transition_latency"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def integrate_energy(power_series: list[tuple[float, float]], end_time: float) -> float:
    """Watt-hours under a piecewise-constant power series.

    Each value holds until the next point; the last one extends to
    ``end_time``. An empty series integrates to zero.
    """
    if not power_series:
        return 0.0
    if end_time < power_series[-1][0]:
        raise ValueError("end_time precedes the last sample")
    watt_seconds = 0.0
    for (t0, watts), (t1, _) in zip(power_series, power_series[1:]):
        if t1 <= t0:
            raise ValueError("power series times must be strictly increasing")
        watt_seconds += watts * (t1 - t0)
    watt_seconds += power_series[-1][1] * (end_time - power_series[-1][0])
    return watt_seconds / 3600.0


def sample_measurements(sim: SimulationState, t: float) -> None:
    """Record the instantaneous measurements the runtime toolkit would see.

    Per server: aggregate CPU utilization, power draw, free RAM. Per active
    VM: its share of the host expressed as a utilization fraction. The
    records feed the runtime view and the exported monitoring trace.
    """
    for server_id in sim.servers:
        sim.metrics.append(
            MetricSample(t, "server", server_id, "cpu_utilization",
                         sim.server_utilization(server_id))
        )
        sim.metrics.append(
            MetricSample(t, "server", server_id, "power_w", sim.server_power(server_id))
        )
        sim.metrics.append(
            MetricSample(t, "server", server_id, "free_ram_mib",
                         sim.servers[server_id].free_ram(sim))
        )
    for vm_id, vm in sim.vms.items():
        if vm.state in (VmState.RUNNING, VmState.MIGRATING) and vm.host is not None:
            cap = host_capacity(sim.servers[vm.host].spec)
            sim.metrics.append(
                MetricSample(t, "vm", vm_id, "vm_cpu_utilization", vm.granted_rate / cap)
            )


@dataclass
class SimulationReport:
    """Everything a run produced, sufficient to re-derive its metrics."""

    end_time: float
    seed: int
    utilization: dict[str, list[tuple[float, float]]]
    power: dict[str, list[tuple[float, float]]]
    energy_wh: dict[str, float]
    total_energy_wh: float
    actions: list[ActionEntry]
    vm_records: dict[str, VmRecord]
    autoscaler_series: list[tuple[float, str, int, float]]
    app_instance_counts: dict[str, list[tuple[float, int]]]
    metrics: list[MetricSample] = field(default_factory=list)
    lifecycle: list[LifecycleEntry] = field(default_factory=list)

    def placements(self) -> list[tuple[str, str]]:
        """(vm, server) pairs in the order placements were enacted."""
        out = []
        for entry in self.actions:
            if entry.action == "place" and entry.outcome == "enacted":
                vm_id, server_id = entry.subject.split("->", 1)
                out.append((vm_id, server_id))
        return out

    def rejected_placements(self) -> int:
        return sum(
            1
            for entry in self.actions
            if entry.action in ("place", "start-request", "scale-out")
            and entry.outcome.startswith("rejected")
        )

    def scaling_action_count(self, app_id: str | None = None) -> int:
        count = 0
        for entry in self.actions:
            if entry.action not in ("scale-out", "scale-in"):
                continue
            if entry.outcome != "enacted":
                continue
            # subject is the app id (scale-out) or "app/instance" (scale-in)
            subject_app = entry.subject.split("/", 1)[0]
            if app_id is not None and subject_app != app_id:
                continue
            count += 1
        return count

    def mean_instances(self, app_id: str) -> float:
        points = self.app_instance_counts[app_id]
        if not points:
            return 0.0
        start = points[0][0]
        if self.end_time <= start:
            return float(points[0][1])
        area = 0.0
        for (t0, n), (t1, _) in zip(points, points[1:]):
            area += n * (t1 - t0)
        area += points[-1][1] * (self.end_time - points[-1][0])
        return area / (self.end_time - start)

    def to_dict(self) -> dict:
        return {
            "end_time": self.end_time,
            "seed": self.seed,
            "total_energy_wh": self.total_energy_wh,
            "energy_wh": dict(self.energy_wh),
            "servers": {
                sid: {
                    "utilization": [[t, v] for t, v in self.utilization[sid]],
                    "power": [[t, v] for t, v in self.power[sid]],
                }
                for sid in self.utilization
            },
            "actions": [
                {"time": a.time, "action": a.action, "subject": a.subject,
                 "outcome": a.outcome}
                for a in self.actions
            ],
            "vms": {
                vm_id: {
                    "initiator": r.initiator,
                    "submit_time": r.submit_time,
                    "start_time": r.start_time,
                    "end_time": r.end_time,
                    "end_kind": r.end_kind,
                    "hosts": [[t, h] for t, h in r.hosts],
                }
                for vm_id, r in self.vm_records.items()
            },
            "autoscaler": [
                {"time": t, "application": app, "instances": n, "rate": rate}
                for t, app, n, rate in self.autoscaler_series
            ],
            "app_instance_counts": {
                app: [[t, n] for t, n in points]
                for app, points in self.app_instance_counts.items()
            },
        }


class _Engine:
    def __init__(
        self,
        model: DataCenterModel,
        scenario: ExperimentScenario,
        algorithms: AlgorithmConfig,
        config: SimConfig,
    ) -> None:
        problems = validate(model)
        if problems:
            raise ValueError("model does not validate: " + "; ".join(problems))
        check_scenario(scenario, known_vm_ids=[vm.id for vm in model.initial_vms])
        self._check_algorithm_references(scenario)
        self.model = model
        self.scenario = scenario
        self.algorithms = algorithms
        self.config = config
        self.sim = SimulationState(model, config)
        self.sim.placement_fn = PLACEMENT_FUNCTIONS[algorithms.placement]
        self.corr = CorrespondenceModel()
        self.events: dict[str, TimelineEvent] = {ev.id: ev for ev in scenario.events}
        self.completions: dict[str, float] = {}
        self.pending_relative: list[TimelineEvent] = []
        self.event_of_vm: dict[str, str] = {}
        self.optimizer_id = algorithms.optimizer or "none"
        self.optimizer_interval = config.optimizer_interval
        self.autoscaler_series: list[tuple[float, str, int, float]] = []
        self.handlers = {
            SCENARIO_REQUEST: lambda p: self._handle_scenario_request(*p),
            SEGMENT_BOUNDARY: lambda p: self._handle_segment_boundary(*p),
            VM_COMPLETED: lambda p: self._handle_vm_completed(*p),
            BOOT_FINISHED: lambda p: self._handle_boot_finished(*p),
            MIGRATION_FINISHED: lambda p: corr_mod.handle_migration_finished(self.sim, *p),
            POWER_TRANSITION_FINISHED: lambda p: corr_mod.handle_power_transition(
                self.sim, *p
            ),
            OPTIMIZER_TICK: lambda p: self._handle_optimizer_tick(*p),
            AUTOSCALER_TICK: lambda p: self._handle_autoscaler_tick(),
            MEASUREMENT_SAMPLE: lambda p: self._handle_measurement(),
            RATE_UPDATE: lambda p: self._handle_rate_update(*p),
        }

    @staticmethod
    def _check_algorithm_references(scenario: ExperimentScenario) -> None:
        for ev in scenario.events:
            if isinstance(ev.request, ReconfigureOptimisationAlgorithm):
                if ev.request.algorithm not in OPTIMIZER_FUNCTIONS:
                    raise ValueError(
                        f"event {ev.id!r} references unknown optimisation "
                        f"algorithm {ev.request.algorithm!r}"
                    )

    # -- setup -------------------------------------------------------------

    def _install_initial_vms(self) -> None:
        for server in self.model.servers:
            self.corr.link(SERVER, server.id, server.id)
        for vm_model in self.model.initial_vms:
            app_id = None
            if isinstance(vm_model.workload, OpenRequestLoad):
                app_id = vm_model.id
                self._create_application(vm_model.id, vm_model.workload, vm_model.flavor)
            vm = self.sim.create_vm(
                vm_model.id, vm_model.flavor, vm_model.workload,
                vm_model.initiator, app_id=app_id,
            )
            server = self.sim.servers[vm_model.host]
            server.vm_ids.append(vm.id)
            vm.host = vm_model.host
            vm.state = VmState.RUNNING
            vm.record.hosts.append((0.0, vm_model.host))
            vm.record.start_time = 0.0
            self.sim.record_lifecycle(vm, "started", host_id=vm.host)
            self.corr.link(VM, vm.id, vm.id)
            self.corr.link(WORKLOAD, f"{vm.id}/workload", f"{vm.id}/workload")
            if vm.is_trace():
                if vm.workload.segments:
                    self.sim.init_segment(vm)
                else:
                    self.sim.complete_vm(vm)
                    continue
            if app_id is not None:
                app = self.sim.apps[app_id]
                app.instance_ids.append(vm.id)
                self.sim.record_app_count(app, 0.0)
                self.sim.recompute_app_demand(app, 0.0)

    def _create_application(self, app_id: str, load: OpenRequestLoad, flavor) -> AppRuntime:
        app = AppRuntime(
            id=app_id, load=load, flavor=flavor, created_at=self.sim.now
        )
        self.sim.apps[app_id] = app
        self.corr.link(APPLICATION, app_id, app_id)
        for offset, _rate in load.series:
            when = self.sim.now + offset
            if when <= self.config.end_time:
                self.sim.schedule(when, RATE_UPDATE, (app_id,))
        return app

    def _schedule_initial_events(self) -> None:
        for ev in self.scenario.events:
            ev.status = EventStatus.PENDING
            when = resolve_trigger_time(ev, self.completions)
            if when is None:
                self.pending_relative.append(ev)
            elif when <= self.config.end_time:
                ev.status = EventStatus.READY
                self.sim.schedule(when, SCENARIO_REQUEST, (ev.id,))
        self.sim.schedule(0.0, MEASUREMENT_SAMPLE, ())
        # The tick chain always runs: a scenario may switch the optimizer on
        # mid-run, and the tick is a no-op while it is "none".
        self.sim.schedule(self.optimizer_interval, OPTIMIZER_TICK,
                          (self.sim.optimizer_epoch,))
        if self.algorithms.autoscaler not in (None, "none"):
            self.sim.schedule(self.config.autoscaler_interval, AUTOSCALER_TICK, ())

    # -- event handlers ------------------------------------------------------

    def _complete_event(self, event_id: str, when: float) -> None:
        self.events[event_id].status = EventStatus.COMPLETED
        self.completions[event_id] = when
        still_pending = []
        for ev in self.pending_relative:
            trigger = resolve_trigger_time(ev, self.completions)
            if trigger is None:
                still_pending.append(ev)
                continue
            if trigger <= self.config.end_time:
                ev.status = EventStatus.READY
                self.sim.schedule(trigger, SCENARIO_REQUEST, (ev.id,))
        self.pending_relative = still_pending

    def _handle_scenario_request(self, event_id: str) -> None:
        ev = self.events[event_id]
        ev.status = EventStatus.EXECUTING
        request = ev.request
        if isinstance(request, StartApplication):
            self._handle_start(ev, request)
        elif isinstance(request, StopApplication):
            self._handle_stop(ev, request)
        elif isinstance(request, ReconfigureOptimisationAlgorithm):
            self.optimizer_id = request.algorithm
            self.sim.log("reconfigure-optimizer", request.algorithm, "applied")
            self._complete_event(event_id, self.sim.now)
        elif isinstance(request, ChangeOptimisationInterval):
            self.optimizer_interval = request.interval
            self.sim.optimizer_epoch += 1
            self.sim.schedule(
                self.sim.now + request.interval, OPTIMIZER_TICK,
                (self.sim.optimizer_epoch,),
            )
            self.sim.log("change-interval", f"{request.interval}", "applied")
            self._complete_event(event_id, self.sim.now)

    def _handle_start(self, ev: TimelineEvent, request: StartApplication) -> None:
        template = self.scenario.templates[request.template]
        flavor = request.flavor_override or template.flavor
        app_id = None
        if isinstance(template.workload, OpenRequestLoad):
            app_id = request.vm_id
            self._create_application(request.vm_id, template.workload, flavor)
        vm = self.sim.create_vm(
            request.vm_id, flavor, template.workload, Initiator.TENANT, app_id=app_id
        )
        self.corr.vm_spawn_event[vm.id] = ev.id
        self.event_of_vm[vm.id] = ev.id
        self.corr.link(WORKLOAD, f"{vm.id}/workload", f"{vm.id}/workload")
        snapshot = sync_measurements(self.sim)
        server_id = self.sim.placement_fn(snapshot, flavor)
        outcome = None
        if server_id is not None:
            outcome = enact(
                Place(vm.id, server_id), self.sim, self.corr,
                extra_boot_delay=self.config.placement_decision_latency,
            )
        if server_id is None or isinstance(outcome, Rejected):
            vm.record.end_kind = "rejected"
            vm.record.end_time = self.sim.now
            self.sim.log("start-request", vm.id, "rejected: no feasible server")
            self._complete_event(ev.id, self.sim.now)
            return
        if app_id is not None:
            app = self.sim.apps[app_id]
            app.instance_ids.append(vm.id)
            self.sim.record_app_count(app, self.sim.now)
        self.sim.log("start-request", vm.id, f"placing on {server_id}")

    def _handle_stop(self, ev: TimelineEvent, request: StopApplication) -> None:
        target = request.target
        if target in self.events and isinstance(
            self.events[target].request, StartApplication
        ):
            vm_id = self.events[target].request.vm_id
        else:
            vm_id = target
        vm = self.sim.vms.get(vm_id)
        if vm is None:
            self.sim.log("stop-request", vm_id, "no-op: vm never started")
        elif vm.state in (VmState.COMPLETED, VmState.TERMINATED):
            self.sim.log("stop-request", vm_id, f"no-op: already {vm.state.value}")
        elif vm.state is VmState.PENDING:
            if vm.record.end_kind == "rejected":
                self.sim.log("stop-request", vm_id, "no-op: placement was rejected")
            else:
                vm.record.end_time = self.sim.now
                vm.record.end_kind = "terminated"
                vm.state = VmState.TERMINATED
                self.sim.record_lifecycle(vm, "terminated")
                self.sim.log("stop-request", vm_id, "cancelled before placement")
        else:
            self.sim.terminate_vm(vm)
            self.sim.log("stop-request", vm_id, f"terminated {vm_id}")
        self._complete_event(ev.id, self.sim.now)

    def _handle_boot_finished(self, vm_id: str, epoch: int) -> None:
        if not corr_mod.handle_boot_finished(self.sim, vm_id, epoch):
            return
        event_id = self.event_of_vm.get(vm_id)
        if event_id is not None:
            self._complete_event(event_id, self.sim.now)

    def _handle_segment_boundary(self, vm_id: str, epoch: int) -> None:
        vm = self.sim.vms.get(vm_id)
        if vm is None or vm.epoch != epoch:
            return
        if vm.state not in (VmState.RUNNING, VmState.MIGRATING) or vm.host is None:
            return
        self.sim.advance_host(vm.host, self.sim.now)
        vm.seg_remaining = 0.0
        vm.seg_idx += 1
        if vm.seg_idx < len(vm.workload.segments):
            self.sim.init_segment(vm)
        self.sim.refresh_host(vm.host, self.sim.now)

    def _handle_vm_completed(self, vm_id: str, epoch: int) -> None:
        vm = self.sim.vms.get(vm_id)
        if vm is None or vm.epoch != epoch:
            return
        if vm.state not in (VmState.RUNNING, VmState.MIGRATING):
            return
        if vm.host is not None:
            self.sim.advance_host(vm.host, self.sim.now)
        vm.seg_remaining = 0.0
        vm.seg_idx = len(vm.workload.segments)
        self.sim.complete_vm(vm)
        self.sim.log("complete", vm_id, "ran to completion")

    def _handle_optimizer_tick(self, epoch: int) -> None:
        if epoch != self.sim.optimizer_epoch:
            return
        if self.optimizer_id != "none":
            snapshot = sync_measurements(self.sim)
            plan = OPTIMIZER_FUNCTIONS[self.optimizer_id](snapshot, self.algorithms)
            for action in plan:
                enact(action, self.sim, self.corr)
        if self.algorithms.power_manager_enabled:
            snapshot = sync_measurements(self.sim)
            for action in manage_power(snapshot, self.algorithms.spare_servers):
                enact(action, self.sim, self.corr)
        self.sim.schedule(
            self.sim.now + self.optimizer_interval, OPTIMIZER_TICK, (epoch,)
        )

    def _handle_autoscaler_tick(self) -> None:
        for app_id in sorted(self.sim.apps):
            app = self.sim.apps[app_id]
            rate = app.offered_rate(self.sim.now)
            app.rate_history.append((self.sim.now, rate))
            instances = tuple(app.instance_ids)
            if not instances:
                continue
            capacity = app.load.per_instance_capacity
            if self.algorithms.autoscaler == "react":
                decision = react_decide(rate, instances, capacity, self.algorithms.react)
            else:
                decision = reg_decide(
                    rate, instances, capacity, app.rate_history,
                    self.algorithms.reg, self.config.autoscaler_interval,
                )
            if isinstance(decision, ScaleOutBy):
                for _ in range(decision.count):
                    enact(ScaleOut(app_id), self.sim, self.corr)
            elif isinstance(decision, ScaleInInstances):
                for instance_id in decision.instance_ids:
                    enact(ScaleIn(app_id, instance_id), self.sim, self.corr)
            self.autoscaler_series.append(
                (self.sim.now, app_id, len(app.instance_ids), rate)
            )
        self.sim.schedule(
            self.sim.now + self.config.autoscaler_interval, AUTOSCALER_TICK, ()
        )

    def _handle_rate_update(self, app_id: str) -> None:
        app = self.sim.apps.get(app_id)
        if app is not None:
            self.sim.recompute_app_demand(app, self.sim.now)

    # -- main loop ----------------------------------------------------------

    def run(self) -> SimulationReport:
        self._install_initial_vms()
        for server_id in self.sim.servers:
            self.sim.refresh_host(server_id, 0.0)
        self._schedule_initial_events()
        while True:
            event = self.sim.pop_event()
            if event is None or event.time > self.config.end_time:
                break
            self.sim.now = event.time
            self.handlers[event.kind](event.payload)
        self.sim.now = self.config.end_time
        return self._build_report()

    def _handle_measurement(self) -> None:
        sample_measurements(self.sim, self.sim.now)
        sync_measurements(self.sim)
        self.sim.schedule(
            self.sim.now + self.config.measurement_interval, MEASUREMENT_SAMPLE, ()
        )

    def _build_report(self) -> SimulationReport:
        energy = {
            server_id: integrate_energy(server.power_points, self.config.end_time)
            for server_id, server in self.sim.servers.items()
        }
        return SimulationReport(
            end_time=self.config.end_time,
            seed=self.config.seed,
            utilization={
                sid: list(s.util_points) for sid, s in self.sim.servers.items()
            },
            power={sid: list(s.power_points) for sid, s in self.sim.servers.items()},
            energy_wh=energy,
            total_energy_wh=sum(energy.values()),
            actions=list(self.sim.action_log),
            vm_records={vm_id: vm.record for vm_id, vm in self.sim.vms.items()},
            autoscaler_series=self.autoscaler_series,
            app_instance_counts={
                app_id: list(app.count_points) for app_id, app in self.sim.apps.items()
            },
            metrics=list(self.sim.metrics),
            lifecycle=list(self.sim.lifecycle),
        )


def run(
    model: DataCenterModel,
    scenario: ExperimentScenario,
    algorithms: AlgorithmConfig,
    config: SimConfig,
) -> SimulationReport:
    """Simulate the scenario against the model and return the full report."""
    return _Engine(model, scenario, algorithms, config).run()
