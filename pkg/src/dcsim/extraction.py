"""Reconstruction of simulation inputs from monitoring traces.

Ingests metric and VM-lifecycle CSVs, rebuilds timeline scenarios (with
optional filtering of autoscaler-initiated VMs), derives black-box VM
workloads normalized by the processing speed of their original host, and
trains server power models on bin-aggregated utilization/power pairs.
"""

from __future__ import annotations

import bisect
import csv
import logging
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import (
    POLYNOMIAL,
    POLYNOMIAL_PLUS_EXPONENTIAL,
    BlackBoxTrace,
    DataCenterModel,
    PowerModel,
    ServerSpec,
    VmFlavor,
    eval_power,
    host_capacity,
)
from .scenario import (
    AbsoluteTime,
    ApplicationTemplate,
    ExperimentScenario,
    RelativeTo,
    StartApplication,
    StopApplication,
    TimelineEvent,
)
from .state import LifecycleEntry, MetricSample

log = logging.getLogger("dcsim.extraction")

LIFECYCLE_EVENTS = ("submitted", "started", "migrated", "terminated", "completed")
TERMINAL_EVENTS = ("terminated", "completed")


class IngestError(ValueError):
    """Malformed or ill-ordered monitoring data; message carries location."""


class NoBehaviorModel(Exception):
    """The VM left no usable measurements to reconstruct a workload from."""


@dataclass
class MeasurementStore:
    """Historical monitoring data: metric samples plus VM lifecycle records."""

    metrics: list[MetricSample] = field(default_factory=list)
    lifecycle: list[LifecycleEntry] = field(default_factory=list)

    def entity_samples(self, kind: str, entity_id: str, metric: str) -> list[tuple[float, float]]:
        return [
            (m.time, m.value)
            for m in self.metrics
            if m.entity_kind == kind and m.entity_id == entity_id and m.metric == metric
        ]

    def vm_events(self, vm_id: str) -> list[LifecycleEntry]:
        return [e for e in self.lifecycle if e.vm_id == vm_id]

    def started(self, vm_id: str) -> LifecycleEntry | None:
        for e in self.lifecycle:
            if e.vm_id == vm_id and e.event == "started":
                return e
        return None

    def terminal(self, vm_id: str) -> LifecycleEntry | None:
        for e in self.lifecycle:
            if e.vm_id == vm_id and e.event in TERMINAL_EVENTS:
                return e
        return None

    def host_at(self, vm_id: str, t: float) -> str | None:
        """Host of a VM at time t, following migrations."""
        host = None
        for e in self.lifecycle:
            if e.vm_id != vm_id or e.time > t:
                continue
            if e.event in ("started", "migrated"):
                host = e.host_id
        return host


def _check_lifecycle_order(lifecycle: list[LifecycleEntry]) -> None:
    by_vm: dict[str, list[LifecycleEntry]] = {}
    for entry in lifecycle:
        by_vm.setdefault(entry.vm_id, []).append(entry)
    for vm_id, entries in by_vm.items():
        submitted = started = ended = False
        for entry in entries:
            if ended:
                raise IngestError(f"vm {vm_id}: event {entry.event!r} after terminal event")
            if entry.event == "submitted":
                if submitted:
                    raise IngestError(f"vm {vm_id}: duplicate submitted event")
                submitted = True
            elif entry.event == "started":
                if not submitted:
                    raise IngestError(f"vm {vm_id}: started before submitted")
                if started:
                    raise IngestError(f"vm {vm_id}: duplicate started event")
                started = True
            elif entry.event == "migrated":
                if not started:
                    raise IngestError(f"vm {vm_id}: migrated before started")
            elif entry.event in TERMINAL_EVENTS:
                if not submitted:
                    raise IngestError(f"vm {vm_id}: {entry.event} before submitted")
                ended = True


def ingest_measurements(
    metric_file: str, lifecycle_file: str | None
) -> MeasurementStore:
    """Read monitoring CSVs into a store, validating row syntax and per-VM
    lifecycle ordering; errors carry the offending file line or VM. Power
    model training needs no lifecycle, so that file may be omitted."""
    metrics = []
    with open(metric_file, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["timestamp_s", "entity_kind", "entity_id", "metric", "value"]
        if reader.fieldnames != expected:
            raise IngestError(f"{metric_file}: header must be {','.join(expected)}")
        for line, row in enumerate(reader, start=2):
            try:
                metrics.append(
                    MetricSample(
                        time=float(row["timestamp_s"]),
                        entity_kind=row["entity_kind"],
                        entity_id=row["entity_id"],
                        metric=row["metric"],
                        value=float(row["value"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise IngestError(f"{metric_file} line {line}: {exc}") from exc

    lifecycle = []
    if lifecycle_file is None:
        metrics.sort(key=lambda m: m.time)
        return MeasurementStore(metrics=metrics, lifecycle=[])
    with open(lifecycle_file, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = [
            "timestamp_s", "vm_id", "event", "host_id",
            "flavor_vcpus", "flavor_ram_mib", "initiator",
        ]
        if reader.fieldnames != expected:
            raise IngestError(f"{lifecycle_file}: header must be {','.join(expected)}")
        for line, row in enumerate(reader, start=2):
            try:
                event = row["event"]
                if event not in LIFECYCLE_EVENTS:
                    raise ValueError(f"unknown lifecycle event {event!r}")
                initiator = row["initiator"]
                if initiator not in ("tenant", "autoscaler"):
                    raise ValueError(f"unknown initiator {initiator!r}")
                lifecycle.append(
                    LifecycleEntry(
                        time=float(row["timestamp_s"]),
                        vm_id=row["vm_id"],
                        event=event,
                        host_id=row["host_id"] or None,
                        vcpus=int(row["flavor_vcpus"]),
                        ram=float(row["flavor_ram_mib"]),
                        initiator=initiator,
                    )
                )
            except (TypeError, ValueError) as exc:
                raise IngestError(f"{lifecycle_file} line {line}: {exc}") from exc

    metrics.sort(key=lambda m: m.time)
    lifecycle.sort(key=lambda e: e.time)
    _check_lifecycle_order(lifecycle)
    return MeasurementStore(metrics=metrics, lifecycle=lifecycle)


# --- black-box workload reconstruction ----------------------------------------


def _server_catalog(infrastructure) -> Mapping[str, ServerSpec]:
    if isinstance(infrastructure, DataCenterModel):
        return {s.id: s for s in infrastructure.servers}
    return infrastructure


def extract_blackbox_workload(
    store: MeasurementStore,
    vm_id: str,
    resample_interval: float,
    infrastructure,
) -> BlackBoxTrace:
    """Rebuild a VM's CPU demand trace from its utilization measurements.

    Each measured utilization fraction is converted to normalized demand
    using the processing speed of the host the VM occupied at that instant,
    so traces survive migrations between heterogeneous servers. Demands are
    then resampled to piecewise-constant segments of ``resample_interval``
    (mean per interval, previous value held over gaps) and the trailing
    segment is truncated at the VM's terminal event.
    """
    if resample_interval <= 0:
        raise ValueError("resample_interval must be > 0")
    servers = _server_catalog(infrastructure)
    samples = store.entity_samples("vm", vm_id, "vm_cpu_utilization")
    if not samples:
        raise NoBehaviorModel(f"vm {vm_id}: no utilization measurements")
    started = store.started(vm_id)
    if started is None:
        raise NoBehaviorModel(f"vm {vm_id}: no started record to anchor the trace")
    start_time = started.time

    demands = []
    for t, u in samples:
        host = store.host_at(vm_id, t)
        if host is None or host not in servers:
            raise NoBehaviorModel(f"vm {vm_id}: host unknown at t={t}")
        demands.append((t, max(0.0, u) * host_capacity(servers[host])))

    terminal = store.terminal(vm_id)
    end_time = terminal.time if terminal is not None else demands[-1][0] + resample_interval
    if end_time <= start_time:
        raise NoBehaviorModel(f"vm {vm_id}: empty observation window")

    segments: list[tuple[float, float]] = []
    last_demand = 0.0
    k = 0
    while True:
        lo = start_time + k * resample_interval
        if lo >= end_time:
            break
        hi = min(lo + resample_interval, end_time)
        in_window = [d for t, d in demands if lo <= t < hi]
        if in_window:
            last_demand = sum(in_window) / len(in_window)
        segments.append((hi - lo, last_demand))
        k += 1
    return BlackBoxTrace(tuple(segments))


# --- scenario reconstruction ----------------------------------------------------


@dataclass
class ExtractionResult:
    scenario: ExperimentScenario
    extracted_vm_ids: list[str]
    skipped: list[tuple[str, str]]  # (vm id, reason)


def extract_scenario(
    store: MeasurementStore,
    window: tuple[float, float],
    servers: Iterable[str] | None,
    exclude_autoscaler: bool,
    infrastructure,
    resample_interval: float = 30.0,
) -> ExtractionResult:
    """Rebuild a timeline scenario from the store.

    Emits, for every qualifying VM submitted inside the window, an absolute
    start event at ``submit - window start`` whose template carries the
    extracted flavor and black-box workload, plus a relative stop event at
    the observed lifetime when the VM ended inside the window. VMs without
    a reconstructable behavior model are skipped with a warning, mirroring
    how gaps in monitoring surface in practice.
    """
    t0, t1 = window
    if t0 >= t1:
        raise ValueError("window start must precede window end")
    server_filter = set(servers) if servers is not None else None

    submissions = [
        e for e in store.lifecycle
        if e.event == "submitted" and t0 <= e.time <= t1
    ]
    submissions.sort(key=lambda e: (e.time, e.vm_id))

    events: list[TimelineEvent] = []
    templates: dict[str, ApplicationTemplate] = {}
    extracted: list[str] = []
    skipped: list[tuple[str, str]] = []

    for sub in submissions:
        vm_id = sub.vm_id
        if exclude_autoscaler and sub.initiator == "autoscaler":
            continue
        started = store.started(vm_id)
        if started is None:
            skipped.append((vm_id, "never started"))
            log.warning("skipping vm %s: never started", vm_id)
            continue
        if server_filter is not None and started.host_id not in server_filter:
            continue
        try:
            workload = extract_blackbox_workload(
                store, vm_id, resample_interval, infrastructure
            )
        except NoBehaviorModel as exc:
            skipped.append((vm_id, str(exc)))
            log.warning("unable to reconstruct a behavior model: %s", exc)
            continue

        template_id = f"tpl-{vm_id}"
        templates[template_id] = ApplicationTemplate(
            flavor=VmFlavor(sub.vcpus, sub.ram), workload=workload
        )
        start_id = f"start-{vm_id}"
        events.append(
            TimelineEvent(
                id=start_id,
                trigger=AbsoluteTime(sub.time - t0),
                request=StartApplication(template=template_id, vm_id=vm_id),
            )
        )
        terminal = store.terminal(vm_id)
        if terminal is not None and terminal.time <= t1:
            events.append(
                TimelineEvent(
                    id=f"stop-{vm_id}",
                    trigger=RelativeTo(start_id, terminal.time - started.time),
                    request=StopApplication(target=start_id),
                )
            )
        extracted.append(vm_id)

    scenario = ExperimentScenario(events=events, templates=templates)
    return ExtractionResult(scenario=scenario, extracted_vm_ids=extracted, skipped=skipped)


# --- power model training ----------------------------------------------------------


class UnderdeterminedError(ValueError):
    """Too few or degenerate training points for the requested family."""


def clean_power_training_data(
    store: MeasurementStore, server_id: str, bin_width: float = 0.01
) -> list[tuple[float, float]]:
    """Bin-aggregate a server's (utilization, power) measurement pairs.

    Utilization and power samples are paired by nearest timestamp within
    half a sampling interval, utilization is rounded to multiples of
    ``bin_width``, and each non-empty bin contributes one pair with the
    arithmetic mean of its power values. Aggregation suppresses measurement
    noise before regression.
    """
    if not 0 < bin_width <= 1:
        raise ValueError("bin_width must be in (0, 1]")
    utils = store.entity_samples("server", server_id, "cpu_utilization")
    powers = store.entity_samples("server", server_id, "power_w")
    if not utils or not powers:
        return []
    power_times = [t for t, _ in powers]
    if len(utils) >= 2:
        gaps = [b - a for (a, _), (b, _) in zip(utils, utils[1:]) if b > a]
        tolerance = statistics.median(gaps) / 2 if gaps else float("inf")
    else:
        tolerance = float("inf")

    bins: dict[int, list[float]] = {}
    for t, u in utils:
        idx = bisect.bisect_left(power_times, t)
        best = None
        for j in (idx - 1, idx):
            if 0 <= j < len(power_times):
                if best is None or abs(power_times[j] - t) < abs(power_times[best] - t):
                    best = j
        if best is None or abs(power_times[best] - t) > tolerance:
            continue
        bins.setdefault(round(u / bin_width), []).append(powers[best][1])

    out = [
        (index * bin_width, sum(values) / len(values))
        for index, values in bins.items()
    ]
    out.sort()
    return out


@dataclass(frozen=True)
class FitResult:
    model: PowerModel
    rss: float
    rms: float
    samples: int
    converged: bool
    iterations: int


def _fit_polynomial(u: np.ndarray, p: np.ndarray, degree: int) -> np.ndarray:
    n_coeffs = degree + 1
    if len(u) < n_coeffs:
        raise UnderdeterminedError(
            f"need at least {n_coeffs} pairs for degree {degree}, got {len(u)}"
        )
    if np.all(u == u[0]):
        raise UnderdeterminedError("utilization values are all identical")
    design = np.column_stack([u**k for k in range(1, n_coeffs)] + [np.ones_like(u)])
    coeffs, _, rank, _ = np.linalg.lstsq(design, p, rcond=None)
    if rank < n_coeffs:
        raise UnderdeterminedError("design matrix is rank deficient")
    return coeffs


def _exp_residual_jacobian(theta: np.ndarray, u: np.ndarray, p: np.ndarray):
    c0, c1, c2, c3, a, b = theta
    with np.errstate(over="ignore"):
        eb = np.exp(np.clip(b * u, -700.0, 700.0))
    prediction = c0 * u + c1 * u**2 + c2 * u**3 + c3 + a * (eb - 1.0)
    residual = prediction - p
    jac = np.column_stack([u, u**2, u**3, np.ones_like(u), eb - 1.0, a * u * eb])
    return residual, jac


def _linear_fit_given_slope(
    u: np.ndarray, p: np.ndarray, b: float
) -> tuple[np.ndarray, float]:
    """Exact least squares for the five linear coefficients at a fixed b."""
    with np.errstate(over="ignore"):
        column = np.exp(np.clip(b * u, -700.0, 700.0)) - 1.0
    design = np.column_stack([u, u**2, u**3, np.ones_like(u), column])
    coeffs, _, _, _ = np.linalg.lstsq(design, p, rcond=None)
    residual = design @ coeffs - p
    return coeffs, float(residual @ residual)


def _fit_exponential(
    u: np.ndarray, p: np.ndarray, max_iterations: int = 10_000
) -> tuple[np.ndarray, bool, int]:
    """Iterative least squares for the cubic-plus-exponential family.

    The model is linear in everything but the exponential slope, so each
    candidate slope starts from the polynomial fit with the amplitude solved
    exactly by least squares (zero when the data has no exponential
    component). The slope is refined by golden-section search on the
    projected residual, then a damped Gauss-Newton pass polishes all six
    coefficients, shrinking the step whenever the residual norm would grow.
    Terminates once the relative residual improvement drops below 1e-9 or
    the iteration cap is reached.
    """
    iterations = 0

    grid = [b for b in np.linspace(-24.0, 24.0, 97) if abs(b) > 1e-9]
    best_b = grid[0]
    best_rss = np.inf
    for b in grid:
        iterations += 1
        _, rss = _linear_fit_given_slope(u, p, b)
        if rss < best_rss:
            best_rss, best_b = rss, b

    step = grid[1] - grid[0]
    lo, hi = best_b - step, best_b + step
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    x1, x2 = hi - golden * (hi - lo), lo + golden * (hi - lo)
    f1 = _linear_fit_given_slope(u, p, x1)[1]
    f2 = _linear_fit_given_slope(u, p, x2)[1]
    while hi - lo > 1e-12 and iterations < max_iterations // 2:
        iterations += 1
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - golden * (hi - lo)
            f1 = _linear_fit_given_slope(u, p, x1)[1]
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + golden * (hi - lo)
            f2 = _linear_fit_given_slope(u, p, x2)[1]
    b_star = (lo + hi) / 2.0
    linear, rss = _linear_fit_given_slope(u, p, b_star)
    theta = np.array([*linear, b_star], dtype=float)

    # Damped Gauss-Newton polish on all six coefficients.
    lam = 1e-6
    converged = False
    while iterations < max_iterations:
        iterations += 1
        residual, jac = _exp_residual_jacobian(theta, u, p)
        gradient = jac.T @ residual
        hessian = jac.T @ jac
        improvement = 0.0
        stepped = False
        for _ in range(50):
            damping = lam * np.diag(np.maximum(np.diag(hessian), 1e-12))
            try:
                delta = np.linalg.solve(hessian + damping, -gradient)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = theta + delta
            cand_residual, _ = _exp_residual_jacobian(candidate, u, p)
            cand_rss = float(cand_residual @ cand_residual)
            if np.isfinite(cand_rss) and cand_rss <= rss:
                improvement = rss - cand_rss
                theta, rss = candidate, cand_rss
                lam = max(lam * 0.3, 1e-14)
                stepped = True
                break
            lam *= 10.0
            if lam > 1e14:
                break
        if not stepped or rss <= 1e-22 or improvement <= 1e-9 * max(rss, 1e-300):
            converged = True
            break
    return theta, converged, iterations


def fit_power_model(
    pairs: Sequence[tuple[float, float]], family: str, degree: int = 3
) -> FitResult:
    """Train a power model of the given family on (utilization, watts) pairs.

    The polynomial family has a unique linear least-squares solution; the
    exponential family is fitted iteratively and flags non-convergence in
    the result rather than raising.
    """
    u = np.asarray([x for x, _ in pairs], dtype=float)
    p = np.asarray([y for _, y in pairs], dtype=float)
    if family == POLYNOMIAL:
        coeffs = _fit_polynomial(u, p, degree)
        model = PowerModel(POLYNOMIAL, tuple(float(c) for c in coeffs))
        converged = True
        iterations = 0
    elif family == POLYNOMIAL_PLUS_EXPONENTIAL:
        if len(u) < 6:
            raise UnderdeterminedError(f"need at least 6 pairs, got {len(u)}")
        if np.all(u == u[0]):
            raise UnderdeterminedError("utilization values are all identical")
        theta, converged, iterations = _fit_exponential(u, p)
        model = PowerModel(
            POLYNOMIAL_PLUS_EXPONENTIAL, tuple(float(c) for c in theta)
        )
        if not converged:
            log.warning("power model fit did not converge; returning best iterate")
    else:
        raise ValueError(f"unknown power model family {family!r}")
    residuals = np.array([eval_power(model, x) - y for (x, y) in pairs])
    rss = float(residuals @ residuals)
    rms = float(np.sqrt(rss / len(pairs))) if len(pairs) else 0.0
    return FitResult(
        model=model, rss=rss, rms=rms, samples=len(pairs),
        converged=converged, iterations=iterations,
    )
