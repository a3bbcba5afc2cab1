"""Command-line front end.

Subcommands: simulate, extract, fit-power, compare, gen-workload,
report-error. Exit codes are stable for scripting: 0 success, 2 input or
validation error, 1 internal error. All randomness flows from --seed; no
run reads the clock or the environment for entropy. Set DCSIM_LOG to a
logging level name for diagnostics.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass

from . import engine as engine_mod
from . import report as report_mod
from .algorithms import (
    AUTOSCALER_ALGORITHMS,
    OPTIMIZER_ALGORITHMS,
    PLACEMENT_ALGORITHMS,
    AlgorithmConfig,
    gen_seasonal_workload,
)
from .extraction import (
    IngestError,
    MeasurementStore,
    UnderdeterminedError,
    clean_power_training_data,
    extract_scenario,
    fit_power_model,
    ingest_measurements,
)
from .model import (
    POLYNOMIAL,
    POLYNOMIAL_PLUS_EXPONENTIAL,
    ModelFormatError,
    load_model,
    power_model_to_dict,
    workload_to_dict,
)
from .scenario import ScenarioError, load_scenario, scenario_to_dict

log = logging.getLogger("dcsim.cli")


def relative_error(measured: float, predicted: float) -> float:
    """|measured - predicted| / measured, the energy prediction error."""
    if measured == 0:
        raise ValueError("measured energy must be nonzero")
    return abs((measured - predicted) / measured)


def _parse_noise(text: str) -> tuple[float, float]:
    low_text, sep, high_text = text.partition(":")
    if not sep:
        raise ValueError(f"noise must look like LOW:HIGH, got {text!r}")
    low, high = float(low_text), float(high_text)
    if low > high:
        raise ValueError("noise low bound exceeds high bound")
    return low, high


def _parse_family(text: str) -> tuple[str, int]:
    if text == "poly-exp":
        return POLYNOMIAL_PLUS_EXPONENTIAL, 3
    if text.startswith("poly") and text[4:].isdigit():
        degree = int(text[4:])
        if degree >= 1:
            return POLYNOMIAL, degree
    raise ValueError(f"unknown power model family {text!r} (use polyN or poly-exp)")


def _algorithm_config(args) -> AlgorithmConfig:
    overrides = {}
    if getattr(args, "algo_config", None):
        with open(args.algo_config, "r", encoding="utf-8") as fh:
            overrides = json.load(fh)
    base = {
        "placement": args.placement,
        "optimizer": None if args.optimizer == "none" else args.optimizer,
        "autoscaler": None if args.autoscaler == "none" else args.autoscaler,
        "power_manager_enabled": args.power_manager,
        "spare_servers": args.spare_servers,
        "imbalance_threshold": args.imbalance_threshold,
    }
    base.update(overrides)
    return AlgorithmConfig.from_dict(base)


def _sim_config(args) -> engine_mod.SimConfig:
    return engine_mod.SimConfig(
        end_time=args.end,
        measurement_interval=args.measurement_interval,
        optimizer_interval=args.optimizer_interval,
        autoscaler_interval=args.autoscaler_interval,
        boot_latency=args.boot_latency,
        placement_decision_latency=args.placement_latency,
        migration_bandwidth=args.migration_bandwidth,
        power_transition_latency=args.power_transition_latency,
        seed=args.seed,
    )


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    scenario = load_scenario(args.scenario, known_vm_ids=[vm.id for vm in model.initial_vms])
    algorithms = _algorithm_config(args)
    config = _sim_config(args)
    report = engine_mod.run(model, scenario, algorithms, config)
    report_mod.write_report(report, args.out)
    print(
        f"simulated {config.end_time:.0f} s: total energy "
        f"{report.total_energy_wh:.2f} Wh, {len(report.vm_records)} VMs, "
        f"{report.rejected_placements()} rejected placements -> {args.out}"
    )
    return 0


def _window_store(store: MeasurementStore, t0: float, t1: float) -> MeasurementStore:
    return MeasurementStore(
        metrics=[m for m in store.metrics if t0 <= m.time <= t1],
        lifecycle=store.lifecycle,
    )


def cmd_extract(args) -> int:
    if args.frm >= args.to:
        raise ValueError("--from must precede --to")
    model = load_model(args.model)
    store = ingest_measurements(args.metrics, args.events)
    servers = args.servers.split(",") if args.servers else None
    result = extract_scenario(
        store,
        window=(args.frm, args.to),
        servers=servers,
        exclude_autoscaler=args.exclude_autoscaler,
        infrastructure=model,
        resample_interval=args.resample,
    )
    if not result.extracted_vm_ids:
        log.warning("no VM submissions found in the window")

    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    stem = os.path.splitext(os.path.basename(args.out))[0]
    workload_dir_name = f"{stem}_workloads"
    workload_dir = os.path.join(out_dir, workload_dir_name)
    os.makedirs(workload_dir, exist_ok=True)

    doc = scenario_to_dict(result.scenario)
    for template_id, template in result.scenario.templates.items():
        filename = f"{template_id}.json"
        with open(os.path.join(workload_dir, filename), "w", encoding="utf-8") as fh:
            json.dump(workload_to_dict(template.workload), fh, indent=2, sort_keys=True)
            fh.write("\n")
        doc["templates"][template_id]["workload"] = {
            "file": f"{workload_dir_name}/{filename}"
        }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(f"extracted {len(result.extracted_vm_ids)} VMs, skipped {len(result.skipped)}")
    for vm_id, reason in result.skipped:
        print(f"skipped {vm_id}: {reason}")
    return 0


def cmd_fit_power(args) -> int:
    family, degree = _parse_family(args.family)
    store = ingest_measurements(args.metrics, args.events)
    store = _window_store(store, args.frm, args.to)
    pairs = clean_power_training_data(store, args.server, args.bin_width)
    fit = fit_power_model(pairs, family, degree)
    doc = power_model_to_dict(fit.model)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"fitted {args.family} on {fit.samples} cleaned pairs: "
        f"residual_rms={fit.rms:.6g} W"
        + ("" if fit.converged else " (did not converge)")
    )
    return 0


@dataclass(frozen=True)
class RunSummary:
    """One configuration's outcome within a comparison."""

    label: str
    total_energy_wh: float
    rejected_placements: int
    scaling_actions: int
    mean_instances: float | None


@dataclass(frozen=True)
class EnergyDelta:
    a: str
    b: str
    delta_wh: float
    delta_percent: float | None


@dataclass(frozen=True)
class CompareResult:
    """Several configurations run on the same model, scenario, and seed."""

    runs: tuple[RunSummary, ...]
    pairwise: tuple[EnergyDelta, ...]
    lowest_energy: str

    def to_dict(self) -> dict:
        return {
            "runs": [asdict(r) for r in self.runs],
            "pairwise": [asdict(d) for d in self.pairwise],
            "lowest_energy": self.lowest_energy,
        }


def cmd_compare(args) -> int:
    if len(args.config) < 2:
        raise ValueError("compare needs at least two --config files")
    runs = []
    shared: tuple[str, str] | None = None
    for path in args.config:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
        base = os.path.dirname(os.path.abspath(path))

        def resolve(p: str) -> str:
            return p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))

        model_path = resolve(cfg["model"])
        scenario_path = resolve(cfg["scenario"])
        if shared is None:
            shared = (model_path, scenario_path)
        elif shared != (model_path, scenario_path):
            raise ValueError("compare configurations disagree on model/scenario paths")
        sim_kwargs = dict(cfg.get("sim", {}))
        sim_kwargs["seed"] = args.seed
        runs.append(
            {
                "label": cfg.get("label", os.path.basename(path)),
                "model_path": model_path,
                "scenario_path": scenario_path,
                "algorithms": AlgorithmConfig.from_dict(cfg.get("algorithms", {})),
                "config": engine_mod.SimConfig(**sim_kwargs),
            }
        )

    rows = []
    for run_spec in runs:
        model = load_model(run_spec["model_path"])
        scenario = load_scenario(
            run_spec["scenario_path"], known_vm_ids=[vm.id for vm in model.initial_vms]
        )
        report = engine_mod.run(model, scenario, run_spec["algorithms"], run_spec["config"])
        apps = sorted(report.app_instance_counts)
        mean_instances = (
            sum(report.mean_instances(a) for a in apps) / len(apps) if apps else None
        )
        rows.append(
            RunSummary(
                label=run_spec["label"],
                total_energy_wh=report.total_energy_wh,
                rejected_placements=report.rejected_placements(),
                scaling_actions=report.scaling_action_count(),
                mean_instances=mean_instances,
            )
        )

    lowest = min(range(len(rows)), key=lambda i: (rows[i].total_energy_wh, i))
    pairwise = []
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            delta = rows[j].total_energy_wh - rows[i].total_energy_wh
            base_energy = rows[i].total_energy_wh
            pairwise.append(
                EnergyDelta(
                    a=rows[i].label,
                    b=rows[j].label,
                    delta_wh=delta,
                    delta_percent=100.0 * delta / base_energy if base_energy else None,
                )
            )
    result = CompareResult(
        runs=tuple(rows), pairwise=tuple(pairwise),
        lowest_energy=rows[lowest].label,
    )

    header = f"{'label':<24} {'energy_wh':>12} {'rejected':>9} {'actions':>8} {'mean_inst':>10}"
    print(header)
    for i, row in enumerate(rows):
        mean = f"{row.mean_instances:.2f}" if row.mean_instances is not None else "-"
        marker = " *" if i == lowest else ""
        print(
            f"{row.label:<24} {row.total_energy_wh:>12.2f} "
            f"{row.rejected_placements:>9d} {row.scaling_actions:>8d} "
            f"{mean:>10}{marker}"
        )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_gen_workload(args) -> int:
    noise_low, noise_high = _parse_noise(args.noise)
    series = gen_seasonal_workload(
        peak=args.peak,
        periods=args.periods,
        duration=args.duration,
        noise_low=noise_low,
        noise_high=noise_high,
        seed=args.seed,
        step=args.step,
    )
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "rate"])
        for t, rate in series:
            writer.writerow([t, rate])
    print(f"wrote {len(series)} samples to {args.out}")
    return 0


def cmd_report_error(args) -> int:
    error = relative_error(args.measured, args.predicted)
    print(f"{100.0 * error:.2f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcsim",
        description="Trace-driven IaaS data center simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario against a data center model")
    sim.add_argument("--model", required=True)
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--out", required=True, help="output directory for report files")
    sim.add_argument("--end", type=float, required=True, help="simulation horizon in seconds")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--placement", choices=PLACEMENT_ALGORITHMS, default="best-fit-ram")
    sim.add_argument("--optimizer", choices=OPTIMIZER_ALGORITHMS, default="none")
    sim.add_argument("--autoscaler", choices=AUTOSCALER_ALGORITHMS, default="none")
    sim.add_argument("--power-manager", action="store_true")
    sim.add_argument("--spare-servers", type=int, default=0)
    sim.add_argument("--imbalance-threshold", type=float, default=1024.0)
    sim.add_argument("--measurement-interval", type=float, default=30.0)
    sim.add_argument("--optimizer-interval", type=float, default=300.0)
    sim.add_argument("--autoscaler-interval", type=float, default=60.0)
    sim.add_argument("--boot-latency", type=float, default=0.0)
    sim.add_argument("--placement-latency", type=float, default=0.0)
    sim.add_argument("--migration-bandwidth", type=float, default=1024.0)
    sim.add_argument("--power-transition-latency", type=float, default=0.0)
    sim.add_argument("--algo-config", help="JSON file overriding the algorithm config")
    sim.set_defaults(func=cmd_simulate)

    ext = sub.add_parser("extract", help="reconstruct a scenario from monitoring traces")
    ext.add_argument("--metrics", required=True)
    ext.add_argument("--events", required=True, help="lifecycle CSV")
    ext.add_argument("--model", required=True, help="data center model for host speeds")
    ext.add_argument("--from", dest="frm", type=float, required=True)
    ext.add_argument("--to", dest="to", type=float, required=True)
    ext.add_argument("--servers", help="comma-separated server ids (default: all)")
    ext.add_argument("--exclude-autoscaler", action="store_true")
    ext.add_argument("--resample", type=float, default=30.0)
    ext.add_argument("--out", required=True, help="scenario JSON path")
    ext.set_defaults(func=cmd_extract)

    fit = sub.add_parser("fit-power", help="train a server power model")
    fit.add_argument("--metrics", required=True)
    fit.add_argument("--events", help="lifecycle CSV (optional)")
    fit.add_argument("--server", required=True)
    fit.add_argument("--from", dest="frm", type=float, required=True)
    fit.add_argument("--to", dest="to", type=float, required=True)
    fit.add_argument("--family", default="poly3", help="polyN or poly-exp")
    fit.add_argument("--bin-width", type=float, default=0.01)
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=cmd_fit_power)

    cmp_parser = sub.add_parser("compare", help="run several configurations and compare")
    cmp_parser.add_argument("--config", action="append", required=True,
                            help="configuration JSON (repeat)")
    cmp_parser.add_argument("--seed", type=int, default=0)
    cmp_parser.add_argument("--out", help="write the comparison as JSON")
    cmp_parser.set_defaults(func=cmd_compare)

    gen = sub.add_parser("gen-workload", help="generate a synthetic seasonal workload")
    gen.add_argument("--peak", type=float, required=True)
    gen.add_argument("--periods", type=int, required=True)
    gen.add_argument("--duration", type=float, required=True)
    gen.add_argument("--noise", default="0:0", help="LOW:HIGH uniform noise bounds")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--step", type=float, default=5.0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen_workload)

    err = sub.add_parser("report-error", help="relative energy prediction error")
    err.add_argument("--measured", type=float, required=True)
    err.add_argument("--predicted", type=float, required=True)
    err.set_defaults(func=cmd_report_error)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("DCSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    argv = list(sys.argv[1:] if argv is None else argv)
    # argparse would read a leading-minus value like "-3:2" as a flag
    for i, token in enumerate(argv[:-1]):
        if token == "--noise" and argv[i + 1].startswith("-"):
            argv[i] = f"--noise={argv[i + 1]}"
            del argv[i + 1]
            break
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ModelFormatError,
        ScenarioError,
        IngestError,
        UnderdeterminedError,
        FileNotFoundError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
