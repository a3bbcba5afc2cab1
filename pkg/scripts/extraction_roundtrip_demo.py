#!/usr/bin/env python3
"""Model-reconstruction fidelity check on a synthetic cluster run.

Simulates a 20-VM batch workload on 8 servers, exports the monitoring
trace the way a real deployment would record it, rebuilds the timeline
scenario and black-box workloads from that trace alone, re-simulates, and
reports how closely the reconstructed run tracks the original: placement
decisions, per-VM lifetimes, and total energy.
"""

import argparse
import os
import sys

try:
    import dcsim  # noqa: F401
except ImportError:
    sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dcsim.algorithms import AlgorithmConfig
from dcsim.cli import relative_error
from dcsim.engine import SimConfig, run
from dcsim.extraction import MeasurementStore, extract_scenario
from dcsim.model import (
    POLYNOMIAL,
    BlackBoxTrace,
    DataCenterModel,
    PowerModel,
    ServerSpec,
    VmFlavor,
)
from dcsim.report import write_report
from dcsim.scenario import (
    AbsoluteTime,
    ApplicationTemplate,
    ExperimentScenario,
    StartApplication,
    TimelineEvent,
)


def build_inputs(n_vms):
    pm = PowerModel(POLYNOMIAL, (50.0, 10.0, 5.0, 80.0))
    model = DataCenterModel(
        tuple(ServerSpec(f"s{i}", 4, 2.5, 16384.0, "pm") for i in range(1, 9)),
        {"pm": pm},
    )
    rams = [2048.0, 4096.0, 3072.0, 6144.0]
    events, templates = [], {}
    for k in range(n_vms):
        segments = (
            (300.0 + 60.0 * (k % 5), 0.5 + 0.2 * (k % 4)),
            (240.0, 1.0 + 0.7 * (k % 3)),
            (180.0 + 60.0 * (k % 3), 0.4 + 0.5 * (k % 4)),
        )
        templates[f"t{k}"] = ApplicationTemplate(
            VmFlavor(1 + k % 2, rams[k % 4]), BlackBoxTrace(segments)
        )
        events.append(
            TimelineEvent(f"e{k}", AbsoluteTime(120.0 * k),
                          StartApplication(f"t{k}", f"vm{k:02d}"))
        )
    return model, ExperimentScenario(events=events, templates=templates)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--vms", type=int, default=20)
    parser.add_argument("--end", type=float, default=4200.0)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--out", default="results/roundtrip")
    args = parser.parse_args()

    model, scenario = build_inputs(args.vms)
    algorithms = AlgorithmConfig(placement="best-fit-ram")
    config = SimConfig(end_time=args.end, measurement_interval=30.0, seed=args.seed)

    original = run(model, scenario, algorithms, config)
    write_report(original, os.path.join(args.out, "original"))

    store = MeasurementStore(metrics=original.metrics, lifecycle=original.lifecycle)
    result = extract_scenario(store, (0.0, args.end), None, True, model)
    print(f"reconstructed {len(result.extracted_vm_ids)} VMs "
          f"({len(result.skipped)} skipped)")

    replay = run(model, result.scenario, algorithms, config)
    write_report(replay, os.path.join(args.out, "replay"))

    matching = sum(
        1 for a, b in zip(original.placements(), replay.placements()) if a == b
    )
    print(f"placement decisions matching: {matching}/{len(original.placements())}")

    worst = 0.0
    for vm_id in result.extracted_vm_ids:
        rec_a = original.vm_records[vm_id]
        rec_b = replay.vm_records[vm_id]
        end_a = rec_a.end_time if rec_a.end_time is not None else args.end
        end_b = rec_b.end_time if rec_b.end_time is not None else args.end
        worst = max(worst, abs((end_a - rec_a.start_time) - (end_b - rec_b.start_time)))
    print(f"worst per-VM lifetime deviation: {worst:.1f} s")

    error = relative_error(original.total_energy_wh, replay.total_energy_wh)
    print(f"total energy: original {original.total_energy_wh:.1f} Wh, "
          f"replay {replay.total_energy_wh:.1f} Wh, error {100 * error:.2f}%")
    print(f"reports written to {args.out}/")


if __name__ == "__main__":
    main()
