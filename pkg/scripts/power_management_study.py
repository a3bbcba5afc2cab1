#!/usr/bin/env python3
"""Quantify the effect of turning off free servers under consolidation.

Runs the same staggered batch-VM scenario twice (consolidation alone, then
consolidation plus the free-server power manager) and reports the energy
saved, the power actions taken, and whether any placement was rejected.
"""

import argparse
import os
import sys

try:
    import dcsim  # noqa: F401
except ImportError:
    sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dcsim.algorithms import AlgorithmConfig
from dcsim.engine import SimConfig, run
from dcsim.model import (
    POLYNOMIAL,
    BlackBoxTrace,
    DataCenterModel,
    PowerModel,
    ServerSpec,
    VmFlavor,
)
from dcsim.scenario import (
    AbsoluteTime,
    ApplicationTemplate,
    ExperimentScenario,
    StartApplication,
    TimelineEvent,
)


def build_inputs(n_servers, n_vms, spacing):
    pm = PowerModel(POLYNOMIAL, (50.0, 80.0))
    model = DataCenterModel(
        tuple(
            ServerSpec(f"s{i}", 4, 2.5, 16384.0, "pm", idle_off_power=5.0)
            for i in range(1, n_servers + 1)
        ),
        {"pm": pm},
    )
    events, templates = [], {}
    for k in range(n_vms):
        templates[f"job{k}"] = ApplicationTemplate(
            VmFlavor(1, 4096.0),
            BlackBoxTrace(((2400.0 + 300.0 * (k % 4), 1.5),)),
        )
        events.append(
            TimelineEvent(f"submit{k}", AbsoluteTime(spacing * k),
                          StartApplication(f"job{k}", f"vm{k}"))
        )
    return model, ExperimentScenario(events=events, templates=templates)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--servers", type=int, default=4)
    parser.add_argument("--vms", type=int, default=6)
    parser.add_argument("--spacing", type=float, default=300.0)
    parser.add_argument("--end", type=float, default=7200.0)
    parser.add_argument("--spare", type=int, default=1)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    model, scenario = build_inputs(args.servers, args.vms, args.spacing)
    config = SimConfig(end_time=args.end, optimizer_interval=300.0, seed=args.seed)

    plain = run(model, scenario, AlgorithmConfig(optimizer="consolidation"), config)
    managed = run(
        model, scenario,
        AlgorithmConfig(optimizer="consolidation", power_manager_enabled=True,
                        spare_servers=args.spare),
        config,
    )

    print(f"{'configuration':<28} {'energy Wh':>10} {'rejected':>9}")
    print(f"{'consolidation':<28} {plain.total_energy_wh:>10.1f} "
          f"{plain.rejected_placements():>9d}")
    print(f"{'consolidation + power mgmt':<28} {managed.total_energy_wh:>10.1f} "
          f"{managed.rejected_placements():>9d}")
    saved = plain.total_energy_wh - managed.total_energy_wh
    print(f"\nsaved {saved:.1f} Wh "
          f"({100.0 * saved / plain.total_energy_wh:.1f}% of the baseline)")
    print("\npower actions:")
    for entry in managed.actions:
        if entry.action in ("power-on", "power-off"):
            print(f"  t={entry.time:>7.1f}  {entry.action:<10} {entry.subject} "
                  f"({entry.outcome})")


if __name__ == "__main__":
    main()
