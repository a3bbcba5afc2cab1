"""CSV/JSON export of simulation reports.

The monitoring-trace files (metrics.csv, lifecycle.csv) use the same schema
the extraction pipeline ingests, so a simulation run can be fed straight
back into model reconstruction.
"""

from __future__ import annotations

import csv
import json
import os

from .engine import SimulationReport

UTILIZATION_CSV = "utilization.csv"
POWER_CSV = "power.csv"
SUMMARY_CSV = "summary.csv"
ACTIONS_CSV = "actions.csv"
METRICS_CSV = "metrics.csv"
LIFECYCLE_CSV = "lifecycle.csv"
AUTOSCALER_CSV = "autoscaler.csv"
REPORT_JSON = "report.json"


def write_report(report: SimulationReport, out_dir: str) -> list[str]:
    """Write every report artifact into ``out_dir``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def path(name: str) -> str:
        p = os.path.join(out_dir, name)
        written.append(p)
        return p

    with open(path(UTILIZATION_CSV), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "server_id", "utilization"])
        for server_id, points in report.utilization.items():
            for t, value in points:
                writer.writerow([t, server_id, value])

    with open(path(POWER_CSV), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "server_id", "power_w"])
        for server_id, points in report.power.items():
            for t, value in points:
                writer.writerow([t, server_id, value])

    with open(path(SUMMARY_CSV), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["server_id", "energy_wh"])
        for server_id, energy in report.energy_wh.items():
            writer.writerow([server_id, energy])
        writer.writerow(["TOTAL", report.total_energy_wh])

    with open(path(ACTIONS_CSV), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "action", "subject", "outcome"])
        for entry in report.actions:
            writer.writerow([entry.time, entry.action, entry.subject, entry.outcome])

    with open(path(METRICS_CSV), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_s", "entity_kind", "entity_id", "metric", "value"])
        for m in report.metrics:
            writer.writerow([m.time, m.entity_kind, m.entity_id, m.metric, m.value])

    with open(path(LIFECYCLE_CSV), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "timestamp_s", "vm_id", "event", "host_id",
            "flavor_vcpus", "flavor_ram_mib", "initiator",
        ])
        for entry in report.lifecycle:
            writer.writerow([
                entry.time, entry.vm_id, entry.event, entry.host_id or "",
                entry.vcpus, entry.ram, entry.initiator,
            ])

    if report.autoscaler_series:
        with open(path(AUTOSCALER_CSV), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_s", "application_id", "instances", "rate"])
            for t, app_id, instances, rate in report.autoscaler_series:
                writer.writerow([t, app_id, instances, rate])

    with open(path(REPORT_JSON), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    return written
