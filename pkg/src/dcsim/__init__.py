"""Trace-driven IaaS data center simulator.

Runs resource-management algorithms (placement, migration optimization,
power management, autoscaling) against a discrete-event data center model
and reconstructs its own inputs (scenarios, black-box VM workloads, and
server power models) from monitoring traces.
"""

from .algorithms import AlgorithmConfig
from .engine import SimConfig, SimulationReport, run
from .model import DataCenterModel, load_model, parse_model, validate
from .scenario import ExperimentScenario, load_scenario, parse_scenario

__version__ = "0.1.0"

__all__ = [
    "AlgorithmConfig",
    "DataCenterModel",
    "ExperimentScenario",
    "SimConfig",
    "SimulationReport",
    "load_model",
    "load_scenario",
    "parse_model",
    "parse_scenario",
    "run",
    "validate",
    "__version__",
]
