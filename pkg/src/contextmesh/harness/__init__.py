"""Simulation harness: scenarios, workloads, the event loop and metrics."""

from contextmesh.harness.config import (
    AvailabilitySpec, BrokerSpec, ClientSpec, ConfigError, DelaySpec, Host, Mode, ScenarioConfig,
    ScopeSpec, WorkloadSpec, check_config, config_from_dict, config_to_dict, default_config,
    default_scenario_path, load_config, validate_config,
)
from contextmesh.harness.metrics import (
    CSV_COLUMNS, Comparison, Metrics, MismatchedWorkload, compare_runs, csv_text, write_csv,
)
from contextmesh.harness.sim import RunResult, Simulator, run
from contextmesh.harness.workload import (
    Query, Rng, build_workload, generate_arrivals, sample_provider_delay,
)
from contextmesh.harness.world import World, build_scenario

__all__ = [
    "AvailabilitySpec", "BrokerSpec", "ClientSpec", "Comparison", "ConfigError", "CSV_COLUMNS",
    "DelaySpec", "Host", "Metrics", "MismatchedWorkload", "Mode", "Query", "Rng", "RunResult",
    "ScenarioConfig", "ScopeSpec", "Simulator", "World", "WorkloadSpec", "build_scenario",
    "build_workload", "check_config", "compare_runs", "config_from_dict", "config_to_dict",
    "csv_text", "default_config", "default_scenario_path", "generate_arrivals", "load_config",
    "run", "sample_provider_delay", "validate_config", "write_csv",
]
