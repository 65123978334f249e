"""Scenario runner and cache-sweep experiments."""

from .experiments import ExperimentConfig, experiment_providers, experiment_tasks, rows_to_csv, traces_to_csv
from .scenario import (
    Scenario,
    ScenarioResult,
    parse_scenario,
    resolve_scenario_path,
    run_scenario,
    shipped_scenarios,
)

__all__ = [
    "ExperimentConfig",
    "Scenario",
    "ScenarioResult",
    "experiment_providers",
    "experiment_tasks",
    "parse_scenario",
    "resolve_scenario_path",
    "rows_to_csv",
    "run_scenario",
    "shipped_scenarios",
    "traces_to_csv",
]
