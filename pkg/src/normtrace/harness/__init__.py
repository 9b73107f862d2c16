from .config import (
    BASELINE_FULL,
    BASELINE_LEARNER_ONLY,
    BASELINE_STATIC_GUARD,
    DetectionConfig,
    ExperimentConfig,
    InterventionConfig,
    ScenarioConfig,
    config_hash,
)
from .episode import MetricsRecord, build_policies, run_episode
from .grid import DEFAULT_GRID_SPEC, build_runs, run_grid
from .summary import load_records, summarize, write_summary
from .verify import SUITES, CheckResult, run_suites

__all__ = [
    "BASELINE_FULL",
    "BASELINE_LEARNER_ONLY",
    "BASELINE_STATIC_GUARD",
    "DetectionConfig",
    "ExperimentConfig",
    "InterventionConfig",
    "ScenarioConfig",
    "config_hash",
    "MetricsRecord",
    "build_policies",
    "run_episode",
    "DEFAULT_GRID_SPEC",
    "build_runs",
    "run_grid",
    "load_records",
    "summarize",
    "write_summary",
    "SUITES",
    "CheckResult",
    "run_suites",
]
