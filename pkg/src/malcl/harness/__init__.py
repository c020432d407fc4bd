from malcl.harness.config import (
    ConfigDocument,
    DatasetSpec,
    ExperimentConfig,
    ModelSpec,
    ScenarioSpec,
    StrategySpec,
    TrainingSpec,
    from_dict,
    load_document,
)
from malcl.harness.metrics import (
    AggregateResult,
    MetricSummary,
    aggregate_seeds,
    closer_to_joint,
    compute_metrics,
)
from malcl.harness.persistence import load_run, load_runs, persist_run, read_index
from malcl.harness.report import build_report, curve_data, plot_curves, render_text, render_tsv
from malcl.harness.runner import RunResult, evaluate_after_task, run_experiment
from malcl.harness.sweep import run_sweep

__all__ = [
    "ConfigDocument", "DatasetSpec", "ExperimentConfig", "ModelSpec", "ScenarioSpec", "StrategySpec",
    "TrainingSpec", "from_dict", "load_document", "AggregateResult", "MetricSummary", "aggregate_seeds",
    "closer_to_joint", "compute_metrics", "load_run", "load_runs", "persist_run", "read_index",
    "build_report", "curve_data", "plot_curves", "render_text", "render_tsv", "RunResult",
    "evaluate_after_task", "run_experiment", "run_sweep",
]
