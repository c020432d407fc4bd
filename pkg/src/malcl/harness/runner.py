"""Sequential training over a task stream with evaluation after every task."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from malcl.data.datasets import BOOLEAN, LabeledDataset, infer_feature_kind, load_tabular
from malcl.data.preprocessing import VarianceFilter
from malcl.data.scenarios import TASK_IL, TaskStream, build_stream
from malcl.data.synthetic import generate_synthetic_stream
from malcl.errors import NonFiniteLossError
from malcl.estimator import ContinualClassifier
from malcl.harness.config import DatasetSpec, ExperimentConfig, resolve_training
from malcl.harness.metrics import compute_metrics

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OK, FAILED = "ok", "failed"


@dataclass
class RunResult:
    run_id: str
    config_hash: str
    seed: int
    strategy: str
    label: str
    family: str
    dataset: str
    scenario: str
    accuracy_matrix: list[list[float]]      # row i: accuracy on each task's test split after task i
    per_increment_accuracy: list[float]
    mean: float | None
    min: float | None
    wall_time_per_task: list[float]
    sample_ledger: list[dict]
    config: dict
    hyperparameters: dict = field(default_factory=dict)
    stream: dict = field(default_factory=dict)
    status: str = OK
    error: str | None = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunResult":
        names = {f.name for f in dataclasses.fields(cls)}
        missing = names - set(data) - {"hyperparameters", "stream", "status", "error", "schema_version"}
        if missing:
            raise KeyError(f"missing fields {sorted(missing)}")
        unknown = set(data) - names
        if unknown:
            raise KeyError(f"unknown fields {sorted(unknown)}")
        return cls(**data)


def load_dataset(spec: DatasetSpec) -> LabeledDataset:
    if spec.source == "synthetic":
        return generate_synthetic_stream(dataclasses.replace(spec.synthetic))
    return load_tabular(spec.path, spec.format, class_map=spec.class_map, feature_kind=spec.feature_kind)


def preprocess(ds: LabeledDataset, stream: TaskStream, threshold: float | None) -> LabeledDataset:
    """Drop low-variance boolean features, measured on the union of training splits."""
    if ds.feature_kind != BOOLEAN or threshold is None:
        return ds
    train = np.concatenate([t.train_indices for t in stream])
    vf = VarianceFilter(threshold).fit(ds.features[train])
    log.info("variance filter keeps %d of %d features", vf.n_kept, ds.n_features)
    return ds.with_features(vf.transform(ds.features))


def make_learner(cfg: ExperimentConfig, seed: int, feature_kind: str) -> ContinualClassifier:
    training = resolve_training(cfg.training, feature_kind)
    opt = cfg.optimizer
    return ContinualClassifier(
        strategy=cfg.strategy.name, strategy_params=dict(cfg.strategy.params), scenario=cfg.scenario.kind,
        hidden_widths=tuple(cfg.model.hidden_widths), dropout_rate=cfg.model.dropout_rate,
        use_batch_norm=cfg.model.use_batch_norm, activation=cfg.model.activation,
        optimizer=opt.kind, learning_rate=opt.learning_rate, momentum=opt.momentum,
        weight_decay=opt.weight_decay, batch_size=training.batch_size, epochs=training.epochs,
        early_stopping=training.early_stopping, patience=training.patience,
        validation_fraction=training.validation_fraction, feature_kind=feature_kind, random_state=seed,
    )


def _accuracy(pred: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(pred == y)) if len(y) else float("nan")


def evaluate_after_task(learner: ContinualClassifier, stream: TaskStream, i: int) -> tuple[list[float], float]:
    """Row ``i`` of the accuracy matrix and the curve value ``a_i``.

    Task-IL scores each task j <= i under its own mask and averages them.
    Class-IL and Domain-IL score the union of the seen test splits with
    every seen unit active; the row holds the per-task breakdown.
    """
    ds = stream.dataset
    row, correct, total = [], 0, 0
    for task in stream.tasks[: i + 1]:
        idx = task.test_indices
        mask = task.active_classes if stream.scenario == TASK_IL else None
        pred = learner.predict(ds.features[idx], active_classes=mask) if len(idx) else np.zeros(0)
        row.append(_accuracy(pred, ds.labels[idx]))
        correct += int(np.sum(pred == ds.labels[idx]))
        total += len(idx)
    if stream.scenario == TASK_IL:
        valid = [a for a in row if not np.isnan(a)]
        a_i = float(np.mean(valid)) if valid else float("nan")
    else:
        a_i = correct / total if total else float("nan")
    return row, a_i


def run_experiment(cfg: ExperimentConfig, seed: int) -> RunResult:
    """Train one seed of one config through the whole stream."""
    cfg.validate()
    ds = load_dataset(cfg.dataset)
    if cfg.dataset.feature_kind:
        ds = dataclasses.replace(ds, feature_kind=cfg.dataset.feature_kind)
    stream = build_stream(ds, cfg.scenario.kind, **cfg.scenario.builder_kwargs(seed))
    ds = preprocess(ds, stream, cfg.dataset.variance_threshold)
    stream = dataclasses.replace(stream, dataset=ds)
    feature_kind = ds.feature_kind or infer_feature_kind(ds.features)

    learner = make_learner(cfg, seed, feature_kind)
    classes = np.arange(stream.total_classes)
    matrix, curve, status, error = [], [], OK, None
    for i, task in enumerate(stream):
        idx = task.train_indices
        try:
            learner.partial_fit(ds.features[idx], ds.labels[idx], classes=classes,
                                active_classes=list(task.active_classes))
        except NonFiniteLossError as exc:
            status, error = FAILED, f"task {i}: {exc}"
            log.error("run aborted: %s", error)
            break
        row, a_i = evaluate_after_task(learner, stream, i)
        matrix.append(row)
        curve.append(a_i)

    mean, minimum = compute_metrics(curve) if curve else (None, None)
    ledger = [{k: v for k, v in rec.items() if k != "wall_time"} for rec in learner.ledger_]
    resolved = cfg.to_dict()
    resolved["training"] = dataclasses.asdict(resolve_training(cfg.training, feature_kind))
    strategy = learner.strategy_
    return RunResult(
        run_id=cfg.run_id(seed), config_hash=cfg.config_hash(), seed=int(seed),
        strategy=cfg.strategy.name, label=str(strategy.label), family=strategy.family,
        dataset=cfg.dataset.name, scenario=cfg.scenario.kind,
        accuracy_matrix=matrix, per_increment_accuracy=curve, mean=mean, min=minimum,
        wall_time_per_task=[rec["wall_time"] for rec in learner.ledger_], sample_ledger=ledger,
        config=resolved, hyperparameters=_jsonable(strategy.hyperparameters()),
        stream=stream.describe(), status=status, error=error,
    )


def _jsonable(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
