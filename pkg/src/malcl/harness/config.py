"""Experiment configuration documents.

A document is YAML or JSON. Unknown keys are rejected with the dotted path
of the offending key so a typo never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from malcl.data.datasets import BOOLEAN, REAL
from malcl.data.scenarios import CLASS_IL, DOMAIN_IL, SCENARIOS, TASK_IL
from malcl.data.synthetic import SyntheticStreamConfig
from malcl.errors import ConfigurationError
from malcl.model.mlp import OptimizerSpec
from malcl.strategies import REGISTRY, parse_strategy

DEFAULT_SEEDS = list(range(10))
# epochs / batch size when the document leaves them unset
KIND_DEFAULTS = {BOOLEAN: {"epochs": 20, "batch_size": 32}, REAL: {"epochs": 10, "batch_size": 256}}


@dataclass
class DatasetSpec:
    name: str = "synthetic"
    source: str = "synthetic"               # synthetic | file
    path: str | None = None
    format: str | None = None
    feature_kind: str | None = None
    class_map: dict[str, int] | None = None
    variance_threshold: float | None = 0.001  # applied to boolean features only
    synthetic: SyntheticStreamConfig = field(default_factory=SyntheticStreamConfig)

    def validate(self):
        if self.source not in ("synthetic", "file"):
            raise ConfigurationError(f"dataset.source: unknown source {self.source!r}")
        if self.source == "file" and not self.path:
            raise ConfigurationError("dataset.path: required for file datasets")
        if self.feature_kind not in (None, BOOLEAN, REAL):
            raise ConfigurationError(f"dataset.feature_kind: unknown kind {self.feature_kind!r}")
        if self.source == "synthetic":
            try:
                self.synthetic.validate()
            except ConfigurationError as exc:
                raise ConfigurationError(f"dataset.synthetic: {exc}") from None


@dataclass
class ScenarioSpec:
    kind: str = CLASS_IL
    classes_per_task: int = 2
    initial_classes: int = 2
    increment: int = 2
    class_order: str = "frequency"
    test_fraction: float = 0.2

    def validate(self):
        if self.kind not in SCENARIOS:
            raise ConfigurationError(f"scenario.kind: unknown scenario {self.kind!r}")
        if self.class_order not in ("frequency", "label", "shuffle"):
            raise ConfigurationError(f"scenario.class_order: unknown policy {self.class_order!r}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigurationError("scenario.test_fraction: must lie in [0, 1)")

    def builder_kwargs(self, seed: int) -> dict:
        if self.kind == TASK_IL:
            return dict(classes_per_task=self.classes_per_task, class_order=self.class_order,
                        test_fraction=self.test_fraction, seed=seed)
        if self.kind == CLASS_IL:
            return dict(initial_classes=self.initial_classes, increment=self.increment,
                        class_order=self.class_order, test_fraction=self.test_fraction, seed=seed)
        return dict(test_fraction=self.test_fraction, seed=seed)


@dataclass
class StrategySpec:
    name: str = "none"
    params: dict[str, Any] = field(default_factory=dict)

    def validate(self):
        if self.name not in REGISTRY:
            raise ConfigurationError(f"strategy.name: unknown strategy {self.name!r}")
        if self.name == "pjr" and not 0.0 <= float(self.params.get("fraction", 0.2)) <= 1.0:
            raise ConfigurationError("strategy.params.fraction: must lie in [0, 1]")


@dataclass
class ModelSpec:
    hidden_widths: list[int] = field(default_factory=lambda: [1024, 512, 256, 128])
    dropout_rate: float = 0.5
    use_batch_norm: bool = True
    activation: str = "relu"


@dataclass
class TrainingSpec:
    batch_size: int | None = None
    epochs: int | None = None
    early_stopping: Any = "auto"            # auto | true | false
    patience: int = 5
    validation_fraction: float = 0.1

    def validate(self):
        if self.early_stopping not in ("auto", True, False):
            raise ConfigurationError("training.early_stopping: must be auto, true or false")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("training.batch_size: must be >= 1")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigurationError("training.epochs: must be >= 0")


@dataclass
class ExperimentConfig:
    """One (dataset, scenario, strategy) cell; ``seeds`` lists its repetitions."""

    name: str = "experiment"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    strategy: StrategySpec = field(default_factory=StrategySpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    training: TrainingSpec = field(default_factory=TrainingSpec)
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    output_dir: str = "results"

    def validate(self) -> "ExperimentConfig":
        self.dataset.validate()
        self.scenario.validate()
        self.strategy.validate()
        self.training.validate()
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds: must be distinct")
        if any(int(s) < 0 for s in self.seeds):
            raise ConfigurationError("seeds: must be non-negative")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def cell_dict(self) -> dict:
        """Everything that determines a run's numbers except the seed."""
        d = self.to_dict()
        d.pop("seeds")
        d.pop("output_dir")
        d.pop("name")
        return d

    def config_hash(self) -> str:
        return content_hash(self.cell_dict())

    def run_id(self, seed: int) -> str:
        return content_hash({"cell": self.cell_dict(), "seed": int(seed)})


@dataclass
class ConfigDocument(ExperimentConfig):
    """An experiment config plus sweep axes.

    ``strategies`` entries are names (``"ewc"``, ``"pjr:0.2"``) or mappings
    ``{name, params}``; a bare ``pjr`` expands over ``fractions``.
    """

    strategies: list[Any] = field(default_factory=list)
    fractions: list[float] = field(default_factory=list)

    def strategy_specs(self) -> list[StrategySpec]:
        entries = self.strategies or [dataclasses.asdict(self.strategy)]
        specs: list[StrategySpec] = []
        for entry in entries:
            if isinstance(entry, str):
                name, params = parse_strategy(entry)
            elif isinstance(entry, dict):
                extra = set(entry) - {"name", "params"}
                if extra:
                    raise ConfigurationError(f"strategies: unknown key {sorted(extra)[0]!r}")
                name, params = parse_strategy(str(entry.get("name", "")))
                params = {**params, **(entry.get("params") or {})}
            else:
                raise ConfigurationError(f"strategies: bad entry {entry!r}")
            if name == "pjr" and "fraction" not in params and self.fractions:
                specs.extend(StrategySpec("pjr", {**params, "fraction": float(f)}) for f in self.fractions)
            else:
                specs.append(StrategySpec(name, params))
        for s in specs:
            s.validate()
        return specs

    def expand(self) -> list[ExperimentConfig]:
        """One fully materialized ExperimentConfig per strategy cell."""
        base = {f.name: getattr(self, f.name) for f in dataclasses.fields(ExperimentConfig)}
        cells = []
        for spec in self.strategy_specs():
            cfg = ExperimentConfig(**{**base, "strategy": spec})
            cells.append(from_dict(ExperimentConfig, cfg.to_dict()).validate())
        return cells


def content_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def from_dict(cls, data: dict | None, path: str = ""):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys."""
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path or 'document'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in fields:
            raise ConfigurationError(f"unknown key {where!r}")
        default = fields[key].default_factory() if fields[key].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[key] = from_dict(type(default), value, where)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path or 'document'}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path or 'document'}: {exc}") from None


def load_document(path) -> ConfigDocument:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"{path}: not valid {'JSON' if path.suffix == '.json' else 'YAML'}: {exc}") from None
    doc = from_dict(ConfigDocument, data)
    doc.validate()
    return doc


def resolve_training(training: TrainingSpec, feature_kind: str) -> TrainingSpec:
    """Fill unset epochs / batch size from the feature-kind defaults."""
    d = KIND_DEFAULTS[feature_kind]
    return dataclasses.replace(
        training,
        epochs=d["epochs"] if training.epochs is None else training.epochs,
        batch_size=d["batch_size"] if training.batch_size is None else training.batch_size,
    )


__all__ = [
    "DatasetSpec", "ScenarioSpec", "StrategySpec", "ModelSpec", "TrainingSpec", "ExperimentConfig",
    "ConfigDocument", "content_hash", "from_dict", "load_document", "resolve_training",
    "DEFAULT_SEEDS", "KIND_DEFAULTS", "DOMAIN_IL",
]
