"""Seeded Gaussian-cluster streams with per-month centroid drift."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from malcl.data.datasets import REAL, LabeledDataset
from malcl.errors import ConfigurationError


@dataclass
class SyntheticStreamConfig:
    n_classes: int = 2
    n_features: int = 10
    samples_per_class_per_month: int = 100
    n_months: int = 1
    drift_magnitude: float = 0.0
    class_birth_month: dict[int, int] = field(default_factory=dict)
    seed: int = 0
    cluster_std: float = 1.0
    centroid_scale: float = 3.0

    def validate(self) -> None:
        if self.n_classes < 1 or self.n_features < 1 or self.n_months < 1:
            raise ConfigurationError("n_classes, n_features and n_months must be >= 1")
        if self.samples_per_class_per_month < 1:
            raise ConfigurationError("samples_per_class_per_month must be >= 1")
        if self.drift_magnitude < 0 or self.cluster_std <= 0:
            raise ConfigurationError("drift_magnitude must be >= 0 and cluster_std > 0")
        for c, m in self.class_birth_month.items():
            if not 0 <= int(c) < self.n_classes or not 0 <= int(m) < self.n_months:
                raise ConfigurationError(f"bad class_birth_month entry {c}: {m}")

    def alive(self, c: int, month: int) -> bool:
        return month >= self.class_birth_month.get(c, 0)

    def month_counts(self) -> list[int]:
        """Number of samples the generator emits for each month."""
        return [
            self.samples_per_class_per_month * sum(self.alive(c, m) for c in range(self.n_classes))
            for m in range(self.n_months)
        ]


def class_centroids(cfg: SyntheticStreamConfig) -> tuple[np.ndarray, np.ndarray]:
    """Month-0 centroids and unit drift directions, one row per class."""
    rng = np.random.default_rng([cfg.seed, 0])
    base = rng.normal(scale=cfg.centroid_scale, size=(cfg.n_classes, cfg.n_features))
    direction = rng.normal(size=(cfg.n_classes, cfg.n_features))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return base, direction


def generate_synthetic_stream(cfg: SyntheticStreamConfig) -> LabeledDataset:
    cfg.validate()
    cfg.class_birth_month = {int(k): int(v) for k, v in cfg.class_birth_month.items()}
    base, direction = class_centroids(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    X, y, month = [], [], []
    n = cfg.samples_per_class_per_month
    for m in range(cfg.n_months):
        for c in range(cfg.n_classes):
            if not cfg.alive(c, m):
                continue
            centre = base[c] + m * cfg.drift_magnitude * direction[c]
            X.append(centre + cfg.cluster_std * rng.standard_normal((n, cfg.n_features)))
            y.append(np.full(n, c))
            month.append(np.full(n, m))
    return LabeledDataset(
        features=np.concatenate(X).astype(np.float32),
        labels=np.concatenate(y),
        month=np.concatenate(month),
        class_names=[f"class{c}" for c in range(cfg.n_classes)],
        feature_kind=REAL,
    )
