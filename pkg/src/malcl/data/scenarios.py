"""Scenario builders: split a labeled dataset into an ordered task stream."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from malcl.data.datasets import LabeledDataset
from malcl.errors import ConfigurationError, SchemaError

TASK_IL = "task_il"
CLASS_IL = "class_il"
DOMAIN_IL = "domain_il"
SCENARIOS = (TASK_IL, CLASS_IL, DOMAIN_IL)


@dataclass(frozen=True)
class Task:
    task_id: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    active_classes: tuple[int, ...]
    scenario: str

    def __post_init__(self):
        if np.intersect1d(self.train_indices, self.test_indices).size:
            raise ValueError(f"task {self.task_id}: train/test indices overlap")


@dataclass
class TaskStream:
    tasks: list[Task]
    dataset: LabeledDataset
    total_classes: int
    scenario: str

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i) -> Task:
        return self.tasks[i]

    def seen_classes(self, i: int) -> tuple[int, ...]:
        """Ordered union of active classes over tasks 0..i."""
        out: list[int] = []
        for t in self.tasks[: i + 1]:
            out.extend(c for c in t.active_classes if c not in out)
        return tuple(out)

    def cumulative_test_indices(self, i: int) -> np.ndarray:
        return np.concatenate([t.test_indices for t in self.tasks[: i + 1]])

    def describe(self) -> dict:
        return {
            "scenario": self.scenario,
            "n_tasks": len(self.tasks),
            "total_classes": self.total_classes,
            "tasks": [
                {"task_id": t.task_id, "classes": list(t.active_classes),
                 "n_train": int(t.train_indices.size), "n_test": int(t.test_indices.size)}
                for t in self.tasks
            ],
        }


def order_classes(ds: LabeledDataset, policy: str = "frequency", seed: int = 0) -> list[int]:
    """Class order used to carve tasks.

    ``frequency`` sorts by descending sample count (ties by label id),
    ``label`` keeps numeric order, ``shuffle`` is a seeded permutation.
    """
    counts = ds.class_counts()
    present = [c for c in range(ds.n_classes) if counts[c] > 0]
    if policy == "frequency":
        return sorted(present, key=lambda c: (-counts[c], c))
    if policy == "label":
        return present
    if policy == "shuffle":
        rng = np.random.default_rng(seed)
        return [present[i] for i in rng.permutation(len(present))]
    raise ConfigurationError(f"unknown class order policy {policy!r}")


def stratified_split(labels: np.ndarray, indices: np.ndarray, test_fraction: float,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigurationError("test_fraction must lie in [0, 1)")
    train, test = [], []
    sub = labels[indices]
    for c in np.unique(sub):
        idx = indices[sub == c]
        idx = idx[rng.permutation(idx.size)]
        n_test = int(np.floor(test_fraction * idx.size + 0.5))
        n_test = min(n_test, idx.size - 1) if idx.size > 1 else 0
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def _chunks(order: Sequence[int], first: int, step: int) -> list[list[int]]:
    groups = [list(order[:first])]
    rest = list(order[first:])
    while rest:
        groups.append(rest[:step])
        rest = rest[step:]
    return groups


def _class_tasks(ds, groups, scenario, test_fraction, seed):
    rng = np.random.default_rng(seed)
    tasks = []
    for k, classes in enumerate(groups):
        idx = np.flatnonzero(np.isin(ds.labels, classes))
        train, test = stratified_split(ds.labels, idx, test_fraction, rng)
        tasks.append(Task(k, train, test, tuple(int(c) for c in classes), scenario))
    return TaskStream(tasks, ds, ds.n_classes, scenario)


def build_task_il(ds: LabeledDataset, classes_per_task: int, class_order: str = "frequency",
                  test_fraction: float = 0.2, seed: int = 0) -> TaskStream:
    """Disjoint class groups of ``classes_per_task``; a remainder forms a final smaller task."""
    if classes_per_task < 1:
        raise ConfigurationError("classes_per_task must be >= 1")
    order = order_classes(ds, class_order, seed)
    groups = _chunks(order, classes_per_task, classes_per_task)
    return _class_tasks(ds, groups, TASK_IL, test_fraction, seed)


def build_class_il(ds: LabeledDataset, initial_classes: int, increment: int,
                   class_order: str = "frequency", test_fraction: float = 0.2,
                   seed: int = 0) -> TaskStream:
    """Task 0 holds ``initial_classes``; every later task adds ``increment`` new ones.

    Each task's ``active_classes`` are the classes it introduces; the
    evaluation view after task ``i`` is ``stream.seen_classes(i)``.
    """
    if increment < 1:
        raise ConfigurationError("increment must be >= 1")
    order = order_classes(ds, class_order, seed)
    if not 1 <= initial_classes <= len(order):
        raise ConfigurationError(f"initial_classes must lie in [1, {len(order)}]")
    groups = _chunks(order, initial_classes, increment)
    return _class_tasks(ds, groups, CLASS_IL, test_fraction, seed)


def build_domain_il(ds: LabeledDataset, test_fraction: float = 0.2, seed: int = 0) -> TaskStream:
    """One binary task per month bucket."""
    if ds.month is None:
        raise SchemaError("domain-IL needs a month index on every sample")
    if ds.labels.size and (ds.labels.min() < 0 or ds.labels.max() > 1):
        raise SchemaError("domain-IL expects binary labels in {0, 1}")
    months = np.unique(ds.month)
    expected = np.arange(months.max() + 1) if months.size else months
    if months.size != expected.size:
        missing = sorted(set(expected.tolist()) - set(months.tolist()))
        raise SchemaError(f"months must be contiguous from 0; missing {missing}")
    rng = np.random.default_rng(seed)
    tasks = []
    for m in months:
        idx = np.flatnonzero(ds.month == m)
        train, test = stratified_split(ds.labels, idx, test_fraction, rng)
        tasks.append(Task(int(m), train, test, (0, 1), DOMAIN_IL))
    return TaskStream(tasks, ds, 2, DOMAIN_IL)


def build_stream(ds: LabeledDataset, scenario: str, **kwargs) -> TaskStream:
    if scenario == TASK_IL:
        return build_task_il(ds, **kwargs)
    if scenario == CLASS_IL:
        return build_class_il(ds, **kwargs)
    if scenario == DOMAIN_IL:
        return build_domain_il(ds, **kwargs)
    raise ConfigurationError(f"unknown scenario {scenario!r}")
