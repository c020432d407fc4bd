"""Replay of stored samples: joint / partial joint replay, ER and A-GEM."""

from __future__ import annotations

import math

import numpy as np
import torch

from malcl.errors import ConfigurationError
from malcl.model.mlp import masked_cross_entropy
from malcl.strategies.base import ExtraData, Strategy, TaskContext, flat_grad, set_flat_grad


class ReplayBuffer:
    """Fixed-capacity sample store filled by reservoir sampling.

    Every item offered so far has the same probability ``capacity / n_seen``
    of being held.
    """

    def __init__(self, capacity: int, rng: np.random.Generator | None = None):
        if capacity < 0:
            raise ConfigurationError("capacity must be >= 0")
        self.capacity = int(capacity)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.n_seen = 0
        self._x: np.ndarray | None = None
        self._y = np.zeros(self.capacity, dtype=np.int64)
        self._t = np.zeros(self.capacity, dtype=np.int64)
        self._ids = np.full(self.capacity, -1, dtype=np.int64)
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, x, y, task_ids, ids=None) -> None:
        x = np.asarray(x, dtype=np.float32)
        y = np.asarray(y)
        task_ids = np.broadcast_to(np.asarray(task_ids), y.shape)
        ids = np.full(y.shape, -1) if ids is None else np.asarray(ids)
        if self.capacity == 0:
            self.n_seen += len(y)
            return
        if self._x is None:
            self._x = np.zeros((self.capacity, x.shape[1]), dtype=np.float32)
        for i in range(len(y)):
            self.n_seen += 1
            if self._size < self.capacity:
                slot = self._size
                self._size += 1
            else:
                slot = int(self.rng.integers(self.n_seen))
                if slot >= self.capacity:
                    continue
            self._x[slot], self._y[slot], self._t[slot], self._ids[slot] = x[i], y[i], task_ids[i], ids[i]

    def sample(self, n: int, rng: np.random.Generator | None = None):
        """Up to ``n`` distinct stored items as ``(x, y, task_ids)`` tensors."""
        rng = rng if rng is not None else self.rng
        k = min(n, self._size)
        idx = np.sort(rng.choice(self._size, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
        return (torch.from_numpy(self._x[idx].copy()) if self._x is not None else torch.zeros(0, 0),
                torch.from_numpy(self._y[idx].copy()), torch.from_numpy(self._t[idx].copy()))

    def stored_ids(self) -> np.ndarray:
        return self._ids[: self._size].copy()


def er_update_buffer(buffer: ReplayBuffer, batch) -> ReplayBuffer:
    x, y, t = batch[:3]
    buffer.add(np.asarray(x), np.asarray(y), np.asarray(t))
    return buffer


def er_step(model, current_batch, buffer: ReplayBuffer, ctx: TaskContext, replay_size: int | None = None,
            rng: np.random.Generator | None = None) -> torch.Tensor:
    """Equal-weight mean of the current and replayed cross-entropies."""
    x, y, t = current_batch
    loss = masked_cross_entropy(model(x), y, ctx.allowed(t))
    if len(buffer) == 0:
        return loss
    xr, yr, tr = buffer.sample(replay_size or len(y), rng)
    replay = masked_cross_entropy(model(xr), yr, ctx.allowed(tr))
    return 0.5 * (loss + replay)


class ExperienceReplay(Strategy):
    """Joint supervised training on the current batch and a reservoir-buffer batch."""

    name = "er"
    label = "ER"
    family = "replay_exemplars"

    def __init__(self, capacity: int = 1000):
        super().__init__()
        self.capacity = capacity
        self.buffer: ReplayBuffer | None = None

    def hyperparameters(self):
        return {"capacity": self.capacity}

    def before_task(self, learner, ctx, x_raw, y):
        if self.buffer is None:
            self.buffer = ReplayBuffer(self.capacity, np.random.default_rng(ctx.rng.integers(2**63)))
        return None

    def batch_loss(self, learner, x, y, t, ctx):
        if len(self.buffer):
            self.n_replayed += min(len(y), len(self.buffer))
        return er_step(learner.model_, (x, y, t), self.buffer, ctx, rng=ctx.rng)

    def after_task(self, learner, ctx, x, y, t):
        order = ctx.rng.permutation(len(y))
        er_update_buffer(self.buffer, (x[order].numpy(), y[order].numpy(), t[order].numpy()))


def agem_project(g: torch.Tensor, g_ref: torch.Tensor) -> torch.Tensor:
    """Project ``g`` so it no longer conflicts with ``g_ref``.

    Unchanged when ``g . g_ref >= 0`` or ``g_ref`` is zero; otherwise
    ``g - (g . g_ref / g_ref . g_ref) g_ref``.
    """
    dot = torch.dot(g, g_ref)
    ref_sq = torch.dot(g_ref, g_ref)
    if dot >= 0 or ref_sq == 0:
        return g
    return g - (dot / ref_sq) * g_ref


class AGEM(Strategy):
    name = "agem"
    label = "A-GEM"
    family = "replay_exemplars"

    def __init__(self, capacity: int = 1000, reference_size: int = 256):
        super().__init__()
        self.capacity = capacity
        self.reference_size = reference_size
        self.buffer: ReplayBuffer | None = None
        self.n_projected = 0

    def hyperparameters(self):
        return {"capacity": self.capacity, "reference_size": self.reference_size}

    def before_task(self, learner, ctx, x_raw, y):
        if self.buffer is None:
            self.buffer = ReplayBuffer(self.capacity, np.random.default_rng(ctx.rng.integers(2**63)))
        return None

    def before_update(self, learner, ctx):
        if not len(self.buffer):
            return
        model = learner.model_
        params = [p for p in model.parameters() if p.requires_grad]
        g = flat_grad(params).detach().clone()
        xr, yr, tr = self.buffer.sample(self.reference_size, ctx.rng)
        self.n_replayed += len(yr)
        model.zero_grad(set_to_none=True)
        masked_cross_entropy(model(xr), yr, ctx.allowed(tr)).backward()
        g_ref = flat_grad(params).detach()
        projected = agem_project(g, g_ref)
        if projected is not g:
            self.n_projected += 1
        set_flat_grad(params, projected)

    def after_task(self, learner, ctx, x, y, t):
        order = ctx.rng.permutation(len(y))
        self.buffer.add(x[order].numpy(), y[order].numpy(), t[order].numpy())


# -- joint and partial joint replay ------------------------------------------------

class PJRStore:
    """Every past training sample, grouped by task, in raw input space."""

    def __init__(self):
        self.tasks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    def add_task(self, x, y, task_id: int) -> None:
        self.tasks.append((np.asarray(x), np.asarray(y), np.full(len(y), task_id)))

    def __len__(self):
        return sum(len(y) for _, y, _ in self.tasks)

    def all(self) -> ExtraData:
        if not self.tasks:
            return ExtraData(np.zeros((0, 0), np.float32), np.zeros(0, np.int64), np.zeros(0, np.int64))
        x, y, t = (np.concatenate(parts) for parts in zip(*self.tasks))
        return ExtraData(x, y, t)


def pjr_sample(store: PJRStore, fraction: float, rng: np.random.Generator) -> ExtraData:
    """Uniform sample without replacement of ``floor(fraction * |past|)`` stored samples."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigurationError("PJR fraction must lie in [0, 1]")
    everything = store.all()
    n = math.floor(fraction * len(everything) + 1e-9)
    pick = np.sort(rng.choice(len(everything), size=n, replace=False)) if n else np.zeros(0, dtype=np.int64)
    return ExtraData(everything.x[pick] if n else everything.x[:0], everything.y[pick], everything.task_ids[pick])


class PartialJointReplay(Strategy):
    name = "pjr"
    family = "partial_replay"
    default_early_stopping = True

    def __init__(self, fraction: float = 0.2):
        super().__init__()
        if not 0.0 <= fraction <= 1.0:
            raise ConfigurationError("PJR fraction must lie in [0, 1]")
        self.fraction = float(fraction)
        self.store = PJRStore()

    @property
    def label(self):
        return f"PJR-{100 * self.fraction:g}%"

    def hyperparameters(self):
        return {"fraction": self.fraction}

    def replay(self, ctx) -> ExtraData:
        return pjr_sample(self.store, self.fraction, ctx.rng)

    def before_task(self, learner, ctx, x_raw, y):
        extra = self.replay(ctx) if len(self.store) else None
        self.store.add_task(x_raw, y, ctx.task_id)
        if extra is not None:
            self.n_replayed += len(extra)
        return extra


class Joint(PartialJointReplay):
    """Retrain on the union of every task's training split seen so far."""

    name = "joint"
    label = "Joint"
    family = "baselines"
    default_early_stopping = False

    def __init__(self):
        super().__init__(1.0)

    def hyperparameters(self):
        return {}

    def replay(self, ctx):
        return self.store.all()
