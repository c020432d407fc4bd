"""iCaRL: herding exemplars, nearest-mean-of-exemplars classification, distillation."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from malcl.data.scenarios import CLASS_IL
from malcl.errors import ConfigurationError
from malcl.model.mlp import masked_cross_entropy
from malcl.strategies.base import ExtraData, Strategy, TeacherSnapshot, distill_targets, kd_loss


def herding_order(features: np.ndarray, m: int) -> list[int]:
    """Greedy herding: each pick keeps the running exemplar mean closest to the class mean."""
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    if n == 0:
        raise ValueError("cannot select exemplars from an empty class")
    target = features.mean(axis=0)
    chosen: list[int] = []
    running = np.zeros_like(target)
    available = np.ones(n, dtype=bool)
    for k in range(1, min(m, n) + 1):
        cand = (running + features) / k
        dist = np.linalg.norm(target - cand, axis=1)
        dist[~available] = np.inf
        pick = int(np.argmin(dist))
        chosen.append(pick)
        available[pick] = False
        running += features[pick]
    return chosen


@torch.no_grad()
def embed(model, x: torch.Tensor, normalize: bool = True) -> torch.Tensor:
    """Penultimate-layer features in eval mode, L2-normalised by default."""
    was_training = model.training
    model.eval()
    clf = getattr(model, "classifier", model)
    f = clf.features(x)
    model.train(was_training)
    return F.normalize(f, dim=1) if normalize else f


def icarl_construct_exemplars(model, class_samples: torch.Tensor, budget_m: int) -> torch.Tensor:
    """Herding-ordered exemplars (at most ``budget_m``) for one class."""
    if budget_m < 1:
        raise ConfigurationError("exemplar budget must be >= 1")
    if len(class_samples) == 0:
        raise ValueError("cannot build exemplars for an empty class")
    order = herding_order(embed(model, class_samples).numpy(), budget_m)
    return class_samples[order]


def icarl_reduce_exemplars(sets: dict[int, torch.Tensor], new_budget: int) -> dict[int, torch.Tensor]:
    """Keep each set's herding prefix of length ``new_budget``."""
    return {c: s[:new_budget] for c, s in sets.items()}


def class_means(model, exemplar_sets: dict[int, torch.Tensor]) -> dict[int, torch.Tensor]:
    means = {}
    for c, ex in exemplar_sets.items():
        if len(ex) == 0:
            raise ValueError(f"exemplar set for class {c} is empty")
        means[c] = F.normalize(embed(model, ex).mean(dim=0), dim=0)
    return means


def nme_scores(model, x: torch.Tensor, exemplar_sets: dict[int, torch.Tensor], mask: Sequence[int]) -> torch.Tensor:
    """Negative distance to each masked class's exemplar mean; other units get -inf."""
    mask = list(mask)
    missing = [c for c in mask if c not in exemplar_sets or len(exemplar_sets[c]) == 0]
    if missing:
        raise ValueError(f"no exemplars for classes {missing}")
    means = class_means(model, {c: exemplar_sets[c] for c in mask})
    feats = embed(model, x)
    n_units = getattr(model, "classifier", model).n_units
    scores = torch.full((len(x), n_units), float("-inf"))
    mu = torch.stack([means[c] for c in mask])
    scores[:, mask] = -torch.cdist(feats, mu)
    return scores


def icarl_classify(model, x: torch.Tensor, exemplar_sets: dict[int, torch.Tensor], mask=None) -> torch.Tensor:
    mask = sorted(exemplar_sets) if mask is None else mask
    return nme_scores(model, x, exemplar_sets, mask).argmax(dim=1)


def icarl_loss(model, batch, teacher: TeacherSnapshot | None, active: Sequence[int],
               old_classes: Sequence[int], lam: float = 1.0) -> torch.Tensor:
    """Cross-entropy over the active classes plus distillation on the old-class outputs."""
    x, y = batch[:2]
    logits = model(x)
    allowed = torch.zeros(logits.shape[1], dtype=torch.bool)
    allowed[list(active)] = True
    loss = masked_cross_entropy(logits, y, allowed)
    if teacher is not None and old_classes:
        old = list(old_classes)
        loss = loss + lam * kd_loss(logits[:, old], distill_targets(teacher, x, old), teacher.temperature)
    return loss


class ICaRL(Strategy):
    name = "icarl"
    label = "iCaRL"
    family = "replay_exemplars"
    scenarios = (CLASS_IL,)

    def __init__(self, capacity: int = 2000, temperature: float = 2.0, lam: float = 1.0):
        super().__init__()
        self.capacity = capacity
        self.temperature = temperature
        self.lam = lam
        self.exemplar_sets: dict[int, torch.Tensor] = {}
        self.teacher: TeacherSnapshot | None = None

    def hyperparameters(self):
        return {"capacity": self.capacity, "temperature": self.temperature, "lam": self.lam}

    def per_class_budget(self, n_classes: int) -> int:
        return self.capacity // max(n_classes, 1)

    def memory_size(self) -> int:
        return sum(len(s) for s in self.exemplar_sets.values())

    def before_task(self, learner, ctx, x_raw, y):
        self.teacher = TeacherSnapshot(learner.model_, self.temperature) if ctx.task_id > 0 else None
        if not self.exemplar_sets:
            return None
        classes = sorted(self.exemplar_sets)
        x = torch.cat([self.exemplar_sets[c] for c in classes]).numpy()
        y = np.concatenate([np.full(len(self.exemplar_sets[c]), c) for c in classes])
        self.n_replayed += len(y)
        return ExtraData(x, y, np.full(len(y), -1), space="model")

    def batch_loss(self, learner, x, y, t, ctx):
        return icarl_loss(learner.model_, (x, y), self.teacher, ctx.active, ctx.previous_classes, self.lam)

    def after_task(self, learner, ctx, x, y, t):
        budget = self.per_class_budget(len(ctx.active))
        self.exemplar_sets = icarl_reduce_exemplars(self.exemplar_sets, budget)
        if budget < 1:
            return
        for c in ctx.new_classes:
            members = x[y == c]
            if len(members):
                self.exemplar_sets[c] = icarl_construct_exemplars(learner.model_, members, budget)

    def predict_scores(self, learner, x, mask):
        return nme_scores(learner.model_, x, self.exemplar_sets, mask)
