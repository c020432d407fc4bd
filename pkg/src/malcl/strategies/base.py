"""Strategy plug-in interface and shared helpers.

A strategy sees the learner at four points of every task:

``before_task``
    snapshot teachers/generators; may hand back extra training data.
``batch_loss``
    the per-step objective (task loss plus penalties or replay terms).
``before_update`` / ``after_update``
    around the optimizer step, for gradient projection and path integrals.
``after_task``
    consolidation: Fisher anchors, importance weights, buffers, exemplars.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from malcl.data.scenarios import CLASS_IL, DOMAIN_IL, SCENARIOS, TASK_IL
from malcl.errors import ConfigurationError
from malcl.model.mlp import ClassifierModel, MLPConfig, allowed_matrix, masked_cross_entropy


@dataclass
class TaskContext:
    """Everything a strategy may know about the task being learned."""

    task_id: int
    scenario: str
    n_units: int
    new_classes: tuple[int, ...]
    active: tuple[int, ...]
    previous_classes: tuple[int, ...]
    task_masks: dict[int, tuple[int, ...]]
    batch_size: int
    rng: np.random.Generator
    generator: torch.Generator
    input_dim: int = 0
    feature_kind: str = "real"

    @property
    def tasks_seen(self) -> int:
        return self.task_id + 1

    @property
    def old_masks(self) -> list[tuple[int, ...]]:
        """Output-unit groups whose behaviour distillation should preserve."""
        if self.task_id == 0:
            return []
        if self.scenario == TASK_IL:
            return [self.task_masks[j] for j in range(self.task_id)]
        if self.scenario == CLASS_IL:
            return [self.previous_classes]
        return [self.active]

    def allowed(self, task_ids: torch.Tensor) -> torch.Tensor:
        """Per-sample active-unit matrix; task-IL samples keep their own task's units."""
        if self.scenario == TASK_IL:
            return allowed_matrix(self.n_units, [self.task_masks[int(t)] for t in task_ids])
        row = torch.zeros(self.n_units, dtype=torch.bool)
        row[list(self.active)] = True
        return row.expand(len(task_ids), -1)


@dataclass
class ExtraData:
    """Additional training samples supplied by a strategy for the coming task.

    ``space`` says whether ``x`` is raw input (re-standardized by the learner)
    or already in model space.
    """

    x: np.ndarray
    y: np.ndarray
    task_ids: np.ndarray
    space: str = "raw"

    def __len__(self):
        return len(self.y)


class TeacherSnapshot:
    """Frozen copy of a model, used as a soft-target producer."""

    def __init__(self, model: nn.Module, temperature: float = 2.0):
        if temperature <= 0:
            raise ConfigurationError("temperature must be > 0")
        self.model = copy.deepcopy(model).eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.temperature = temperature

    @torch.no_grad()
    def logits(self, x: torch.Tensor) -> torch.Tensor:
        self.model.eval()
        return self.model(x)


def distill_targets(teacher: TeacherSnapshot, x: torch.Tensor, mask: Sequence[int],
                    temperature: float | None = None) -> torch.Tensor:
    """Temperature-scaled teacher softmax over ``mask`` (columns in mask order)."""
    T = teacher.temperature if temperature is None else temperature
    return torch.softmax(teacher.logits(x)[:, list(mask)] / T, dim=1)


def kd_loss(student_logits: torch.Tensor, targets: torch.Tensor, temperature: float) -> torch.Tensor:
    """``T^2 * KL(targets || softmax(student / T))`` averaged over the batch."""
    log_p = F.log_softmax(student_logits / temperature, dim=1)
    return F.kl_div(log_p, targets, reduction="batchmean") * temperature ** 2


def flat_grad(params: Sequence[nn.Parameter]) -> torch.Tensor:
    return torch.cat([
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1) for p in params
    ])


def set_flat_grad(params: Sequence[nn.Parameter], vec: torch.Tensor) -> None:
    offset = 0
    for p in params:
        n = p.numel()
        p.grad = vec[offset:offset + n].view_as(p).clone()
        offset += n


def flat_params(model: nn.Module) -> torch.Tensor:
    """Differentiable concatenation of all parameters."""
    return torch.cat([p.reshape(-1) for p in model.parameters()])


class Strategy:
    name = "none"
    label = "None"
    family = "baselines"
    scenarios: tuple[str, ...] = SCENARIOS

    def __init__(self):
        self.n_replayed = 0

    def hyperparameters(self) -> dict:
        return {}

    def build_model(self, mlp: MLPConfig, feature_kind: str) -> nn.Module:
        return ClassifierModel(mlp)

    def before_task(self, learner, ctx: TaskContext, x_raw: np.ndarray, y: np.ndarray) -> ExtraData | None:
        return None

    def task_loss(self, model, x, y, t, ctx: TaskContext) -> torch.Tensor:
        return masked_cross_entropy(model(x), y, ctx.allowed(t))

    def batch_loss(self, learner, x, y, t, ctx: TaskContext) -> torch.Tensor:
        return self.task_loss(learner.model_, x, y, t, ctx)

    def before_update(self, learner, ctx: TaskContext) -> None:
        pass

    def after_update(self, learner, ctx: TaskContext) -> None:
        pass

    def after_task(self, learner, ctx: TaskContext, x: torch.Tensor, y: torch.Tensor, t: torch.Tensor) -> None:
        pass

    def predict_scores(self, learner, x: torch.Tensor, mask: Sequence[int]) -> torch.Tensor | None:
        """Override to replace the softmax head at prediction time."""
        return None

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in self.hyperparameters().items())
        return f"{type(self).__name__}({params})"


class NoneStrategy(Strategy):
    """Plain sequential fine-tuning."""


def check_scenario(strategy: Strategy, scenario: str) -> None:
    if scenario not in SCENARIOS:
        raise ConfigurationError(f"unknown scenario {scenario!r}")
    if scenario not in strategy.scenarios:
        raise ConfigurationError(f"strategy {strategy.name!r} is not defined for {scenario}")


__all__ = [
    "TaskContext", "ExtraData", "TeacherSnapshot", "distill_targets", "kd_loss", "flat_grad",
    "set_flat_grad", "flat_params", "Strategy", "NoneStrategy", "check_scenario",
    "CLASS_IL", "DOMAIN_IL", "TASK_IL",
]
