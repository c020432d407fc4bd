"""Learning without forgetting: hard-label loss plus distillation to the previous model."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from malcl.errors import ConfigurationError
from malcl.strategies.base import Strategy, TeacherSnapshot, distill_targets, kd_loss


@dataclass
class LwFConfig:
    lambda_0: float = 1.0
    temperature: float = 2.0

    def __post_init__(self):
        if self.lambda_0 < 0:
            raise ConfigurationError("lambda_0 must be >= 0")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be > 0")


def lwf_loss(student_logits_new, hard_labels, student_logits_old, teacher_targets, cfg: LwFConfig) -> torch.Tensor:
    """``CE(new, labels) + lambda_0 * KD(old, teacher)``.

    ``student_logits_old`` / ``teacher_targets`` may be lists (one entry per
    group of old output units); the distillation term is their mean.
    """
    loss = F.cross_entropy(student_logits_new, hard_labels)
    if isinstance(student_logits_old, torch.Tensor):
        student_logits_old, teacher_targets = [student_logits_old], [teacher_targets]
    if student_logits_old and cfg.lambda_0:
        kd = sum(kd_loss(s, q, cfg.temperature) for s, q in zip(student_logits_old, teacher_targets))
        loss = loss + cfg.lambda_0 * kd / len(student_logits_old)
    return loss


class LwF(Strategy):
    name = "lwf"
    label = "LwF"
    family = "replay"

    def __init__(self, lambda_0: float = 1.0, temperature: float = 2.0):
        super().__init__()
        self.cfg = LwFConfig(lambda_0, temperature)
        self.teacher: TeacherSnapshot | None = None

    def hyperparameters(self):
        return {"lambda_0": self.cfg.lambda_0, "temperature": self.cfg.temperature}

    def before_task(self, learner, ctx, x_raw, y):
        self.teacher = TeacherSnapshot(learner.model_, self.cfg.temperature) if ctx.task_id > 0 else None
        return None

    def batch_loss(self, learner, x, y, t, ctx):
        logits = learner.model_(x)
        active = list(ctx.active)
        lookup = {c: i for i, c in enumerate(active)}
        local = torch.as_tensor([lookup[int(c)] for c in y])
        old_logits, targets = [], []
        if self.teacher is not None:
            for mask in ctx.old_masks:
                old_logits.append(logits[:, list(mask)])
                targets.append(distill_targets(self.teacher, x, mask))
        return lwf_loss(logits[:, active], local, old_logits, targets, self.cfg)
