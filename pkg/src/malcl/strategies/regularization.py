"""Quadratic-penalty methods: EWC, online EWC and synaptic intelligence."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
from torch import nn
from torch.func import functional_call, grad, vmap

from malcl.strategies.base import Strategy, flat_grad, flat_params


@torch.no_grad()
def _sample_labels(model, x, mask, generator):
    probs = torch.softmax(model(x)[:, mask], dim=1)
    return torch.multinomial(probs, 1, generator=generator).squeeze(1)


def compute_fisher_diagonal(model: nn.Module, x: torch.Tensor, y: torch.Tensor | None, mask: Sequence[int],
                            n_estimate: int = 1024, mode: str = "model_sampled",
                            generator: torch.Generator | None = None, chunk: int = 256) -> torch.Tensor:
    """Diagonal Fisher ``mean_n (d log p(y_n|x_n) / d theta)^2`` as a flat vector.

    ``model_sampled`` draws each label from the model's own predictive
    distribution over ``mask``; ``empirical`` uses the given labels.
    Evaluated in eval mode (no dropout, frozen batch-norm statistics).
    """
    if len(x) == 0:
        raise ValueError("Fisher estimate needs at least one sample")
    mask = list(mask)
    was_training = model.training
    model.eval()
    if n_estimate and len(x) > n_estimate:
        pick = torch.randperm(len(x), generator=generator)[:n_estimate]
        x = x[pick]
        y = None if y is None else y[pick]
    if mode == "model_sampled":
        local = _sample_labels(model, x, mask, generator)
    elif mode == "empirical":
        if y is None:
            raise ValueError("empirical Fisher needs labels")
        lookup = {c: i for i, c in enumerate(mask)}
        local = torch.as_tensor([lookup[int(c)] for c in y])
    else:
        raise ValueError(f"unknown Fisher mode {mode!r}")

    params = {k: v.detach() for k, v in model.named_parameters()}
    buffers = {k: v.detach() for k, v in model.named_buffers()}
    idx = torch.as_tensor(mask)

    def log_lik(p, xi, yi):
        out = functional_call(model, (p, buffers), (xi[None],))[0, idx]
        return torch.log_softmax(out, dim=0).gather(0, yi[None])[0]

    per_sample = vmap(grad(log_lik), in_dims=(None, 0, 0))
    total = {k: torch.zeros_like(v) for k, v in params.items()}
    for start in range(0, len(x), chunk):
        g = per_sample(params, x[start:start + chunk], local[start:start + chunk])
        for k in total:
            total[k] += g[k].pow(2).sum(dim=0)
    model.train(was_training)
    return torch.cat([(total[k] / len(x)).reshape(-1) for k, _ in model.named_parameters()])


# -- EWC -----------------------------------------------------------------------

@dataclass
class EWCState:
    lam: float = 100.0
    anchors: list[tuple[torch.Tensor, torch.Tensor]] = field(default_factory=list)


def ewc_penalty(theta: torch.Tensor, state: EWCState) -> torch.Tensor:
    """``sum_t sum_i (lam / 2) F_t,i (theta_i - theta*_t,i)^2``."""
    total = theta.new_zeros(())
    for star, fisher in state.anchors:
        if star.shape != theta.shape:
            raise ValueError("anchor length differs from parameter vector")
        total = total + (fisher * (theta - star) ** 2).sum()
    return 0.5 * state.lam * total


@dataclass
class OnlineEWCState:
    lam: float = 100.0
    gamma: float = 1.0
    theta_star: torch.Tensor | None = None
    fisher_running: torch.Tensor | None = None


def ewc_online_consolidate(state: OnlineEWCState, fisher_new: torch.Tensor,
                           theta: torch.Tensor | None = None) -> OnlineEWCState:
    """Fold a new Fisher into the running sum; ``theta`` becomes the single anchor."""
    if state.fisher_running is None:
        state.fisher_running = fisher_new.clone()
    else:
        state.fisher_running = state.gamma * state.fisher_running + fisher_new
    if theta is not None:
        state.theta_star = theta.detach().clone()
    return state


def ewc_online_penalty(theta: torch.Tensor, state: OnlineEWCState) -> torch.Tensor:
    """``lam * sum_i F~_i (theta_i - theta*_i)^2`` against the latest anchor."""
    if state.theta_star is None:
        return theta.new_zeros(())
    return state.lam * (state.fisher_running * (theta - state.theta_star) ** 2).sum()


class EWC(Strategy):
    name = "ewc"
    label = "EWC"
    family = "regularization"

    def __init__(self, lam: float = 100.0, fisher_samples: int = 1024, fisher_mode: str = "model_sampled"):
        super().__init__()
        self.state = EWCState(lam=lam)
        self.fisher_samples = fisher_samples
        self.fisher_mode = fisher_mode

    def hyperparameters(self):
        return {"lam": self.state.lam, "fisher_samples": self.fisher_samples, "fisher_mode": self.fisher_mode}

    def penalty(self, model) -> torch.Tensor:
        return ewc_penalty(flat_params(model), self.state)

    def batch_loss(self, learner, x, y, t, ctx):
        model = learner.model_
        loss = self.task_loss(model, x, y, t, ctx)
        if self.state.anchors:
            loss = loss + self.penalty(model)
        return loss

    def fisher(self, learner, ctx, x, y):
        return compute_fisher_diagonal(learner.model_, x, y, ctx.active, self.fisher_samples,
                                       self.fisher_mode, ctx.generator)

    def after_task(self, learner, ctx, x, y, t):
        fisher = self.fisher(learner, ctx, x, y)
        self.state.anchors.append((learner.model_.flat_parameters(), fisher))


class OnlineEWC(EWC):
    name = "ewc_online"
    label = "EWC-O"

    def __init__(self, lam: float = 100.0, gamma: float = 1.0, fisher_samples: int = 1024,
                 fisher_mode: str = "model_sampled"):
        Strategy.__init__(self)
        self.state = OnlineEWCState(lam=lam, gamma=gamma)
        self.fisher_samples = fisher_samples
        self.fisher_mode = fisher_mode

    def hyperparameters(self):
        return {**super().hyperparameters(), "gamma": self.state.gamma}

    def penalty(self, model):
        return ewc_online_penalty(flat_params(model), self.state)

    def batch_loss(self, learner, x, y, t, ctx):
        model = learner.model_
        loss = self.task_loss(model, x, y, t, ctx)
        if self.state.theta_star is not None:
            loss = loss + self.penalty(model)
        return loss

    def after_task(self, learner, ctx, x, y, t):
        ewc_online_consolidate(self.state, self.fisher(learner, ctx, x, y), learner.model_.flat_parameters())


# -- Synaptic intelligence -------------------------------------------------------

@dataclass
class SIState:
    c: float = 0.1
    xi: float = 0.1
    omega: torch.Tensor | None = None        # path integral within the current task
    importance: torch.Tensor | None = None   # consolidated importance
    theta_start: torch.Tensor | None = None
    anchor: torch.Tensor | None = None


def si_track(state: SIState, grad: torch.Tensor, delta_theta: torch.Tensor) -> SIState:
    """Accumulate ``-grad * delta_theta`` for one optimizer step."""
    contrib = -grad * delta_theta
    state.omega = contrib.clone() if state.omega is None else state.omega + contrib
    return state


def si_consolidate(state: SIState, theta_end: torch.Tensor) -> SIState:
    """Fold the task's path integral into the importance and move the anchor.

    Per-task contributions are clipped at zero so the importance stays
    non-negative even when momentum makes a step increase the loss.
    """
    theta_end = theta_end.detach().clone()
    start = state.theta_start if state.theta_start is not None else theta_end
    omega = state.omega if state.omega is not None else torch.zeros_like(theta_end)
    contrib = (omega / ((theta_end - start) ** 2 + state.xi)).clamp_min(0.0)
    state.importance = contrib if state.importance is None else state.importance + contrib
    state.anchor = theta_end
    state.theta_start = theta_end.clone()
    state.omega = torch.zeros_like(theta_end)
    return state


def si_penalty(theta: torch.Tensor, state: SIState) -> torch.Tensor:
    """``c * sum_k importance_k (theta_k - anchor_k)^2``."""
    if state.anchor is None:
        return theta.new_zeros(())
    return state.c * (state.importance * (theta - state.anchor) ** 2).sum()


class SI(Strategy):
    name = "si"
    label = "SI"
    family = "regularization"

    def __init__(self, c: float = 0.1, xi: float = 0.1):
        super().__init__()
        self.state = SIState(c=c, xi=xi)
        self._theta_before = None
        self._grad = None

    def hyperparameters(self):
        return {"c": self.state.c, "xi": self.state.xi}

    def penalty(self, model) -> torch.Tensor:
        return si_penalty(flat_params(model), self.state)

    def before_task(self, learner, ctx, x_raw, y):
        if self.state.theta_start is None:
            self.state.theta_start = learner.model_.flat_parameters()
        return None

    def batch_loss(self, learner, x, y, t, ctx):
        model = learner.model_
        loss = self.task_loss(model, x, y, t, ctx)
        if self.state.anchor is not None:
            loss = loss + self.penalty(model)
        return loss

    def before_update(self, learner, ctx):
        params = list(learner.model_.parameters())
        self._grad = flat_grad(params).detach().clone()
        self._theta_before = learner.model_.flat_parameters()

    def after_update(self, learner, ctx):
        delta = learner.model_.flat_parameters() - self._theta_before
        si_track(self.state, self._grad, delta)

    def after_task(self, learner, ctx, x, y, t):
        si_consolidate(self.state, learner.model_.flat_parameters())
