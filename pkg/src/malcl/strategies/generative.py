"""Generative replay: GR, GR with distillation, replay-through-feedback and brain-inspired replay.

Old tasks are rehearsed with samples drawn from a frozen copy of the
generator taken at the end of the previous task and labelled by a frozen
copy of the classifier. Current and replayed losses are mixed with weight
``r = 1 / tasks_seen`` on the current task.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence

import torch

from malcl.errors import ConfigurationError
from malcl.model.merged import (
    MergedConfig,
    MergedGenerativeClassifier,
    draw_gating_masks,
    merged_forward,
    merged_generative_loss,
)
from malcl.model.mlp import MLPConfig, OptimizerSpec, masked_cross_entropy
from malcl.model.vae import GAUSSIAN_MIXTURE, STANDARD_NORMAL, VAEConfig, VAEModel, vae_loss
from malcl.strategies.base import Strategy, TaskContext, TeacherSnapshot, kd_loss

HARD_LABELS = "hard_labels"
DISTILL = "distill"


def replay_ratio(tasks_seen: int) -> float:
    """Weight of the current task's loss."""
    if tasks_seen < 1:
        raise ConfigurationError("tasks_seen must be >= 1")
    return 1.0 / tasks_seen


def mix_losses(current: torch.Tensor, replay: torch.Tensor | None, tasks_seen: int) -> torch.Tensor:
    r = replay_ratio(tasks_seen)
    if replay is None or tasks_seen == 1:
        return current
    return r * current + (1.0 - r) * replay


@dataclass
class ReplayBatch:
    """Replayed inputs with one target group per old output-unit mask.

    ``targets[g]`` holds local hard labels (indices into ``masks[g]``) or
    soft probability rows, depending on ``soft``.
    """

    x: torch.Tensor
    masks: list[tuple[int, ...]]
    targets: list[torch.Tensor]
    soft: bool
    classes: torch.Tensor | None = None
    from_layer: bool = False

    def __len__(self):
        return len(self.x)


def replay_loss(logits: torch.Tensor, rb: ReplayBatch, temperature: float = 2.0) -> torch.Tensor:
    """Mean over target groups of CE (hard labels) or temperature-scaled KD (soft targets)."""
    terms = []
    for mask, target in zip(rb.masks, rb.targets):
        sub = logits[:, list(mask)]
        terms.append(kd_loss(sub, target, temperature) if rb.soft
                     else torch.nn.functional.cross_entropy(sub, target))
    return sum(terms) / len(terms)


@torch.no_grad()
def label_replay(teacher: TeacherSnapshot, x: torch.Tensor, masks: Sequence[Sequence[int]],
                 mode: str, temperature: float | None = None, logits: torch.Tensor | None = None) -> ReplayBatch:
    """Label generated inputs with the previous classifier: argmax per mask or soft targets."""
    if mode not in (HARD_LABELS, DISTILL):
        raise ConfigurationError(f"unknown replay label mode {mode!r}")
    T = teacher.temperature if temperature is None else temperature
    logits = teacher.logits(x) if logits is None else logits
    masks = [tuple(m) for m in masks]
    if mode == HARD_LABELS:
        targets = [logits[:, list(m)].argmax(dim=1) for m in masks]
    else:
        targets = [torch.softmax(logits[:, list(m)] / T, dim=1) for m in masks]
    return ReplayBatch(x, masks, targets, soft=mode == DISTILL)


def gr_task_loss(main_model, current_batch, replay_batch: ReplayBatch | None, tasks_seen: int,
                 mode: str = HARD_LABELS, temperature: float = 2.0) -> torch.Tensor:
    """``r * L(current) + (1 - r) * L(replay)`` with ``r = 1 / tasks_seen``.

    ``current_batch`` is ``(x, y, allowed)`` where ``allowed`` is an active-unit
    row or per-sample matrix.
    """
    replay_ratio(tasks_seen)
    x, y, allowed = current_batch
    current = masked_cross_entropy(main_model(x), y, allowed)
    if replay_batch is None or len(replay_batch) == 0:
        return mix_losses(current, None, tasks_seen)
    if replay_batch.soft != (mode == DISTILL):
        raise ConfigurationError(f"replay batch targets do not match mode {mode!r}")
    return mix_losses(current, replay_loss(main_model(replay_batch.x), replay_batch, temperature), tasks_seen)


def _replay_classes(ctx: TaskContext) -> list[int]:
    return sorted({c for m in ctx.old_masks for c in m})


class GenerativeReplay(Strategy):
    """Main classifier plus a separate VAE generator, both rehearsing generated samples."""

    name = "gr"
    label = "GR"
    family = "replay"

    def __init__(self, distill: bool = False, temperature: float = 2.0, latent_dim: int = 100,
                 generator_hidden: list[int] | None = None, generator_lr: float = 1e-3,
                 replay_size: int | None = None):
        super().__init__()
        self.distill = distill
        self.temperature = temperature
        self.latent_dim = latent_dim
        self.generator_hidden = generator_hidden
        self.generator_lr = generator_lr
        self.replay_size = replay_size
        self.generator: VAEModel | None = None
        self.prev_generator: VAEModel | None = None
        self.teacher: TeacherSnapshot | None = None
        self._gen_opt = None
        self._stash = None
        if distill:
            self.name, self.label = "gr_distill", "GR-D"

    @property
    def mode(self) -> str:
        return DISTILL if self.distill else HARD_LABELS

    def hyperparameters(self):
        return {"temperature": self.temperature, "latent_dim": self.latent_dim,
                "generator_hidden": self.generator_hidden, "generator_lr": self.generator_lr,
                "replay_size": self.replay_size}

    def before_task(self, learner, ctx, x_raw, y):
        if self.generator is None:
            hidden = self.generator_hidden or list(learner.model_.config.hidden_widths)
            self.generator = VAEModel(VAEConfig(ctx.input_dim, hidden, self.latent_dim, ctx.feature_kind))
        if ctx.task_id > 0:
            self.prev_generator = copy.deepcopy(self.generator).eval()
            for p in self.prev_generator.parameters():
                p.requires_grad_(False)
            self.teacher = TeacherSnapshot(learner.model_, self.temperature)
        self._gen_opt = OptimizerSpec("adam", self.generator_lr, 0.0, 0.0).build(self.generator.parameters())
        return None

    @torch.no_grad()
    def sample_replay(self, n: int, ctx: TaskContext) -> ReplayBatch:
        g = self.prev_generator
        z, _ = g.prior.sample(n, generator=ctx.generator)
        x = g.output_to_data(g.decode(z))
        return label_replay(self.teacher, x, ctx.old_masks, self.mode, self.temperature)

    def batch_loss(self, learner, x, y, t, ctx):
        rb = None
        if self.prev_generator is not None:
            rb = self.sample_replay(self.replay_size or len(y), ctx)
            self.n_replayed += len(rb)
        self._stash = (x, rb)
        return gr_task_loss(learner.model_, (x, y, ctx.allowed(t)), rb, ctx.tasks_seen, self.mode,
                            self.temperature)

    def after_update(self, learner, ctx):
        # the generator takes its own step on the same current + replayed inputs
        x, rb = self._stash
        gen = self.generator.train()
        dim = x.shape[1]
        rec, kl = vae_loss(gen, x, generator=ctx.generator)
        current = (rec + kl) / dim
        replay = None
        if rb is not None:
            rec_r, kl_r = vae_loss(gen, rb.x, generator=ctx.generator)
            replay = (rec_r + kl_r) / dim
        loss = mix_losses(current, replay, ctx.tasks_seen)
        self._gen_opt.zero_grad(set_to_none=True)
        loss.backward()
        self._gen_opt.step()
        self._stash = None


def gr_distill(**kwargs) -> GenerativeReplay:
    return GenerativeReplay(distill=True, **kwargs)


# -- merged generative classifiers -------------------------------------------------

@dataclass
class BIRConfig:
    conditional: bool = True
    gating: bool = True
    gate_fraction: float = 0.8
    internal_replay_layer: int = 1
    freeze_bottom: bool = True
    gen_weight: float = 1.0
    temperature: float = 2.0

    def __post_init__(self):
        if self.gating and not self.conditional:
            raise ConfigurationError("gating needs conditional replay to know which class is replayed")
        if not 0.0 < self.gate_fraction <= 1.0:
            raise ConfigurationError("gate_fraction must lie in (0, 1]")
        if self.internal_replay_layer < 0:
            raise ConfigurationError("internal_replay_layer must be >= 0")


RTF_CONFIG = dict(conditional=False, gating=False, internal_replay_layer=0, freeze_bottom=False)


def _merged_terms(mm: MergedGenerativeClassifier, x, y, cfg: BIRConfig, from_layer: bool, generator):
    units = range(mm.classifier.n_units)
    gate_classes = y if cfg.gating else None
    logits, recon, stats, target = merged_forward(mm, x, units, gate_classes=gate_classes,
                                                  generator=generator, from_layer=from_layer)
    if mm.replay_layer > 0:
        target = target.detach()
    rec, kl = merged_generative_loss(mm, recon, stats, target, y if cfg.conditional else None)
    return logits, (rec + kl) / recon.shape[1]


def bir_step(mm: MergedGenerativeClassifier, batch, mask, cfg: BIRConfig, replay_batch: ReplayBatch | None = None,
             tasks_seen: int = 1, generator=None) -> torch.Tensor:
    """Classification plus generative loss on current data and replay, mixed by the GR ratio.

    ``batch`` is ``(x, y)`` or ``(x, y, allowed)``; without ``allowed`` the
    units in ``mask`` are active for every sample.
    """
    x, y = batch[:2]
    if len(batch) > 2:
        allowed = batch[2]
    else:
        allowed = torch.zeros(mm.classifier.n_units, dtype=torch.bool)
        allowed[list(mask)] = True
    logits, gen = _merged_terms(mm, x, y, cfg, False, generator)
    current = masked_cross_entropy(logits, y, allowed) + cfg.gen_weight * gen
    replay = None
    if replay_batch is not None and len(replay_batch):
        logits_r, gen_r = _merged_terms(mm, replay_batch.x, replay_batch.classes, cfg,
                                        replay_batch.from_layer, generator)
        replay = replay_loss(logits_r, replay_batch, cfg.temperature) + cfg.gen_weight * gen_r
    return mix_losses(current, replay, tasks_seen)


def rtf_loss(mm: MergedGenerativeClassifier, batch, replay_batch: ReplayBatch | None, mask,
             gen_weight: float = 1.0, tasks_seen: int = 1, temperature: float = 2.0, generator=None) -> torch.Tensor:
    cfg = BIRConfig(gen_weight=gen_weight, temperature=temperature, **RTF_CONFIG)
    return bir_step(mm, batch, mask, cfg, replay_batch, tasks_seen, generator)


@torch.no_grad()
def merged_replay(prev: MergedGenerativeClassifier, n: int, classes: Sequence[int], masks, cfg: BIRConfig,
                  generator=None) -> ReplayBatch:
    """Decode prior draws from a frozen merged model and soft-label them with its own head."""
    prev.eval()
    if cfg.conditional:
        z, ids = prev.prior.sample(n, generator=generator, classes=classes)
    else:
        z, ids = prev.prior.sample(n, generator=generator)
    gate = prev.gate_rows(ids) if cfg.gating else None
    x = prev.output_to_data(prev.decode(z, gate))
    logits = prev.classifier.head(prev.upper(x))
    masks = [tuple(m) for m in masks]
    targets = [torch.softmax(logits[:, list(m)] / cfg.temperature, dim=1) for m in masks]
    return ReplayBatch(x, masks, targets, soft=True, classes=ids, from_layer=prev.replay_layer > 0)


class BrainInspiredReplay(Strategy):
    """Merged classifier/VAE; with every add-on disabled this is replay-through-feedback."""

    name = "bir"
    label = "BI-R"
    family = "replay"

    def __init__(self, conditional: bool = True, gating: bool = True, gate_fraction: float = 0.8,
                 internal_replay_layer: int = 1, freeze_bottom: bool = True, gen_weight: float = 1.0,
                 temperature: float = 2.0, latent_dim: int = 100, replay_size: int | None = None):
        super().__init__()
        self.cfg = BIRConfig(conditional, gating, gate_fraction, internal_replay_layer, freeze_bottom,
                             gen_weight, temperature)
        self.latent_dim = latent_dim
        self.replay_size = replay_size
        self.previous: MergedGenerativeClassifier | None = None

    def hyperparameters(self):
        c = self.cfg
        return {"conditional": c.conditional, "gating": c.gating, "gate_fraction": c.gate_fraction,
                "internal_replay_layer": c.internal_replay_layer, "freeze_bottom": c.freeze_bottom,
                "gen_weight": c.gen_weight, "temperature": c.temperature, "latent_dim": self.latent_dim,
                "replay_size": self.replay_size}

    def build_model(self, mlp: MLPConfig, feature_kind: str):
        prior = GAUSSIAN_MIXTURE if self.cfg.conditional else STANDARD_NORMAL
        return MergedGenerativeClassifier(mlp, MergedConfig(self.latent_dim, feature_kind, prior,
                                                            self.cfg.internal_replay_layer))

    def _frozen(self, ctx) -> bool:
        return self.cfg.freeze_bottom and self.cfg.internal_replay_layer > 0 and ctx.task_id > 0

    def before_task(self, learner, ctx, x_raw, y):
        mm = learner.model_
        if ctx.task_id > 0:
            self.previous = copy.deepcopy(mm).eval()
            for p in self.previous.parameters():
                p.requires_grad_(False)
        for c in ctx.new_classes:
            if self.cfg.conditional:
                mm.prior.known_classes.add(int(c))
            if self.cfg.gating and c not in mm.gating_masks:
                draw_gating_masks(mm, int(c), self.cfg.gate_fraction, int(ctx.rng.integers(2**31)))
        if self._frozen(ctx):
            for p in mm.bottom_parameters():
                p.requires_grad_(False)
        return None

    def batch_loss(self, learner, x, y, t, ctx):
        mm = learner.model_
        if self._frozen(ctx):
            # frozen blocks keep their batch-norm statistics
            for block in mm.classifier.trunk[: mm.replay_layer]:
                block.eval()
        rb = None
        if self.previous is not None:
            rb = merged_replay(self.previous, self.replay_size or len(y), _replay_classes(ctx),
                               ctx.old_masks, self.cfg, ctx.generator)
            self.n_replayed += len(rb)
        return bir_step(mm, (x, y, ctx.allowed(t)), ctx.active, self.cfg, rb, ctx.tasks_seen, ctx.generator)


class ReplayThroughFeedback(BrainInspiredReplay):
    name = "rtf"
    label = "RtF"

    def __init__(self, gen_weight: float = 1.0, temperature: float = 2.0, latent_dim: int = 100,
                 replay_size: int | None = None):
        super().__init__(gen_weight=gen_weight, temperature=temperature, latent_dim=latent_dim,
                         replay_size=replay_size, **RTF_CONFIG)

    def hyperparameters(self):
        return {"gen_weight": self.cfg.gen_weight, "temperature": self.cfg.temperature,
                "latent_dim": self.latent_dim, "replay_size": self.replay_size}
