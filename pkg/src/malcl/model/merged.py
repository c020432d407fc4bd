"""Classifier and VAE fused into one network (replay through feedback).

The classifier trunk doubles as the VAE encoder. Replay can target the
input (``internal_replay_layer=0``) or a hidden layer, in which case the
decoder reconstructs that hidden representation and the blocks below it
are never trained on replayed data. Decoder hidden units can be gated
per class with fixed random masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from malcl.data.datasets import BOOLEAN, REAL
from malcl.errors import ConfigurationError
from malcl.model.mlp import ClassifierModel, MLPConfig, check_mask
from malcl.model.vae import (
    GAUSSIAN_MIXTURE,
    LOGVAR_CLAMP,
    STANDARD_NORMAL,
    LatentPrior,
    build_decoder,
    reconstruction_loss,
    reparameterize,
)


@dataclass
class MergedConfig:
    latent_dim: int = 100
    feature_kind: str = REAL
    prior: str = STANDARD_NORMAL
    internal_replay_layer: int = 0


class MergedGenerativeClassifier(nn.Module):
    def __init__(self, mlp: MLPConfig, config: MergedConfig | None = None):
        super().__init__()
        config = config or MergedConfig()
        k = config.internal_replay_layer
        if not 0 <= k < len(mlp.hidden_widths) + 1:
            raise ConfigurationError(f"internal_replay_layer {k} outside [0, {len(mlp.hidden_widths)}]")
        self.config = config
        self.classifier = ClassifierModel(mlp)
        feat = self.classifier.feature_dim
        self.to_mu = nn.Linear(feat, config.latent_dim)
        self.to_logvar = nn.Linear(feat, config.latent_dim)
        dec_widths = list(reversed(mlp.hidden_widths[k:]))
        self.decoder, self.to_output = build_decoder(
            config.latent_dim, dec_widths, self.classifier.layer_dim(k),
            mlp.use_batch_norm, mlp.activation)
        n_modes = mlp.n_output_units if config.prior == GAUSSIAN_MIXTURE else 0
        self.prior = LatentPrior(config.latent_dim, config.prior, n_modes)
        self.gating_masks: dict[int, list[torch.Tensor]] = {}

    @property
    def replay_layer(self) -> int:
        return self.config.internal_replay_layer

    @property
    def reconstruction_kind(self) -> str:
        # hidden representations are real-valued whatever the input space
        return self.config.feature_kind if self.replay_layer == 0 else REAL

    def decoder_widths(self) -> list[int]:
        return [block[0].out_features for block in self.decoder]

    def bottom_parameters(self) -> list[nn.Parameter]:
        return list(self.classifier.trunk[: self.replay_layer].parameters())

    # -- pieces of the forward pass -------------------------------------

    def lower(self, x):
        return self.classifier.run_trunk(x, 0, self.replay_layer)

    def upper(self, h):
        return self.classifier.run_trunk(h, self.replay_layer)

    def latent_stats(self, feat):
        return self.to_mu(feat), self.to_logvar(feat).clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)

    def gate_rows(self, classes: torch.Tensor) -> list[torch.Tensor]:
        rows = []
        for layer in range(len(self.decoder)):
            masks = []
            for c in classes.tolist():
                if c not in self.gating_masks:
                    raise ConfigurationError(f"no gating mask drawn for class {c}")
                masks.append(self.gating_masks[c][layer])
            rows.append(torch.stack(masks).to(torch.float32))
        return rows

    def decode(self, z, gate: list[torch.Tensor] | None = None):
        """Raw decoder output; ``gate`` is one [batch or 1, width] multiplier per hidden layer."""
        h = z
        for layer, block in enumerate(self.decoder):
            h = block(h)
            if gate is not None:
                h = h * gate[layer]
        return self.to_output(h)

    def output_to_data(self, out):
        return torch.sigmoid(out) if self.reconstruction_kind == BOOLEAN else out

    def forward(self, x):
        return self.classifier(x)


def merged_forward(mm: MergedGenerativeClassifier, x, mask, gate_classes=None, gate=None,
                   generator=None, from_layer: bool = False):
    """One encoder pass feeding both the classifier head and the decoder.

    Returns ``(logits, reconstruction, (mu, logvar, z), target)`` where
    ``target`` is the representation the decoder is trained to reproduce.
    With ``from_layer`` the input is already at the internal replay layer.
    """
    mask = check_mask(mask, mm.classifier.n_units)
    target = x if from_layer else mm.lower(x)
    feat = mm.upper(target)
    logits = mm.classifier.head(feat)[:, mask]
    mu, logvar = mm.latent_stats(feat)
    z = reparameterize(mu, logvar, generator)
    if gate is None and gate_classes is not None:
        gate = mm.gate_rows(gate_classes)
    recon = mm.decode(z, gate)
    return logits, recon, (mu, logvar, z), target


def draw_gating_masks(mm: MergedGenerativeClassifier, class_id: int, gate_fraction: float,
                      seed: int) -> list[torch.Tensor]:
    """Fix a random keep-mask over each decoder hidden layer for ``class_id``."""
    if not 0.0 < gate_fraction <= 1.0:
        raise ConfigurationError("gate_fraction must lie in (0, 1]")
    if class_id in mm.gating_masks:
        raise ConfigurationError(f"gating mask for class {class_id} already drawn")
    rng = np.random.default_rng([seed, class_id])
    masks = []
    for width in mm.decoder_widths():
        keep = math.ceil(gate_fraction * width - 1e-9)
        m = torch.zeros(width, dtype=torch.bool)
        m[torch.as_tensor(rng.permutation(width)[:keep])] = True
        masks.append(m)
    mm.gating_masks[class_id] = masks
    return masks


def internal_replay_targets(mm: MergedGenerativeClassifier, x) -> torch.Tensor:
    return mm.lower(x)


def merged_generative_loss(mm: MergedGenerativeClassifier, recon, stats, target, y=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Batch-mean ``(reconstruction, kl)`` for a merged forward pass."""
    mu, logvar, z = stats
    rec = reconstruction_loss(recon, target, mm.reconstruction_kind).mean()
    kl = mm.prior.kl(mu, logvar, z=z, y=y).mean()
    return rec, kl
