"""MLP classifier with per-class output units and active-unit masking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from malcl.errors import ConfigurationError, NonFiniteLossError

ACTIVATIONS: dict[str, Callable[[], nn.Module]] = {
    "relu": nn.ReLU,
    "leaky_relu": nn.LeakyReLU,
    "elu": nn.ELU,
    "tanh": nn.Tanh,
    "gelu": nn.GELU,
}


@dataclass
class MLPConfig:
    input_dim: int
    n_output_units: int
    hidden_widths: list[int] = field(default_factory=lambda: [1024, 512, 256, 128])
    dropout_rate: float = 0.5
    use_batch_norm: bool = True
    activation: str = "relu"

    def __post_init__(self):
        self.hidden_widths = [int(w) for w in self.hidden_widths]
        if self.input_dim < 1 or self.n_output_units < 1:
            raise ConfigurationError("input_dim and n_output_units must be positive")
        if any(w < 1 for w in self.hidden_widths):
            raise ConfigurationError("hidden widths must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")


def make_block(n_in: int, n_out: int, batch_norm: bool, activation: str, dropout: float) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Linear(n_in, n_out)]
    if batch_norm:
        layers.append(nn.BatchNorm1d(n_out))
    layers.append(ACTIVATIONS[activation]())
    if dropout > 0:
        layers.append(nn.Dropout(dropout))
    return nn.Sequential(*layers)


class ClassifierModel(nn.Module):
    """Shared trunk (every layer below the output) plus one output unit per class."""

    def __init__(self, config: MLPConfig):
        super().__init__()
        self.config = config
        widths = [config.input_dim, *config.hidden_widths]
        self.trunk = nn.ModuleList(
            make_block(a, b, config.use_batch_norm, config.activation, config.dropout_rate)
            for a, b in zip(widths[:-1], widths[1:])
        )
        self.head = nn.Linear(widths[-1], config.n_output_units)

    @property
    def n_units(self) -> int:
        return self.head.out_features

    @property
    def feature_dim(self) -> int:
        return self.head.in_features

    def layer_dim(self, k: int) -> int:
        """Width of the representation entering trunk block ``k`` (0 is the input)."""
        return self.config.input_dim if k == 0 else self.config.hidden_widths[k - 1]

    def run_trunk(self, h: torch.Tensor, start: int = 0, stop: int | None = None) -> torch.Tensor:
        for block in self.trunk[start:stop]:
            h = block(h)
        return h

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.run_trunk(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.run_trunk(x))

    def shared_parameters(self) -> list[nn.Parameter]:
        return list(self.trunk.parameters())

    def n_shared_parameters(self) -> int:
        return sum(p.numel() for p in self.shared_parameters())

    def output_partition(self, old_classes: Iterable[int], new_classes: Iterable[int]) -> dict:
        """Row views of the output layer for previously added and newest classes."""
        old, new = list(old_classes), list(new_classes)
        return {
            "old": (self.head.weight[old], self.head.bias[old]),
            "new": (self.head.weight[new], self.head.bias[new]),
        }

    def flat_parameters(self) -> torch.Tensor:
        return torch.nn.utils.parameters_to_vector(self.parameters()).detach().clone()

    def add_output_units(self, n_new: int) -> list[int]:
        """Append ``n_new`` output units; existing rows and the trunk are untouched."""
        if n_new < 1:
            raise ConfigurationError("n_new must be >= 1")
        old = self.head
        fresh = nn.Linear(old.in_features, old.out_features + n_new)
        with torch.no_grad():
            fresh.weight[: old.out_features] = old.weight
            fresh.bias[: old.out_features] = old.bias
        self.head = fresh
        self.config.n_output_units = fresh.out_features
        return list(range(old.out_features, fresh.out_features))


# -- active-unit masking ---------------------------------------------------

def check_mask(mask: Sequence[int], n_units: int) -> list[int]:
    mask = [int(c) for c in mask]
    if not mask:
        raise ConfigurationError("active-unit mask must be nonempty")
    bad = [c for c in mask if not 0 <= c < n_units]
    if bad:
        raise ConfigurationError(f"mask references uninstantiated units {bad} (have {n_units})")
    return mask


def masked_softmax(logits: torch.Tensor, mask: Sequence[int]) -> torch.Tensor:
    """Softmax over the active units; inactive units get exactly zero probability."""
    mask = check_mask(mask, logits.shape[-1])
    idx = torch.as_tensor(mask, device=logits.device)
    probs = torch.zeros_like(logits)
    probs[..., idx] = torch.softmax(logits[..., idx], dim=-1)
    return probs


def forward_logits(model: ClassifierModel, x: torch.Tensor, mask: Sequence[int],
                   training: bool = False) -> torch.Tensor:
    """Logits restricted to ``mask``, columns in mask order."""
    mask = check_mask(mask, model.n_units)
    model.train(training)
    return model(x)[:, mask]


def allowed_matrix(n_units: int, masks: Sequence[Sequence[int]]) -> torch.Tensor:
    """Boolean [len(masks), n_units] matrix; row i marks the active units for sample i."""
    out = torch.zeros(len(masks), n_units, dtype=torch.bool)
    for i, m in enumerate(masks):
        out[i, list(m)] = True
    return out


def masked_cross_entropy(logits: torch.Tensor, y: torch.Tensor, allowed: torch.Tensor,
                         reduction: str = "mean") -> torch.Tensor:
    """Cross-entropy where each row's softmax runs over its own allowed units."""
    if allowed.dim() == 1:
        allowed = allowed.expand_as(logits)
    if not allowed.gather(1, y[:, None]).all():
        raise ConfigurationError("label outside the active-unit mask")
    z = logits.masked_fill(~allowed, float("-inf"))
    return F.cross_entropy(z, y, reduction=reduction)


# -- optimisation ----------------------------------------------------------

@dataclass
class OptimizerSpec:
    kind: str = "sgd"
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}")
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ConfigurationError("learning_rate must be a finite non-negative number")

    def build(self, params) -> torch.optim.Optimizer:
        params = [p for p in params if p.requires_grad]
        if self.kind == "adam":
            return torch.optim.Adam(params, lr=self.learning_rate, weight_decay=self.weight_decay)
        return torch.optim.SGD(params, lr=self.learning_rate, momentum=self.momentum,
                               weight_decay=self.weight_decay)


def train_step(model: nn.Module, batch, loss_fn, optimizer: torch.optim.Optimizer,
               before_update: Callable[[], None] | None = None) -> float:
    """One optimizer update; returns the scalar loss.

    ``loss_fn(model, batch)`` builds the loss with the model in training
    mode. ``before_update`` runs between backward and the optimizer step
    (gradient projection, path-integral bookkeeping).
    """
    model.train()
    optimizer.zero_grad(set_to_none=True)
    loss = loss_fn(model, batch)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NonFiniteLossError(value, {"batch_size": len(batch[0]) if isinstance(batch, (tuple, list)) else "?"})
    loss.backward()
    if before_update is not None:
        before_update()
    optimizer.step()
    return value
