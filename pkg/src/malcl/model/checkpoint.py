"""Versioned model checkpoints."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import torch

from malcl.errors import FormatError
from malcl.model.merged import MergedConfig, MergedGenerativeClassifier
from malcl.model.mlp import ClassifierModel, MLPConfig

MAGIC = "malcl-checkpoint"
VERSION = 1


def save_checkpoint(path, model: ClassifierModel | MergedGenerativeClassifier,
                    optimizer: torch.optim.Optimizer | None = None, extra: dict | None = None) -> None:
    merged = isinstance(model, MergedGenerativeClassifier)
    clf = model.classifier if merged else model
    payload = {
        "magic": MAGIC,
        "version": VERSION,
        "kind": "merged" if merged else "classifier",
        "mlp_config": dataclasses.asdict(clf.config),
        "merged_config": dataclasses.asdict(model.config) if merged else None,
        "flat_parameters": torch.nn.utils.parameters_to_vector(model.parameters()).detach().clone(),
        "buffers": {k: v.clone() for k, v in model.named_buffers()},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "gating_masks": {int(c): [m.clone() for m in ms] for c, ms in model.gating_masks.items()} if merged else {},
        "known_classes": sorted(model.prior.known_classes) if merged else [],
        "extra": extra or {},
    }
    torch.save(payload, Path(path))


def load_checkpoint(path) -> tuple[torch.nn.Module, dict]:
    """Rebuild the model; returns ``(model, payload)`` so callers can restore optimizer state."""
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    except Exception as exc:
        raise FormatError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("magic") != MAGIC:
        raise FormatError(f"{path}: not a malcl checkpoint")
    if payload["version"] != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {payload['version']}")
    mlp = MLPConfig(**payload["mlp_config"])
    if payload["kind"] == "merged":
        model = MergedGenerativeClassifier(mlp, MergedConfig(**payload["merged_config"]))
        model.gating_masks = {int(c): ms for c, ms in payload["gating_masks"].items()}
        model.prior.known_classes = set(payload["known_classes"])
    else:
        model = ClassifierModel(mlp)
    torch.nn.utils.vector_to_parameters(payload["flat_parameters"], model.parameters())
    buffers = dict(model.named_buffers())
    for name, value in payload["buffers"].items():
        buffers[name].copy_(value)
    return model, payload
