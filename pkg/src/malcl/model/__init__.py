from malcl.model.checkpoint import load_checkpoint, save_checkpoint
from malcl.model.merged import (
    MergedConfig,
    MergedGenerativeClassifier,
    draw_gating_masks,
    internal_replay_targets,
    merged_forward,
    merged_generative_loss,
)
from malcl.model.mlp import (
    ClassifierModel,
    MLPConfig,
    OptimizerSpec,
    allowed_matrix,
    forward_logits,
    masked_cross_entropy,
    masked_softmax,
    train_step,
)
from malcl.model.vae import (
    GAUSSIAN_MIXTURE,
    STANDARD_NORMAL,
    VAEConfig,
    VAEModel,
    gaussian_kl,
    reconstruction_loss,
    sample_generator,
    vae_loss,
)

__all__ = [
    "load_checkpoint", "save_checkpoint", "MergedConfig", "MergedGenerativeClassifier",
    "draw_gating_masks", "internal_replay_targets", "merged_forward", "merged_generative_loss",
    "ClassifierModel", "MLPConfig", "OptimizerSpec", "allowed_matrix", "forward_logits",
    "masked_cross_entropy", "masked_softmax", "train_step", "GAUSSIAN_MIXTURE",
    "STANDARD_NORMAL", "VAEConfig", "VAEModel", "gaussian_kl", "reconstruction_loss",
    "sample_generator", "vae_loss",
]
