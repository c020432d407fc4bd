"""Symmetric VAE generator with a standard-normal or Gaussian-mixture prior."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from malcl.data.datasets import BOOLEAN, REAL
from malcl.errors import ConfigurationError
from malcl.model.mlp import make_block

LOGVAR_CLAMP = 10.0
STANDARD_NORMAL = "standard_normal"
GAUSSIAN_MIXTURE = "gaussian_mixture"


@dataclass
class VAEConfig:
    input_dim: int
    hidden_widths: list[int] = field(default_factory=lambda: [1024, 512, 256, 128])
    latent_dim: int = 100
    feature_kind: str = REAL
    prior: str = STANDARD_NORMAL
    n_modes: int = 0
    use_batch_norm: bool = True
    activation: str = "relu"

    def __post_init__(self):
        if self.prior not in (STANDARD_NORMAL, GAUSSIAN_MIXTURE):
            raise ConfigurationError(f"unknown prior {self.prior!r}")
        if self.prior == GAUSSIAN_MIXTURE and self.n_modes < 1:
            raise ConfigurationError("mixture prior needs n_modes >= 1")
        if self.feature_kind not in (BOOLEAN, REAL):
            raise ConfigurationError(f"unknown feature_kind {self.feature_kind!r}")


def reconstruction_loss(output: torch.Tensor, target: torch.Tensor, kind: str) -> torch.Tensor:
    """Per-sample reconstruction loss summed over features.

    Boolean features use Bernoulli cross-entropy on decoder logits, real
    features use squared error on the raw decoder output.
    """
    if kind == BOOLEAN:
        return F.binary_cross_entropy_with_logits(output, target, reduction="none").sum(dim=1)
    return ((output - target) ** 2).sum(dim=1)


def gaussian_kl(mu: torch.Tensor, logvar: torch.Tensor,
                prior_mu: torch.Tensor | None = None, prior_logvar: torch.Tensor | None = None) -> torch.Tensor:
    """Closed-form KL(N(mu, e^logvar) || N(prior_mu, e^prior_logvar)) per sample."""
    if prior_mu is None:
        return 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).sum(dim=1)
    var_ratio = (logvar - prior_logvar).exp()
    return 0.5 * (var_ratio + (mu - prior_mu).pow(2) / prior_logvar.exp() - 1.0
                  - (logvar - prior_logvar)).sum(dim=1)


def diag_gaussian_logpdf(z, mu, logvar):
    return -0.5 * (math.log(2 * math.pi) + logvar + (z - mu).pow(2) / logvar.exp()).sum(dim=-1)


class LatentPrior(nn.Module):
    """Standard normal, or a mixture with one learnable mode per class."""

    def __init__(self, latent_dim: int, kind: str = STANDARD_NORMAL, n_modes: int = 0):
        super().__init__()
        self.kind = kind
        self.latent_dim = latent_dim
        if kind == GAUSSIAN_MIXTURE:
            self.mode_means = nn.Parameter(torch.randn(n_modes, latent_dim))
            self.mode_logvars = nn.Parameter(torch.zeros(n_modes, latent_dim))
        self.known_classes: set[int] = set()

    @property
    def is_mixture(self) -> bool:
        return self.kind == GAUSSIAN_MIXTURE

    def kl(self, mu, logvar, z=None, y=None) -> torch.Tensor:
        """Per-sample KL term.

        Standard normal: closed form. Mixture with labels: closed form against
        each sample's own class mode. Mixture without labels: single-sample
        Monte Carlo ``log q(z|x) - log p(z)`` at the provided draw ``z``.
        """
        if not self.is_mixture:
            return gaussian_kl(mu, logvar)
        if y is not None:
            return gaussian_kl(mu, logvar, self.mode_means[y], self.mode_logvars[y].clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP))
        if z is None:
            raise ValueError("Monte Carlo mixture KL needs a latent draw")
        known = sorted(self.known_classes) or list(range(self.mode_means.shape[0]))
        m = self.mode_means[known]
        lv = self.mode_logvars[known].clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)
        log_p = torch.logsumexp(diag_gaussian_logpdf(z[:, None, :], m[None], lv[None]), dim=1) - math.log(len(known))
        log_q = diag_gaussian_logpdf(z, mu, logvar)
        return log_q - log_p

    def sample(self, n: int, class_id: int | None = None, generator=None,
               classes=None) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Draw ``n`` latents; returns ``(z, class_ids)`` (class ids only for the mixture)."""
        device = next(iter(self.parameters()), torch.empty(0)).device
        eps = torch.randn(n, self.latent_dim, generator=generator, device=device)
        if not self.is_mixture:
            if class_id is not None:
                raise ConfigurationError("class-conditioned sampling requires the mixture prior")
            return eps, None
        pool = sorted(self.known_classes) if classes is None else [int(c) for c in classes]
        if class_id is not None:
            if class_id not in self.known_classes:
                raise ConfigurationError(f"no mixture mode registered for class {class_id}")
            ids = torch.full((n,), int(class_id), dtype=torch.long)
        else:
            if not pool:
                raise ConfigurationError("mixture prior has no known classes to sample")
            pick = torch.randint(len(pool), (n,), generator=generator)
            ids = torch.as_tensor(pool, dtype=torch.long)[pick]
        mu = self.mode_means[ids]
        std = (0.5 * self.mode_logvars[ids].clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)).exp()
        return mu + std * eps, ids


def build_decoder(latent_dim: int, widths: list[int], out_dim: int, batch_norm: bool,
                  activation: str) -> tuple[nn.ModuleList, nn.Linear]:
    dims = [latent_dim, *widths]
    hidden = nn.ModuleList(make_block(a, b, batch_norm, activation, 0.0) for a, b in zip(dims[:-1], dims[1:]))
    return hidden, nn.Linear(dims[-1], out_dim)


class VAEModel(nn.Module):
    """Encoder mirrors the classifier trunk; decoder is its mirror image."""

    def __init__(self, config: VAEConfig):
        super().__init__()
        self.config = config
        widths = [config.input_dim, *config.hidden_widths]
        self.encoder = nn.ModuleList(
            make_block(a, b, config.use_batch_norm, config.activation, 0.0)
            for a, b in zip(widths[:-1], widths[1:])
        )
        self.to_mu = nn.Linear(widths[-1], config.latent_dim)
        self.to_logvar = nn.Linear(widths[-1], config.latent_dim)
        self.decoder, self.to_output = build_decoder(
            config.latent_dim, list(reversed(config.hidden_widths)), config.input_dim,
            config.use_batch_norm, config.activation)
        self.prior = LatentPrior(config.latent_dim, config.prior, config.n_modes)

    def encode(self, x):
        h = x
        for block in self.encoder:
            h = block(h)
        return self.to_mu(h), self.to_logvar(h).clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)

    def decode(self, z):
        """Raw decoder output (logits for boolean features)."""
        h = z
        for block in self.decoder:
            h = block(h)
        return self.to_output(h)

    def output_to_data(self, out):
        return torch.sigmoid(out) if self.config.feature_kind == BOOLEAN else out

    def forward(self, x, generator=None):
        mu, logvar = self.encode(x)
        z = reparameterize(mu, logvar, generator)
        return self.decode(z), mu, logvar, z


def reparameterize(mu, logvar, generator=None):
    eps = torch.randn(mu.shape, generator=generator, device=mu.device, dtype=mu.dtype)
    return mu + (0.5 * logvar).exp() * eps


def vae_loss(v: VAEModel, x: torch.Tensor, y: torch.Tensor | None = None,
             generator=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Batch-mean ``(reconstruction, kl)``; their sum is the negative ELBO."""
    out, mu, logvar, z = v(x, generator)
    recon = reconstruction_loss(out, x, v.config.feature_kind).mean()
    kl = v.prior.kl(mu, logvar, z=z, y=y).mean()
    return recon, kl


@torch.no_grad()
def sample_generator(v: VAEModel, n: int, class_id: int | None = None, generator=None) -> torch.Tensor:
    """Decode ``n`` prior draws into data space."""
    if n == 0:
        return torch.empty(0, v.config.input_dim)
    was_training = v.training
    v.eval()
    z, _ = v.prior.sample(n, class_id, generator)
    out = v.output_to_data(v.decode(z))
    v.train(was_training)
    return out
