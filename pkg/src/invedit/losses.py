"""Training losses: reconstruction, adversarial, and the combined objective.

All reductions are means so the loss weights stay resolution-independent.
The adversarial pair uses the standard non-saturating assignment computed
through softplus identities (-log sigmoid(z) == softplus(-z)) so logits far
from zero stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .distortion import alignment_loss
from .errors import ValidationError


@dataclass(frozen=True)
class LossWeights:
    lambda_per: float = 1.0
    lambda_id: float = 0.5
    lambda_adv: float = 0.05
    lambda_align: float = 1.0

    def validate(self) -> "LossWeights":
        for name in ("lambda_per", "lambda_id", "lambda_adv", "lambda_align"):
            v = getattr(self, name)
            if not (v >= 0.0 and v == v and v != float("inf")):
                raise ValidationError(f"{name} must be a finite nonnegative real, got {v}")
        return self


def _normalize_channels(feat: torch.Tensor, eps: float = 1e-10) -> torch.Tensor:
    """Unit-normalize each spatial position's channel vector."""
    norm = torch.sqrt((feat * feat).sum(dim=-3, keepdim=True) + eps)
    return feat / norm


def rec_loss(x: torch.Tensor, x_hat: torch.Tensor, featnet, weights: LossWeights):
    """Pixel + perceptual + embedding-cosine reconstruction loss.

    Returns (total, components) with components keyed l2/perceptual/id.
    """
    if x.shape != x_hat.shape:
        raise ValidationError(f"image shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    l2 = F.mse_loss(x_hat, x)

    feats_x = featnet.features(x)
    feats_hat = featnet.features(x_hat)
    perceptual = torch.stack(
        [
            F.mse_loss(_normalize_channels(fh), _normalize_channels(fx))
            for fx, fh in zip(feats_x, feats_hat)
        ]
    ).mean()

    emb_x = featnet.embedding(x)
    emb_hat = featnet.embedding(x_hat)
    ident = (1.0 - F.cosine_similarity(emb_x, emb_hat, dim=-1)).mean()

    total = l2 + weights.lambda_per * perceptual + weights.lambda_id * ident
    return total, {"l2": l2, "perceptual": perceptual, "id": ident}


def adv_losses(discriminator, x: torch.Tensor, x_hat: torch.Tensor):
    """Non-saturating discriminator/generator loss pair (L_D, L_G)."""
    logits_real = discriminator(x)
    logits_fake = discriminator(x_hat)
    loss_d = F.softplus(-logits_real).mean() + F.softplus(logits_fake).mean()
    loss_g = F.softplus(-logits_fake).mean()
    return loss_d, loss_g


def generator_adv_loss(discriminator, x_hat: torch.Tensor) -> torch.Tensor:
    """Just the generator-side term, for steps that never touch real logits."""
    return F.softplus(-discriminator(x_hat)).mean()


def r1_penalty(discriminator, x: torch.Tensor) -> torch.Tensor:
    """0.5 * E[||grad_x D(x)||^2] on real images."""
    x = x.detach().requires_grad_(True)
    logits = discriminator(x)
    (grads,) = torch.autograd.grad(logits.sum(), x, create_graph=True)
    return 0.5 * grads.pow(2).sum(dim=(1, 2, 3)).mean()


def total_loss(x, x_hat, delta_hat, delta, discriminator, featnet, weights: LossWeights):
    """Weighted sum of reconstruction, adversarial (generator side), alignment."""
    rec, components = rec_loss(x, x_hat, featnet, weights)
    total = rec
    if weights.lambda_adv > 0.0:
        components["adv"] = generator_adv_loss(discriminator, x_hat)
        total = total + weights.lambda_adv * components["adv"]
    if weights.lambda_align > 0.0:
        components["align"] = alignment_loss(delta_hat, delta)
        total = total + weights.lambda_align * components["align"]
    components["rec"] = rec
    return total, components
