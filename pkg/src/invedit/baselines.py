"""Comparison backends: per-image latent optimization and the naive
high-rate skip path.

`optimize_invert` runs Adam on a per-layer latent code against the
reconstruction loss, starting from the sampling-prior mean, and keeps the
best iterate seen.  The naive backend feeds unrestricted additive latent
maps (computed from the source image) into every synthesis block; edits
still move the low-rate code, which is exactly why its edits wash out.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .editing import Direction, InversionResult, apply_edit
from .errors import ValidationError
from .losses import LossWeights, rec_loss
from .models import ModelBundle


@dataclass
class OptimizeResult:
    latent: torch.Tensor
    image: torch.Tensor
    trace: list[float]


def optimize_invert(x: torch.Tensor, generator, featnet, steps: int, lr: float,
                    init: torch.Tensor | None = None,
                    latent_mean: torch.Tensor | None = None,
                    weights: LossWeights | None = None) -> OptimizeResult:
    """Per-image gradient descent over the latent code; returns best iterate."""
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    weights = weights or LossWeights()
    if init is None:
        if latent_mean is None:
            raise ValidationError("optimize_invert needs an init code or the latent mean")
        init = latent_mean
    w = init.detach().clone().requires_grad_(True)
    opt = torch.optim.Adam([w], lr=lr)
    best_loss = float("inf")
    best_w = w.detach().clone()
    trace: list[float] = []
    for _ in range(steps):
        x_hat = generator(w).clamp(-1.0, 1.0)
        loss, _ = rec_loss(x, x_hat, featnet, weights)
        value = float(loss)
        trace.append(value)
        if value < best_loss:
            best_loss = value
            best_w = w.detach().clone()
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        best_img = generator(best_w).clamp(-1.0, 1.0)
    return OptimizeResult(latent=best_w, image=best_img, trace=trace)


@torch.no_grad()
def naive_highrate_invert(x: torch.Tensor, models: ModelBundle) -> InversionResult:
    """Inversion through the all-blocks additive skip path."""
    branch = models.require_naive()
    w = models.basic_encoder(x)
    maps = branch.skip_maps(x)
    x_hat = models.generator.generate_with_consultation(
        w, maps, branch.fusers, fusion_layers=branch.all_layers
    )
    return InversionResult(image=x_hat, latent=w, delta=x - x_hat)


@torch.no_grad()
def naive_highrate_edit(x: torch.Tensor, direction: Direction, alpha: float,
                        models: ModelBundle) -> torch.Tensor:
    """Edit on the low-rate code while the skip maps stay pinned to the source."""
    branch = models.require_naive()
    w = models.basic_encoder(x)
    maps = branch.skip_maps(x)
    w_edit = apply_edit(w, direction, alpha)
    return models.generator.generate_with_consultation(
        w_edit, maps, branch.fusers, fusion_layers=branch.all_layers
    )
