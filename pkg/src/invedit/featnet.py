"""Attribute-embedding network used for perceptual and identity-style losses.

A small convolutional backbone regresses the scene attributes from an image.
Its three stage outputs serve as the perceptual feature stack, and the
penultimate fully connected activation is the embedding compared by cosine
similarity in the identity loss.

Circular attributes (hue, bg_hue, light_angle) are regressed as (cos, sin)
pairs so the network never has to fit a wrap-around discontinuity; bounded
ones are min-max normalized.  Regression target layout (13 values):

    [disc, square, triangle, size_n,
     hue_cos, hue_sin, pos_x_n, pos_y_n,
     bg_cos, bg_sin, accessory, angle_cos, angle_sin]
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from . import scenes
from .errors import ValidationError

TARGET_DIM = 13
EMBED_DIM = 128


def encode_targets(attributes: np.ndarray) -> torch.Tensor:
    """Map raw 10-dim attribute vectors to the 13-dim regression targets."""
    a = np.atleast_2d(np.asarray(attributes, dtype=np.float64))
    if a.shape[1] != 10:
        raise ValidationError(f"attribute vectors must have 10 entries, got {a.shape[1]}")
    size_n = (a[:, 3] - scenes.SIZE_RANGE[0]) / (scenes.SIZE_RANGE[1] - scenes.SIZE_RANGE[0])
    pos_lo, pos_hi = scenes.POS_RANGE
    out = np.stack(
        [
            a[:, 0], a[:, 1], a[:, 2], size_n,
            np.cos(2 * np.pi * a[:, 4]), np.sin(2 * np.pi * a[:, 4]),
            (a[:, 5] - pos_lo) / (pos_hi - pos_lo),
            (a[:, 6] - pos_lo) / (pos_hi - pos_lo),
            np.cos(2 * np.pi * a[:, 7]), np.sin(2 * np.pi * a[:, 7]),
            a[:, 8],
            np.cos(a[:, 9]), np.sin(a[:, 9]),
        ],
        axis=1,
    )
    return torch.from_numpy(out).to(torch.float32)


def decode_predictions(pred: torch.Tensor) -> np.ndarray:
    """Invert `encode_targets`, returning canonical 10-dim attribute vectors."""
    p = pred.detach().cpu().numpy()
    if p.ndim == 1:
        p = p[None]
    size = p[:, 3] * (scenes.SIZE_RANGE[1] - scenes.SIZE_RANGE[0]) + scenes.SIZE_RANGE[0]
    pos_lo, pos_hi = scenes.POS_RANGE
    hue = np.arctan2(p[:, 5], p[:, 4]) / (2 * np.pi) % 1.0
    bg_hue = np.arctan2(p[:, 9], p[:, 8]) / (2 * np.pi) % 1.0
    angle = np.arctan2(p[:, 12], p[:, 11]) % (2 * np.pi)
    return np.stack(
        [
            p[:, 0], p[:, 1], p[:, 2], size, hue,
            p[:, 6] * (pos_hi - pos_lo) + pos_lo,
            p[:, 7] * (pos_hi - pos_lo) + pos_lo,
            bg_hue, p[:, 10], angle,
        ],
        axis=1,
    )


class FeatureNet(nn.Module):
    """Conv backbone with an attribute head; feature taps for perceptual loss."""

    def __init__(self, resolution: int = 64):
        super().__init__()
        self.resolution = resolution
        act = nn.LeakyReLU(0.2)
        self.stage1 = nn.Sequential(nn.Conv2d(3, 32, 3, stride=2, padding=1), act)
        self.stage2 = nn.Sequential(nn.Conv2d(32, 64, 3, stride=2, padding=1), act)
        self.stage3 = nn.Sequential(nn.Conv2d(64, 96, 3, stride=2, padding=1), act)
        flat = 96 * (resolution // 8) ** 2
        self.embed = nn.Sequential(nn.Linear(flat, EMBED_DIM), act)
        self.head = nn.Linear(EMBED_DIM, TARGET_DIM)

    def _check(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x[None]
        if x.shape[-1] != self.resolution or x.shape[-2] != self.resolution:
            raise ValidationError(
                f"expected {self.resolution}x{self.resolution} input, got {tuple(x.shape[-2:])}"
            )
        return x

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        """The three perceptual feature maps."""
        x = self._check(x)
        f1 = self.stage1(x)
        f2 = self.stage2(f1)
        f3 = self.stage3(f2)
        return [f1, f2, f3]

    def embedding(self, x: torch.Tensor) -> torch.Tensor:
        f3 = self.features(x)[-1]
        return self.embed(f3.flatten(1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.embedding(self._check(x)))

    @torch.no_grad()
    def predict_attributes(self, x: torch.Tensor) -> np.ndarray:
        """Regressed attributes decoded to the canonical 10-dim layout."""
        return decode_predictions(self.forward(self._check(x)))
