"""Distortion-map arithmetic and the self-supervised alignment data pipeline.

A distortion map is the signed residual between a source image and its
low-rate reconstruction.  To train the aligner without labeled misaligned
pairs, the true residual is warped by a random perspective transform; the
warped copy plays the observed (misaligned) map and the original is the
alignment target.

Perspective parameters are the 8 corner displacements of the unit square
(fractions of the image side, each within +/-0.1), drawn from the same
Philox4x32-10 counter-based generator documented in `scenes`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ValidationError

MAX_CORNER_SHIFT = 0.1


@dataclass(frozen=True)
class PerspectiveParams:
    """Corner displacements (dx0, dy0) .. (dx3, dy3) for TL, TR, BR, BL."""

    displacements: tuple

    def __post_init__(self):
        d = tuple(float(v) for v in self.displacements)
        if len(d) != 8:
            raise ValidationError(f"expected 8 corner displacements, got {len(d)}")
        for v in d:
            if not np.isfinite(v) or abs(v) > MAX_CORNER_SHIFT:
                raise ValidationError(f"corner displacement {v} outside [-{MAX_CORNER_SHIFT}, {MAX_CORNER_SHIFT}]")
        object.__setattr__(self, "displacements", d)

    @property
    def is_identity(self) -> bool:
        return all(v == 0.0 for v in self.displacements)


_UNIT_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def sample_perspective(seed: int) -> PerspectiveParams:
    """Uniform corner displacements in [-0.1, 0.1], Philox keyed by seed."""
    gen = np.random.Generator(np.random.Philox(key=seed))
    return PerspectiveParams(tuple(gen.uniform(-MAX_CORNER_SHIFT, MAX_CORNER_SHIFT, size=8)))


def distortion_map(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Signed residual x - x_hat."""
    if x.shape != x_hat.shape:
        raise ValidationError(f"image shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return x - x_hat


def alignment_loss(delta_hat: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between two distortion maps."""
    if delta_hat.shape != delta.shape:
        raise ValidationError(f"map shapes differ: {tuple(delta_hat.shape)} vs {tuple(delta.shape)}")
    return (delta_hat - delta).abs().mean()


def perspective_matrix(params: PerspectiveParams) -> np.ndarray:
    """3x3 homography taking unit-square corners to their displaced positions.

    Solved as the standard 8-unknown direct linear system with h22 fixed
    to 1, in float64.  Raises for degenerate (non-invertible) corner sets.
    """
    if params.is_identity:
        return np.eye(3)
    src = _UNIT_CORNERS
    d = np.asarray(params.displacements, dtype=np.float64).reshape(4, 2)
    dst = src + d
    rows = []
    rhs = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.extend([u, v])
    a = np.array(rows, dtype=np.float64)
    b = np.array(rhs, dtype=np.float64)
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"degenerate corner configuration: {exc}") from exc
    mat = np.append(h, 1.0).reshape(3, 3)
    if abs(np.linalg.det(mat)) < 1e-9:
        raise ValidationError("degenerate corner configuration: homography not invertible")
    return mat


def perspective_warp(delta: torch.Tensor, params: PerspectiveParams) -> torch.Tensor:
    """Resample a map through the corner homography (bilinear, zero fill).

    Output pixel p takes the value of the input at H^-1(p); pixels mapping
    outside the input support are 0.  Zero displacements reproduce the
    input exactly because the identity homography maps the grid to itself.
    """
    squeeze = delta.dim() == 3
    maps = delta[None] if squeeze else delta
    if maps.dim() != 4:
        raise ValidationError(f"expected CHW or BCHW map, got {delta.dim()} dims")
    h_px, w_px = maps.shape[-2:]

    hinv = np.linalg.inv(perspective_matrix(params))
    # pixel centers in unit coordinates
    us = (np.arange(w_px, dtype=np.float64) + 0.5) / w_px
    vs = (np.arange(h_px, dtype=np.float64) + 0.5) / h_px
    uu, vv = np.meshgrid(us, vs)
    denom = hinv[2, 0] * uu + hinv[2, 1] * vv + hinv[2, 2]
    src_u = (hinv[0, 0] * uu + hinv[0, 1] * vv + hinv[0, 2]) / denom
    src_v = (hinv[1, 0] * uu + hinv[1, 1] * vv + hinv[1, 2]) / denom

    # fractional source pixel indices
    sx = src_u * w_px - 0.5
    sy = src_v * h_px - 0.5
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = torch.from_numpy(sx - x0).to(maps.dtype)
    fy = torch.from_numpy(sy - y0).to(maps.dtype)

    def gather(ix, iy):
        valid = (ix >= 0) & (ix < w_px) & (iy >= 0) & (iy < h_px)
        ixc = np.clip(ix, 0, w_px - 1)
        iyc = np.clip(iy, 0, h_px - 1)
        flat = torch.from_numpy(iyc * w_px + ixc).reshape(-1)
        vals = maps.reshape(*maps.shape[:2], -1)[..., flat].reshape(maps.shape)
        return vals * torch.from_numpy(valid).to(maps.dtype)

    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    out = (
        gather(x0, y0) * w00
        + gather(x0 + 1, y0) * w10
        + gather(x0, y0 + 1) * w01
        + gather(x0 + 1, y0 + 1) * w11
    )
    return out[0] if squeeze else out


def make_ada_sample(x: torch.Tensor, x_hat_o: torch.Tensor, seed: int):
    """Build one self-supervised alignment sample.

    Returns (target image, warped residual, true residual): the aligner's
    input pair is (image, warped residual) and its target is the true one.
    """
    delta = distortion_map(x, x_hat_o)
    warped = perspective_warp(delta, sample_perspective(seed))
    return x_hat_o, warped, delta
