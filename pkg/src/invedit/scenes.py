"""Procedural toy scenes with known, independently controllable attributes.

Every image is a single flat-colored shape (disc, square, or triangle) on a
linearly shaded background, optionally surrounded by a thin dark ring.  The
renderer is a pure function of the scene spec: no hidden randomness, 4x4
per-pixel supersampling for anti-aliasing, pixel values in [-1, 1].

Geometry conventions (all lengths are fractions of the image side):
  * pixel centers sit at (col + 0.5) / res, (row + 0.5) / res
  * disc: |p - center| <= size / 2
  * square: axis-aligned, side length = size
  * triangle: equilateral, circumradius size / 2, apex pointing up
  * ring accessory: annulus with radii [0.72, 0.80] * size (outside every
    shape kind, half-diagonal of the square is ~0.707 * size)
  * lighting: background value scaled by
    1 + 0.25 * 2 * ((u - 0.5) cos(a) + (v - 0.5) sin(a))

Attribute vector layout (fixed order, used by `index.json` and the
attribute regressor):

    [disc, square, triangle, size, hue, pos_x, pos_y, bg_hue,
     accessory, light_angle]

shape_kind is one-hot in the first three slots; light_angle is in radians.

Randomness: `sample_dataset` draws from numpy's Philox4x32-10 counter-based
generator keyed by the seed, column-wise in the field order above, so the
same (n, seed) reproduces bit-identical specs on every platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ValidationError

SHAPE_KINDS = ("disc", "square", "triangle")
VALID_RESOLUTIONS = (32, 64, 128)
ATTRIBUTE_NAMES = (
    "disc", "square", "triangle", "size", "hue",
    "pos_x", "pos_y", "bg_hue", "accessory", "light_angle",
)
# attributes that live on a circle (wrap at their period)
CIRCULAR_ATTRIBUTES = {"hue": 1.0, "bg_hue": 1.0, "light_angle": 2.0 * np.pi}

SIZE_RANGE = (0.15, 0.45)
POS_RANGE = (0.3, 0.7)

_SUPERSAMPLE = 4
_BG_SAT, _BG_VAL = 0.40, 0.70
_FG_SAT, _FG_VAL = 0.85, 0.90
_RING_RADII = (0.72, 0.80)  # fractions of `size`
_RING_RGB = (0.12, 0.12, 0.12)
_LIGHT_AMP = 0.25


@dataclass(frozen=True)
class SceneSpec:
    """Full description of one toy scene."""

    shape_kind: str
    size: float
    hue: float
    pos_x: float
    pos_y: float
    bg_hue: float
    accessory: bool
    light_angle: float

    def validate(self) -> "SceneSpec":
        if self.shape_kind not in SHAPE_KINDS:
            raise ValidationError(f"shape_kind must be one of {SHAPE_KINDS}, got {self.shape_kind!r}")
        checks = {
            "size": (self.size, SIZE_RANGE),
            "hue": (self.hue, (0.0, 1.0)),
            "pos_x": (self.pos_x, POS_RANGE),
            "pos_y": (self.pos_y, POS_RANGE),
            "bg_hue": (self.bg_hue, (0.0, 1.0)),
            "light_angle": (self.light_angle, (0.0, 2.0 * np.pi)),
        }
        for name, (value, (lo, hi)) in checks.items():
            if not np.isfinite(value):
                raise ValidationError(f"{name} must be finite, got {value!r}")
            # hue-like fields are half-open, the rest inclusive
            open_upper = name in ("hue", "bg_hue", "light_angle")
            if value < lo or (value >= hi if open_upper else value > hi):
                raise ValidationError(f"{name}={value} outside [{lo}, {hi}{')' if open_upper else ']'}")
        return self

    def attributes(self) -> np.ndarray:
        """Flatten to the documented 10-entry attribute vector."""
        onehot = [float(self.shape_kind == k) for k in SHAPE_KINDS]
        return np.array(
            onehot + [self.size, self.hue, self.pos_x, self.pos_y,
                      self.bg_hue, float(self.accessory), self.light_angle],
            dtype=np.float64,
        )

    @staticmethod
    def from_attributes(vec) -> "SceneSpec":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (10,):
            raise ValidationError(f"attribute vector must have 10 entries, got shape {vec.shape}")
        kind = SHAPE_KINDS[int(np.argmax(vec[:3]))]
        return SceneSpec(
            shape_kind=kind, size=float(vec[3]), hue=float(vec[4]),
            pos_x=float(vec[5]), pos_y=float(vec[6]), bg_hue=float(vec[7]),
            accessory=bool(vec[8] >= 0.5), light_angle=float(vec[9]),
        )


def _hsv_to_rgb(h, s, v):
    """Vectorized HSV -> RGB, same piecewise formula as colorsys."""
    h = np.asarray(h, dtype=np.float64)
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    v_ = np.broadcast_to(np.float64(v), h.shape)
    p = np.broadcast_to(p, h.shape) if np.ndim(p) == 0 else p
    r = np.choose(i, [v_, q, p, p, t, v_])
    g = np.choose(i, [t, v_, v_, q, p, p])
    b = np.choose(i, [p, p, t, v_, v_, q])
    return np.stack([r, g, b], axis=0)


def _subsample_grid(resolution: int):
    """Sub-pixel sample coordinates (u horizontal, v vertical), shape (S*res,)."""
    n = resolution * _SUPERSAMPLE
    return (np.arange(n, dtype=np.float64) + 0.5) / n


def _shape_inside(spec: SceneSpec, u, v):
    """Boolean inside-the-shape test at coordinate arrays u (x) and v (y)."""
    dx = u - spec.pos_x
    dy = v - spec.pos_y
    if spec.shape_kind == "disc":
        return dx * dx + dy * dy <= (spec.size / 2.0) ** 2
    if spec.shape_kind == "square":
        half = spec.size / 2.0
        return np.maximum(np.abs(dx), np.abs(dy)) <= half
    # equilateral triangle, apex up; v grows downward, so the winding
    # apex -> right -> left keeps the interior on the positive-cross side
    r = spec.size / 2.0
    apex = (0.0, -r)
    left = (-r * np.sqrt(3.0) / 2.0, r / 2.0)
    right = (r * np.sqrt(3.0) / 2.0, r / 2.0)
    inside = np.ones(np.broadcast(dx, dy).shape, dtype=bool)
    for (x0, y0), (x1, y1) in ((apex, right), (right, left), (left, apex)):
        cross = (x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0)
        inside &= cross >= 0.0
    return inside


def _ring_inside(spec: SceneSpec, u, v):
    dx = u - spec.pos_x
    dy = v - spec.pos_y
    d2 = dx * dx + dy * dy
    lo = (_RING_RADII[0] * spec.size) ** 2
    hi = (_RING_RADII[1] * spec.size) ** 2
    return (d2 >= lo) & (d2 <= hi)


def _downsample(mask_or_img, resolution: int):
    """Average SxS sub-sample blocks back to pixel resolution."""
    s = _SUPERSAMPLE
    a = mask_or_img.reshape(*mask_or_img.shape[:-2], resolution, s, resolution, s)
    return a.mean(axis=(-3, -1))


def _check_resolution(resolution: int):
    if resolution not in VALID_RESOLUTIONS:
        raise ValidationError(f"resolution must be one of {VALID_RESOLUTIONS}, got {resolution}")


def shape_coverage(spec: SceneSpec, resolution: int, include_ring: bool = True) -> np.ndarray:
    """Per-pixel coverage fraction of the shape (and optionally its ring)."""
    spec.validate()
    _check_resolution(resolution)
    coords = _subsample_grid(resolution)
    u = coords[None, :]
    v = coords[:, None]
    inside = _shape_inside(spec, u, v)
    if include_ring and spec.accessory:
        inside = inside | _ring_inside(spec, u, v)
    return _downsample(inside.astype(np.float64), resolution)


def render_scene(spec: SceneSpec, resolution: int) -> torch.Tensor:
    """Rasterize a spec to a (3, res, res) float32 image in [-1, 1]."""
    spec.validate()
    _check_resolution(resolution)
    coords = _subsample_grid(resolution)
    u = coords[None, :]
    v = coords[:, None]

    shade = 1.0 + _LIGHT_AMP * 2.0 * (
        (u - 0.5) * np.cos(spec.light_angle) + (v - 0.5) * np.sin(spec.light_angle)
    )
    bg = _hsv_to_rgb(np.full(shade.shape, spec.bg_hue), _BG_SAT, _BG_VAL) * shade[None]

    fg = _hsv_to_rgb(np.array(spec.hue), _FG_SAT, _FG_VAL).reshape(3, 1, 1)
    in_shape = _shape_inside(spec, u, v)
    img = np.where(in_shape[None], fg, bg)
    if spec.accessory:
        in_ring = _ring_inside(spec, u, v) & ~in_shape
        ring = np.array(_RING_RGB, dtype=np.float64).reshape(3, 1, 1)
        img = np.where(in_ring[None], ring, img)

    img = _downsample(img, resolution)
    img = img * 2.0 - 1.0
    return torch.from_numpy(np.ascontiguousarray(img)).to(torch.float32)


def sample_specs(n: int, seed: int) -> list[SceneSpec]:
    """Draw n independent specs, uniform over each field's documented range."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    gen = np.random.Generator(np.random.Philox(key=seed))
    kinds = gen.integers(0, 3, size=n)
    sizes = gen.uniform(*SIZE_RANGE, size=n)
    hues = gen.uniform(0.0, 1.0, size=n)
    pos_x = gen.uniform(*POS_RANGE, size=n)
    pos_y = gen.uniform(*POS_RANGE, size=n)
    bg_hues = gen.uniform(0.0, 1.0, size=n)
    accessories = gen.integers(0, 2, size=n)
    angles = gen.uniform(0.0, 2.0 * np.pi, size=n)
    return [
        SceneSpec(
            shape_kind=SHAPE_KINDS[int(kinds[i])], size=float(sizes[i]),
            hue=float(hues[i]), pos_x=float(pos_x[i]), pos_y=float(pos_y[i]),
            bg_hue=float(bg_hues[i]), accessory=bool(accessories[i]),
            light_angle=float(angles[i]),
        )
        for i in range(n)
    ]


def sample_dataset(n: int, seed: int, resolution: int = 64) -> list[tuple[torch.Tensor, np.ndarray]]:
    """Render n sampled scenes, returning (image, attribute-vector) pairs."""
    return [(render_scene(s, resolution), s.attributes()) for s in sample_specs(n, seed)]


class SceneDataset:
    """Pre-rendered scene collection with cached image/attribute tensors."""

    def __init__(self, n: int, seed: int, resolution: int = 64):
        self.specs = sample_specs(n, seed)
        self.resolution = resolution
        self.images = torch.stack([render_scene(s, resolution) for s in self.specs])
        self.attributes = np.stack([s.attributes() for s in self.specs])

    def __len__(self) -> int:
        return len(self.specs)

    def batch(self, indices) -> torch.Tensor:
        return self.images[torch.as_tensor(indices, dtype=torch.long)]


def export_dataset(directory, n: int, seed: int, resolution: int = 64) -> Path:
    """Write PNGs plus an `index.json` manifest mapping filename -> attributes."""
    from PIL import Image as PILImage

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index: dict[str, list[float]] = {}
    for i, spec in enumerate(sample_specs(n, seed)):
        img = render_scene(spec, resolution)
        arr = ((img.numpy().transpose(1, 2, 0) + 1.0) * 127.5).round().clip(0, 255).astype(np.uint8)
        name = f"scene_{i:05d}.png"
        PILImage.fromarray(arr).save(directory / name)
        index[name] = [float(x) for x in spec.attributes()]
    manifest = {
        "attribute_order": list(ATTRIBUTE_NAMES),
        "resolution": resolution,
        "seed": seed,
        "images": index,
    }
    path = directory / "index.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
