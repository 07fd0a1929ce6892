"""Toy scene generator tests, checked against a scalar scanline rasterizer."""

import colorsys
import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from invedit.errors import ValidationError
from invedit.scenes import (
    ATTRIBUTE_NAMES,
    SceneSpec,
    export_dataset,
    render_scene,
    sample_dataset,
    sample_specs,
    shape_coverage,
)

SUPER = 4
BG_SAT, BG_VAL = 0.40, 0.70
FG_SAT, FG_VAL = 0.85, 0.90
RING_RGB = (0.12, 0.12, 0.12)
RING_RADII = (0.72, 0.80)
LIGHT_AMP = 0.25


def point_in_shape(spec, u, v):
    dx, dy = u - spec.pos_x, v - spec.pos_y
    if spec.shape_kind == "disc":
        return dx * dx + dy * dy <= (spec.size / 2.0) ** 2
    if spec.shape_kind == "square":
        return max(abs(dx), abs(dy)) <= spec.size / 2.0
    r = spec.size / 2.0
    apex = (0.0, -r)
    left = (-r * math.sqrt(3.0) / 2.0, r / 2.0)
    right = (r * math.sqrt(3.0) / 2.0, r / 2.0)
    for (x0, y0), (x1, y1) in ((apex, right), (right, left), (left, apex)):
        if (x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0) < 0.0:
            return False
    return True


def point_in_ring(spec, u, v):
    dx, dy = u - spec.pos_x, v - spec.pos_y
    d2 = dx * dx + dy * dy
    return (RING_RADII[0] * spec.size) ** 2 <= d2 <= (RING_RADII[1] * spec.size) ** 2


def oracle_point_color(spec, u, v):
    if point_in_shape(spec, u, v):
        return colorsys.hsv_to_rgb(spec.hue, FG_SAT, FG_VAL)
    if spec.accessory and point_in_ring(spec, u, v):
        return RING_RGB
    shade = 1.0 + LIGHT_AMP * 2.0 * (
        (u - 0.5) * math.cos(spec.light_angle) + (v - 0.5) * math.sin(spec.light_angle)
    )
    r, g, b = colorsys.hsv_to_rgb(spec.bg_hue, BG_SAT, BG_VAL)
    return (r * shade, g * shade, b * shade)


def oracle_render(spec, res):
    """Brute-force per-pixel, per-subsample rasterization in scalar Python."""
    img = np.zeros((3, res, res))
    for row in range(res):
        for col in range(res):
            acc = np.zeros(3)
            for sr in range(SUPER):
                for sc in range(SUPER):
                    v = (row * SUPER + sr + 0.5) / (res * SUPER)
                    u = (col * SUPER + sc + 0.5) / (res * SUPER)
                    acc += oracle_point_color(spec, u, v)
            img[:, row, col] = acc / (SUPER * SUPER)
    return img * 2.0 - 1.0


def oracle_shape_pixels(spec, res):
    count = 0.0
    for row in range(res):
        for col in range(res):
            for sr in range(SUPER):
                for sc in range(SUPER):
                    v = (row * SUPER + sr + 0.5) / (res * SUPER)
                    u = (col * SUPER + sc + 0.5) / (res * SUPER)
                    count += point_in_shape(spec, u, v)
    return count / (SUPER * SUPER)


SPECS = [
    SceneSpec("disc", 0.3, 0.13, 0.45, 0.55, 0.62, True, 1.2),
    SceneSpec("square", 0.22, 0.83, 0.6, 0.4, 0.05, False, 4.0),
    SceneSpec("triangle", 0.4, 0.5, 0.5, 0.5, 0.33, True, 0.0),
]


@pytest.mark.parametrize("spec", SPECS)
def test_render_matches_scanline_oracle(spec):
    got = render_scene(spec, 32).double().numpy()
    want = oracle_render(spec, 32)
    assert np.allclose(got, want, atol=1e-6)


def test_minimum_size_square_area_matches_oracle():
    spec = SceneSpec("square", 0.15, 0.5, 0.5, 0.5, 0.1, False, 0.0)
    cover = shape_coverage(spec, 64, include_ring=False)
    oracle_area = oracle_shape_pixels(spec, 64)
    assert abs(cover.sum() - oracle_area) < 1e-9
    # a square of side 0.15 covers about (0.15 * 64)^2 pixels
    assert abs(cover.sum() - (0.15 * 64) ** 2) < 0.15 * 64 * 2


def test_render_deterministic():
    spec = SPECS[0]
    a = render_scene(spec, 64)
    b = render_scene(spec, 64)
    assert torch.equal(a, b)


def test_hue_rotated_by_zero_is_identity():
    spec = SPECS[1]
    rotated = SceneSpec(**{**spec.__dict__, "hue": spec.hue + 0.0})
    assert torch.equal(render_scene(spec, 64), render_scene(rotated, 64))


def test_pixel_range():
    for spec in SPECS:
        img = render_scene(spec, 64)
        assert img.min() >= -1.0 and img.max() <= 1.0


@pytest.mark.parametrize(
    "field,value",
    [("size", 0.5), ("size", 0.1), ("hue", 1.0), ("pos_x", 0.2),
     ("pos_y", 0.95), ("bg_hue", -0.1), ("light_angle", 7.0)],
)
def test_out_of_range_field_names_the_field(field, value):
    spec = SceneSpec(**{**SPECS[0].__dict__, field: value})
    with pytest.raises(ValidationError, match=field):
        render_scene(spec, 64)


def test_bad_resolution_rejected():
    with pytest.raises(ValidationError, match="resolution"):
        render_scene(SPECS[0], 48)


@settings(max_examples=20, deadline=None)
@given(
    kind=st.sampled_from(["disc", "square", "triangle"]),
    small=st.floats(0.15, 0.44),
    bump=st.floats(0.001, 0.01),
)
def test_size_monotonicity(kind, small, bump):
    base = dict(SPECS[0].__dict__)
    base["shape_kind"] = kind
    lo = SceneSpec(**{**base, "size": small})
    hi = SceneSpec(**{**base, "size": min(small + bump, 0.45)})
    assert shape_coverage(hi, 32, include_ring=False).sum() >= \
        shape_coverage(lo, 32, include_ring=False).sum()


def test_sample_dataset_deterministic():
    a = sample_dataset(5, seed=7)
    b = sample_dataset(5, seed=7)
    for (img_a, attr_a), (img_b, attr_b) in zip(a, b):
        assert torch.equal(img_a, img_b)
        assert np.array_equal(attr_a, attr_b)


def test_sample_dataset_size_marginal():
    specs = sample_specs(1000, seed=1)
    sizes = np.array([s.size for s in specs])
    assert abs(sizes.mean() - 0.30) < 0.02


def test_sample_dataset_rejects_empty():
    with pytest.raises(ValidationError):
        sample_dataset(0, seed=1)


def test_attribute_roundtrip():
    for spec in sample_specs(20, seed=3):
        vec = spec.attributes()
        assert vec.shape == (10,)
        assert np.isfinite(vec).all()
        back = SceneSpec.from_attributes(vec)
        assert back == spec


def test_export_dataset(tmp_path):
    path = export_dataset(tmp_path / "data", n=4, seed=2, resolution=32)
    manifest = json.loads(path.read_text())
    assert manifest["attribute_order"] == list(ATTRIBUTE_NAMES)
    assert len(manifest["images"]) == 4
    for name, attrs in manifest["images"].items():
        assert (tmp_path / "data" / name).exists()
        assert len(attrs) == 10
