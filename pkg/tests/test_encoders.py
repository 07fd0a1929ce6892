"""Encoder stack: shapes, determinism, and the zero-init fusion behavior."""

import pytest
import torch

from invedit.encoders import (
    BasicEncoder,
    ConsultEncoder,
    ConsultationBranch,
    DistortionAligner,
    NaiveBranch,
)
from invedit.errors import ValidationError
from invedit.generator import Generator, GeneratorConfig, adain


@pytest.fixture(scope="module")
def config():
    return GeneratorConfig()


def test_basic_encoder_shape_and_determinism(config):
    torch.manual_seed(1)
    enc = BasicEncoder(config)
    x = torch.rand(3, 64, 64) * 2 - 1
    w = enc(x)
    assert w.shape == (config.num_blocks, config.style_dim)
    assert torch.equal(w, enc(x))
    batched = enc(x[None].repeat(2, 1, 1, 1))
    assert batched.shape == (2, config.num_blocks, config.style_dim)
    assert torch.allclose(batched[0], w, atol=1e-6)


def test_basic_encoder_rejects_wrong_resolution(config):
    enc = BasicEncoder(config)
    with pytest.raises(ValidationError):
        enc(torch.rand(3, 32, 32))


def test_consult_encoder_shapes(config):
    torch.manual_seed(2)
    enc = ConsultEncoder(config)
    delta = torch.rand(3, 64, 64)
    maps = enc(delta)
    layers = config.sorted_fusion_layers()
    assert len(maps) == len(layers)
    for idx, m in zip(layers, maps):
        res = config.block_resolution(idx)
        assert m.shape == (config.consult_channels, res, res)
    again = enc(delta)
    for a, b in zip(maps, again):
        assert torch.equal(a, b)


def test_consult_encoder_rejects_wrong_resolution(config):
    enc = ConsultEncoder(config)
    with pytest.raises(ValidationError):
        enc(torch.rand(3, 16, 16))


def test_aligner_shape_and_determinism(config):
    torch.manual_seed(3)
    ada = DistortionAligner(64)
    img = torch.rand(3, 64, 64)
    delta = torch.rand(3, 64, 64)
    out = ada(img, delta)
    assert out.shape == delta.shape
    assert torch.equal(out, ada(img, delta))


def test_aligner_rejects_mismatch():
    ada = DistortionAligner(64)
    with pytest.raises(ValidationError):
        ada(torch.rand(3, 64, 64), torch.rand(3, 32, 32))


def test_zero_init_branch_gives_gate_scaled_generate(config):
    """With all fuse convs zeroed, fusion multiplies block outputs by 0.5."""
    torch.manual_seed(4)
    gen = Generator(config)
    branch = ConsultationBranch(config)
    with torch.no_grad():
        for fuse in branch.fusers.values():
            fuse.gate_conv.weight.zero_()
            fuse.gate_conv.bias.zero_()  # sigmoid(0) = 0.5 everywhere
            fuse.hf_conv.weight.zero_()
            fuse.hf_conv.bias.zero_()

    w = torch.randn(config.num_blocks, config.style_dim)
    delta = torch.zeros(3, 64, 64)
    maps = branch.encoder(delta)
    got = gen(w, latent_maps=maps, fusers=branch.fusers)

    # forward-pass oracle: replay the stack, halving fused block outputs
    feat = gen.const[None]
    layers = set(config.sorted_fusion_layers())
    for i, block in enumerate(gen.blocks, start=1):
        feat = block(feat, w[None][:, i - 1])
        if i in layers:
            feat = 0.5 * feat
    want = gen.to_rgb(feat)[0]
    assert torch.allclose(got, want, atol=1e-6)


def test_naive_branch_maps_cover_all_blocks(config):
    torch.manual_seed(5)
    branch = NaiveBranch(config)
    x = torch.rand(3, 64, 64)
    maps = branch.skip_maps(x)
    assert len(maps) == config.num_blocks
    for i, m in enumerate(maps, start=1):
        res = config.block_resolution(i)
        assert m.shape == (branch.map_channels, res, res)


def test_naive_zero_init_is_transparent(config):
    """Freshly initialized skips leave the plain generator output unchanged."""
    torch.manual_seed(6)
    gen = Generator(config)
    branch = NaiveBranch(config)
    w = torch.randn(config.num_blocks, config.style_dim)
    x = torch.rand(3, 64, 64)
    maps = branch.skip_maps(x)
    fused = gen.generate_with_consultation(w, maps, branch.fusers,
                                           fusion_layers=branch.all_layers)
    assert torch.equal(fused, gen.generate(w))


def test_adain_batch_broadcast():
    f = torch.randn(2, 3, 4, 4)
    out = adain(f, torch.ones(2, 3), torch.zeros(2, 3))
    assert out.shape == f.shape
