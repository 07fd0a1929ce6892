import numpy as np
import pytest
import torch

from invedit.generator import Generator, GeneratorConfig


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)


@pytest.fixture
def tiny_config():
    # 3 blocks: 4 -> 8 -> 16, small channels; fast enough for gradient checks
    return GeneratorConfig(
        num_blocks=3, style_dim=8, base_resolution=4,
        channels=(16, 12, 8), fusion_layers=(2,), consult_channels=6,
    )


@pytest.fixture
def tiny_generator(tiny_config):
    torch.manual_seed(3)
    return Generator(tiny_config)


def finite_difference(fn, tensor, index, step):
    """Central finite difference of scalar fn at one coordinate of tensor."""
    with torch.no_grad():
        plus = tensor.clone()
        plus.view(-1)[index] += step
        minus = tensor.clone()
        minus.view(-1)[index] -= step
        return (fn(plus) - fn(minus)) / (2.0 * step)


def assert_grad_matches(fn, tensor, rel_tol=1e-3, step=1e-3, indices=None, atol=1e-8):
    """Compare autograd against central differences at a few coordinates."""
    leaf = tensor.detach().clone().requires_grad_(True)
    value = fn(leaf)
    value.backward()
    grad = leaf.grad.view(-1)
    n = tensor.numel()
    if indices is None:
        indices = np.linspace(0, n - 1, num=min(10, n), dtype=int)
    for idx in indices:
        fd = float(finite_difference(lambda t: float(fn(t)), tensor.detach(), int(idx), step))
        ag = float(grad[int(idx)])
        denom = max(abs(fd), abs(ag), atol)
        assert abs(fd - ag) / denom <= rel_tol, (
            f"gradient mismatch at {idx}: autograd {ag} vs finite diff {fd}"
        )
