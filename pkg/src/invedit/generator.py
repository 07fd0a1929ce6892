"""Style-based toy generator with gated consultation fusion.

The generator runs a fixed stack of synthesis blocks from a learned constant
input.  Each block upsamples (except the first), convolves, applies a leaky
ReLU, and renormalizes the result with a per-channel scale and bias produced
from that block's style vector (adaptive instance normalization).  Blocks
listed in ``fusion_layers`` can additionally consult a spatial latent map:
the map is turned into a sigmoid gate and an additive detail field by two
small convolutions, and the block output becomes ``gate * styled + detail``.

``fusion_mode`` selects how the styled path is computed inside fused blocks:
``adain_gated`` keeps the normal block, ``modulated_gated`` swaps in a
modulated convolution (weight demodulation instead of instance norm).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ValidationError

FUSION_MODES = ("adain_gated", "modulated_gated")


@dataclass(frozen=True)
class GeneratorConfig:
    num_blocks: int = 5
    style_dim: int = 64
    base_resolution: int = 4
    channels: tuple = (128, 128, 64, 32, 16)
    fusion_layers: tuple = (2, 3)
    fusion_mode: str = "adain_gated"
    consult_channels: int = 64
    epsilon: float = 1e-8

    def validate(self) -> "GeneratorConfig":
        if len(self.channels) != self.num_blocks:
            raise ValidationError(
                f"channels has {len(self.channels)} entries for {self.num_blocks} blocks"
            )
        if self.epsilon <= 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.fusion_mode not in FUSION_MODES:
            raise ValidationError(f"fusion_mode must be one of {FUSION_MODES}")
        bad = [i for i in self.fusion_layers if not 1 <= i <= self.num_blocks]
        if bad or len(set(self.fusion_layers)) != len(self.fusion_layers):
            raise ValidationError(f"fusion_layers must be distinct block indices in 1..{self.num_blocks}")
        return self

    @property
    def resolution(self) -> int:
        return self.base_resolution * 2 ** (self.num_blocks - 1)

    def block_resolution(self, index: int) -> int:
        """Output resolution of 1-indexed block `index`."""
        return self.base_resolution * 2 ** (index - 1)

    def sorted_fusion_layers(self) -> tuple:
        return tuple(sorted(self.fusion_layers))

    def to_dict(self) -> dict:
        return {
            "num_blocks": self.num_blocks,
            "style_dim": self.style_dim,
            "base_resolution": self.base_resolution,
            "channels": list(self.channels),
            "fusion_layers": list(self.fusion_layers),
            "fusion_mode": self.fusion_mode,
            "consult_channels": self.consult_channels,
            "epsilon": self.epsilon,
        }

    @staticmethod
    def from_dict(d: dict) -> "GeneratorConfig":
        return GeneratorConfig(
            num_blocks=int(d["num_blocks"]),
            style_dim=int(d["style_dim"]),
            base_resolution=int(d["base_resolution"]),
            channels=tuple(d["channels"]),
            fusion_layers=tuple(d["fusion_layers"]),
            fusion_mode=str(d["fusion_mode"]),
            consult_channels=int(d.get("consult_channels", 64)),
            epsilon=float(d["epsilon"]),
        ).validate()


def adain(feature: torch.Tensor, scale: torch.Tensor, bias: torch.Tensor,
          eps: float = 1e-8) -> torch.Tensor:
    """Standardize each channel over its spatial extent, then scale and shift.

    `feature` is (C, H, W) or (B, C, H, W); `scale`/`bias` are (C,) or (B, C).
    A constant channel (zero variance) comes out as pure bias.
    """
    squeeze = feature.dim() == 3
    f = feature[None] if squeeze else feature
    if f.dim() != 4:
        raise ValidationError(f"expected CHW or BCHW feature map, got {feature.dim()} dims")
    c = f.shape[1]
    s = scale[None] if scale.dim() == 1 else scale
    b = bias[None] if bias.dim() == 1 else bias
    if s.shape[-1] != c or b.shape[-1] != c:
        raise ValidationError(
            f"scale/bias length ({s.shape[-1]}/{b.shape[-1]}) must equal channel count {c}"
        )
    mean = f.mean(dim=(-2, -1), keepdim=True)
    var = f.var(dim=(-2, -1), unbiased=False, keepdim=True)
    normed = (f - mean) / torch.sqrt(var + eps)
    out = normed * s[..., None, None] + b[..., None, None]
    return out[0] if squeeze else out


class StyleBlock(nn.Module):
    """One synthesis block: (upsample) -> conv3x3 -> leaky ReLU -> AdaIN."""

    def __init__(self, in_channels: int, out_channels: int, style_dim: int,
                 upsample: bool, eps: float = 1e-8):
        super().__init__()
        self.upsample = upsample
        self.eps = eps
        self.out_channels = out_channels
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.style_scale = nn.Linear(style_dim, out_channels)
        self.style_bias = nn.Linear(style_dim, out_channels)
        # scale affine for the modulated form acts on input channels
        self.style_mod = nn.Linear(style_dim, in_channels)
        # start at scale ~1, bias ~0 so early outputs keep unit statistics
        for lin in (self.style_scale, self.style_mod):
            nn.init.normal_(lin.weight, std=0.05)
            nn.init.ones_(lin.bias)
        nn.init.normal_(self.style_bias.weight, std=0.05)
        nn.init.zeros_(self.style_bias.bias)

    def pre_style(self, feature: torch.Tensor) -> torch.Tensor:
        """The style-independent part: upsample + conv + activation."""
        squeeze = feature.dim() == 3
        x = feature[None] if squeeze else feature
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.leaky_relu(self.conv(x), 0.2)
        return x[0] if squeeze else x

    def forward(self, feature: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        if w.shape[-1] != self.style_scale.in_features:
            raise ValidationError(
                f"style vector length {w.shape[-1]} != {self.style_scale.in_features}"
            )
        x = self.pre_style(feature)
        return adain(x, self.style_scale(w), self.style_bias(w), self.eps)

    def forward_modulated(self, feature: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        """Modulated-convolution form: demodulated conv instead of AdaIN."""
        if self.upsample:
            feature = F.interpolate(feature, scale_factor=2, mode="nearest")
        squeeze = feature.dim() == 3
        x = feature[None] if squeeze else feature
        w2 = w[None] if w.dim() == 1 else w
        batch = x.shape[0]
        styles = self.style_mod(w2)  # (B, in): per-input-channel modulation
        weight = self.conv.weight[None]  # (1, out, in, k, k)
        modulated = weight * styles[:, None, :, None, None]
        demod = torch.rsqrt(modulated.pow(2).sum(dim=(2, 3, 4), keepdim=True) + self.eps)
        modulated = modulated * demod
        # grouped conv: one weight set per batch element
        x = x.reshape(1, -1, *x.shape[2:])
        kernel = modulated.reshape(-1, *modulated.shape[2:])
        out = F.conv2d(x, kernel, padding=1, groups=batch)
        out = out.reshape(batch, -1, *out.shape[2:])
        out = out + self.style_bias(w2)[..., None, None]
        out = F.leaky_relu(out, 0.2)
        return out[0] if squeeze else out


class FuseBlock(nn.Module):
    """Gate/detail convolutions for one fusion layer.

    ``gate_override``/``detail_override`` bypass the learned convolutions
    with constants, which is how the reduction identities are exercised.
    """

    def __init__(self, map_channels: int, out_channels: int, gate_bias_init: float = 4.0):
        super().__init__()
        self.gate_conv = nn.Conv2d(map_channels, out_channels, 3, padding=1)
        self.hf_conv = nn.Conv2d(map_channels, out_channels, 3, padding=1)
        # gates start nearly open and the detail field starts at zero, so a
        # freshly attached branch barely perturbs the plain generator
        nn.init.zeros_(self.gate_conv.weight)
        nn.init.constant_(self.gate_conv.bias, gate_bias_init)
        nn.init.zeros_(self.hf_conv.weight)
        nn.init.zeros_(self.hf_conv.bias)
        self.gate_override: float | None = None
        self.detail_override: float | None = None

    def gate(self, latent_map: torch.Tensor) -> torch.Tensor:
        if self.gate_override is not None:
            shape = list(latent_map.shape)
            shape[-3] = self.gate_conv.out_channels
            return torch.full(shape, float(self.gate_override),
                              dtype=latent_map.dtype, device=latent_map.device)
        return torch.sigmoid(self.gate_conv(latent_map))

    def detail(self, latent_map: torch.Tensor) -> torch.Tensor:
        if self.detail_override is not None:
            shape = list(latent_map.shape)
            shape[-3] = self.hf_conv.out_channels
            return torch.full(shape, float(self.detail_override),
                              dtype=latent_map.dtype, device=latent_map.device)
        return self.hf_conv(latent_map)

    def forward(self, styled: torch.Tensor, latent_map: torch.Tensor) -> torch.Tensor:
        if latent_map.shape[-2:] != styled.shape[-2:]:
            raise ValidationError(
                f"latent map spatial size {tuple(latent_map.shape[-2:])} "
                f"!= block output size {tuple(styled.shape[-2:])}"
            )
        return self.gate(latent_map) * styled + self.detail(latent_map)


class AdditiveFuse(nn.Module):
    """Ungated fusion (detail only), used by the naive high-rate baseline."""

    def __init__(self, map_channels: int, out_channels: int):
        super().__init__()
        self.hf_conv = nn.Conv2d(map_channels, out_channels, 3, padding=1)
        nn.init.zeros_(self.hf_conv.weight)
        nn.init.zeros_(self.hf_conv.bias)

    def forward(self, styled: torch.Tensor, latent_map: torch.Tensor) -> torch.Tensor:
        if latent_map.shape[-2:] != styled.shape[-2:]:
            raise ValidationError(
                f"latent map spatial size {tuple(latent_map.shape[-2:])} "
                f"!= block output size {tuple(styled.shape[-2:])}"
            )
        return styled + self.hf_conv(latent_map)


def consultation_fuse(feature: torch.Tensor, w: torch.Tensor, latent_map: torch.Tensor,
                      style_block: StyleBlock, fuse_block: nn.Module,
                      mode: str = "adain_gated") -> torch.Tensor:
    """Run one fused block: gate(map) * styled(feature, w) + detail(map)."""
    if mode not in FUSION_MODES:
        raise ValidationError(f"fusion_mode must be one of {FUSION_MODES}")
    if mode == "modulated_gated":
        styled = style_block.forward_modulated(feature, w)
    else:
        styled = style_block(feature, w)
    return fuse_block(styled, latent_map)


class Generator(nn.Module):
    """Frozen-at-edit-time synthesis stack (the decoder)."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.validate()
        self.config = config
        c = config.channels
        self.const = nn.Parameter(torch.randn(c[0], config.base_resolution, config.base_resolution))
        blocks = []
        for i in range(config.num_blocks):
            in_ch = c[0] if i == 0 else c[i - 1]
            blocks.append(StyleBlock(in_ch, c[i], config.style_dim,
                                     upsample=i > 0, eps=config.epsilon))
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = nn.Conv2d(c[-1], 3, 1)

    def _check_latent(self, w: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        squeeze = w.dim() == 2
        wb = w[None] if squeeze else w
        if wb.dim() != 3 or wb.shape[-2] != cfg.num_blocks or wb.shape[-1] != cfg.style_dim:
            raise ValidationError(
                f"latent code must be ({cfg.num_blocks}, {cfg.style_dim}) or batched, "
                f"got {tuple(w.shape)}"
            )
        return wb

    def forward(self, w: torch.Tensor, latent_maps=None, fusers=None,
                fusion_layers=None) -> torch.Tensor:
        """Raw RGB synthesis; `generate`/`generate_with_consultation` clamp it.

        `latent_maps` is a list aligned with sorted `fusion_layers` (block
        indices, 1-based); `fusers` maps str(block index) -> fuse module.
        """
        squeeze = w.dim() == 2
        wb = self._check_latent(w)
        batch = wb.shape[0]
        layer_maps = {}
        if latent_maps is not None:
            layers = tuple(sorted(fusion_layers if fusion_layers is not None
                                  else self.config.fusion_layers))
            if len(latent_maps) != len(layers):
                raise ValidationError(
                    f"{len(latent_maps)} latent maps for {len(layers)} fusion layers"
                )
            for idx, m in zip(layers, latent_maps):
                layer_maps[idx] = m[None] if m.dim() == 3 else m

        feat = self.const[None].expand(batch, -1, -1, -1)
        for i, block in enumerate(self.blocks, start=1):
            w_i = wb[:, i - 1]
            if i in layer_maps:
                feat = consultation_fuse(feat, w_i, layer_maps[i], block,
                                         fusers[str(i)], self.config.fusion_mode)
            else:
                feat = block(feat, w_i)
        rgb = self.to_rgb(feat)
        return rgb[0] if squeeze else rgb

    def generate(self, w: torch.Tensor) -> torch.Tensor:
        """Plain synthesis from the low-rate code, clamped to [-1, 1]."""
        return self.forward(w).clamp(-1.0, 1.0)

    def generate_with_consultation(self, w: torch.Tensor, latent_maps, fusers,
                                   fusion_layers=None) -> torch.Tensor:
        """Synthesis with fused latent maps at the configured layers."""
        return self.forward(w, latent_maps=latent_maps, fusers=fusers,
                            fusion_layers=fusion_layers).clamp(-1.0, 1.0)


def generate(w: torch.Tensor, generator: Generator) -> torch.Tensor:
    return generator.generate(w)


def generate_with_consultation(w: torch.Tensor, latent_maps, generator: Generator,
                               fusers, fusion_layers=None) -> torch.Tensor:
    return generator.generate_with_consultation(w, latent_maps, fusers, fusion_layers)


class Discriminator(nn.Module):
    """Patch-free convolutional critic emitting one logit per image."""

    def __init__(self, resolution: int = 64, channels=(32, 64, 128, 128)):
        super().__init__()
        layers = []
        in_ch = 3
        for ch in channels:
            layers += [nn.Conv2d(in_ch, ch, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            in_ch = ch
        self.body = nn.Sequential(*layers)
        final_res = resolution // 2 ** len(channels)
        self.head = nn.Linear(in_ch * final_res * final_res, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x[None]
        return self.head(self.body(x).flatten(1)).squeeze(-1)


class MappingNetwork(nn.Module):
    """Two-layer MLP warping the Gaussian prior into style space for sampling."""

    def __init__(self, style_dim: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(style_dim, style_dim), nn.LeakyReLU(0.2),
            nn.Linear(style_dim, style_dim),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)

    def sample_latents(self, n: int, num_blocks: int, generator: torch.Generator) -> torch.Tensor:
        """Draw n codes, the same style vector broadcast across blocks."""
        z = torch.randn(n, self.net[0].in_features, generator=generator)
        w = self.forward(z)
        return w[:, None, :].expand(-1, num_blocks, -1).contiguous()
