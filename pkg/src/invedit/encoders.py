"""Learned inverse maps: image -> latent code, residual -> latent maps,
and the encoder-decoder aligner that re-registers a distortion map onto a
(possibly edited) target image.

The fusion-layer gate/detail convolutions live here too: they are trained
with the consultation branch while the generator stays frozen, so the
`ConsultationBranch` container owns everything stage two touches.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ValidationError
from .generator import AdditiveFuse, FuseBlock, GeneratorConfig


def _check_resolution(x: torch.Tensor, resolution: int, what: str) -> torch.Tensor:
    squeeze = x.dim() == 3
    xb = x[None] if squeeze else x
    if xb.dim() != 4 or xb.shape[-3] != 3 or xb.shape[-2:] != (resolution, resolution):
        raise ValidationError(
            f"{what} must be 3x{resolution}x{resolution} (optionally batched), "
            f"got {tuple(x.shape)}"
        )
    return xb


class BasicEncoder(nn.Module):
    """Low-rate encoder: image -> one style vector per synthesis block."""

    def __init__(self, config: GeneratorConfig, channels=(32, 64, 96, 128)):
        super().__init__()
        self.config = config
        act = nn.LeakyReLU(0.2)
        layers = []
        in_ch = 3
        for ch in channels:
            layers += [nn.Conv2d(in_ch, ch, 3, stride=2, padding=1), act]
            in_ch = ch
        self.trunk = nn.Sequential(*layers)
        feat_res = config.resolution // 2 ** len(channels)
        feat_dim = in_ch * feat_res * feat_res
        self.heads = nn.ModuleList(
            nn.Linear(feat_dim, config.style_dim) for _ in range(config.num_blocks)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        xb = _check_resolution(x, self.config.resolution, "encoder input")
        feat = self.trunk(xb).flatten(1)
        w = torch.stack([head(feat) for head in self.heads], dim=1)
        return w[0] if squeeze else w


class ConsultEncoder(nn.Module):
    """High-rate encoder: distortion map -> one spatial map per fusion layer."""

    def __init__(self, config: GeneratorConfig, base_channels: int = 32):
        super().__init__()
        self.config = config
        self.fusion_layers = config.sorted_fusion_layers()
        act = nn.LeakyReLU(0.2)
        res = config.resolution
        target_res = {config.block_resolution(i) for i in self.fusion_layers}
        if not target_res.issubset({res // 2 ** k for k in range(1, 6)} | {res}):
            raise ValidationError("fusion layer resolutions exceed the encoder pyramid")

        self.down = nn.ModuleList()
        self.head_by_res = nn.ModuleDict()
        ch = base_channels
        in_ch = 3
        cur = res
        min_res = min(target_res)
        while cur > min_res:
            self.down.append(nn.Sequential(nn.Conv2d(in_ch, ch, 3, stride=2, padding=1), act))
            in_ch = ch
            ch = min(ch * 2, 128)
            cur //= 2
            if cur in target_res:
                self.head_by_res[str(cur)] = nn.Conv2d(
                    in_ch, config.consult_channels, 3, padding=1
                )

    def forward(self, delta: torch.Tensor) -> list[torch.Tensor]:
        squeeze = delta.dim() == 3
        xb = _check_resolution(delta, self.config.resolution, "distortion map")
        maps_by_res = {}
        feat = xb
        cur = self.config.resolution
        for stage in self.down:
            feat = stage(feat)
            cur //= 2
            if str(cur) in self.head_by_res:
                maps_by_res[cur] = self.head_by_res[str(cur)](feat)
        out = [maps_by_res[self.config.block_resolution(i)] for i in self.fusion_layers]
        return [m[0] for m in out] if squeeze else out


class DistortionAligner(nn.Module):
    """Three-level skip encoder-decoder aligning a residual to a target image.

    Input is the channel concatenation of the conditioning image and the
    observed (possibly misaligned) distortion map; output has the map's shape.
    """

    def __init__(self, resolution: int = 64, base_channels: int = 24):
        super().__init__()
        self.resolution = resolution
        act = nn.LeakyReLU(0.2)
        c1, c2, c3 = base_channels, base_channels * 2, base_channels * 4
        self.enc1 = nn.Sequential(nn.Conv2d(6, c1, 3, padding=1), act)
        self.enc2 = nn.Sequential(nn.Conv2d(c1, c2, 3, stride=2, padding=1), act)
        self.enc3 = nn.Sequential(nn.Conv2d(c2, c3, 3, stride=2, padding=1), act)
        self.mid = nn.Sequential(nn.Conv2d(c3, c3, 3, padding=1), act)
        self.dec2 = nn.Sequential(nn.Conv2d(c3 + c2, c2, 3, padding=1), act)
        self.dec1 = nn.Sequential(nn.Conv2d(c2 + c1, c1, 3, padding=1), act)
        self.out = nn.Conv2d(c1, 3, 3, padding=1)

    def forward(self, image: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
        squeeze = image.dim() == 3
        img = _check_resolution(image, self.resolution, "aligner image")
        dlt = _check_resolution(delta, self.resolution, "aligner distortion map")
        if img.shape[0] != dlt.shape[0]:
            raise ValidationError("image / distortion map batch sizes differ")
        x = torch.cat([img, dlt], dim=1)
        f1 = self.enc1(x)
        f2 = self.enc2(f1)
        f3 = self.enc3(f2)
        m = self.mid(f3)
        u2 = F.interpolate(m, scale_factor=2, mode="nearest")
        d2 = self.dec2(torch.cat([u2, f2], dim=1))
        u1 = F.interpolate(d2, scale_factor=2, mode="nearest")
        d1 = self.dec1(torch.cat([u1, f1], dim=1))
        out = self.out(d1)
        return out[0] if squeeze else out


def basic_encode(x: torch.Tensor, encoder: BasicEncoder) -> torch.Tensor:
    return encoder(x)


def consult_encode(delta: torch.Tensor, encoder: ConsultEncoder) -> list[torch.Tensor]:
    return encoder(delta)


def ada_align(image: torch.Tensor, delta: torch.Tensor, aligner: DistortionAligner) -> torch.Tensor:
    return aligner(image, delta)


class ConsultationBranch(nn.Module):
    """Everything stage two trains: map encoder, aligner, fuse convolutions."""

    def __init__(self, config: GeneratorConfig, base_channels: int = 32,
                 ada_channels: int = 24):
        super().__init__()
        self.config = config
        self.encoder = ConsultEncoder(config, base_channels=base_channels)
        self.aligner = DistortionAligner(config.resolution, base_channels=ada_channels)
        self.fusers = nn.ModuleDict(
            {
                str(i): FuseBlock(config.consult_channels, config.channels[i - 1])
                for i in config.sorted_fusion_layers()
            }
        )


class NaiveBranch(nn.Module):
    """Unrestricted high-rate path: image -> additive maps at every block."""

    def __init__(self, config: GeneratorConfig, map_channels: int = 32):
        super().__init__()
        self.config = config
        self.map_channels = map_channels
        act = nn.LeakyReLU(0.2)
        res = config.resolution
        self.stem = nn.Sequential(nn.Conv2d(3, 32, 3, padding=1), act)
        self.down = nn.ModuleList()
        in_ch = 32
        resolutions = [config.block_resolution(i) for i in range(1, config.num_blocks + 1)]
        cur = res
        while cur > min(resolutions):
            ch = min(in_ch * 2, 128)
            self.down.append(nn.Sequential(nn.Conv2d(in_ch, ch, 3, stride=2, padding=1), act))
            in_ch = ch
            cur //= 2
        self.heads = nn.ModuleDict()
        chans = {res: 32}
        c = 32
        r = res
        while r > min(resolutions):
            c = min(c * 2, 128)
            r //= 2
            chans[r] = c
        for i, block_res in enumerate(resolutions, start=1):
            self.heads[str(i)] = nn.Conv2d(chans[block_res], map_channels, 3, padding=1)
        self.fusers = nn.ModuleDict(
            {
                str(i): AdditiveFuse(map_channels, config.channels[i - 1])
                for i in range(1, config.num_blocks + 1)
            }
        )
        self.all_layers = tuple(range(1, config.num_blocks + 1))

    def skip_maps(self, x: torch.Tensor) -> list[torch.Tensor]:
        squeeze = x.dim() == 3
        xb = _check_resolution(x, self.config.resolution, "skip encoder input")
        feats = {self.config.resolution: self.stem(xb)}
        feat = feats[self.config.resolution]
        cur = self.config.resolution
        for stage in self.down:
            feat = stage(feat)
            cur //= 2
            feats[cur] = feat
        out = []
        for i in self.all_layers:
            block_res = self.config.block_resolution(i)
            out.append(self.heads[str(i)](feats[block_res]))
        return [m[0] for m in out] if squeeze else out
