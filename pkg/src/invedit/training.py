"""Stage-wise training: feature regressor, toy GAN, basic encoder, the
consultation branch, and the naive high-rate baseline.

Stages run in that order; each freezes everything the previous ones
produced.  Losses during training are computed on the raw (pre-clamp)
synthesis output so saturated pixels keep their gradient; every public
inference path still clamps.  With a fixed seed and config, a stage
reproduces its loss trajectory exactly on one platform.
"""

from __future__ import annotations

import copy
import json
import zlib
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint, config_hash, pack_modules, save_checkpoint, unpack_into
from .distortion import perspective_warp, sample_perspective
from .encoders import BasicEncoder, ConsultationBranch, NaiveBranch
from .errors import ConfigError, ValidationError
from .featnet import FeatureNet, encode_targets
from .generator import Discriminator, Generator, GeneratorConfig, MappingNetwork
from .losses import LossWeights, adv_losses, r1_penalty, rec_loss, total_loss
from .scenes import SceneDataset

STAGES = ("featnet", "gan", "encoder", "consult", "naive")


@dataclass
class TrainConfig:
    stage: str
    steps: int = 1000
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    checkpoint_dir: str = "runs/default"
    log_every: int = 50
    eval_every: int = 0  # 0 disables held-out evaluation during training
    dataset_n: int = 4096
    dataset_seed: int = 100
    heldout_n: int = 256
    heldout_seed: int = 900
    resolution: int = 64
    weights: LossWeights = dc_field(default_factory=LossWeights)
    generator: GeneratorConfig = dc_field(default_factory=GeneratorConfig)
    # gan stage
    r1_weight: float = 1.0
    r1_interval: int = 16
    ema_decay: float = 0.999
    # consult stage
    disc_finetune: bool = True

    def validate(self) -> "TrainConfig":
        if self.stage not in STAGES:
            raise ValidationError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.steps < 0:
            raise ValidationError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        self.weights.validate()
        self.generator.validate()
        return self

    def snapshot(self) -> dict:
        return {
            "stage": self.stage,
            "steps": self.steps,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "seed": self.seed,
            "dataset": {"n": self.dataset_n, "seed": self.dataset_seed,
                        "resolution": self.resolution},
        }

    @staticmethod
    def from_dict(raw: dict, stage: str | None = None) -> "TrainConfig":
        raw = dict(raw)
        weights = LossWeights(**raw.pop("weights", {}))
        gen_raw = raw.pop("generator", None)
        gen_cfg = GeneratorConfig.from_dict(gen_raw) if gen_raw else GeneratorConfig()
        ds = raw.pop("dataset", {})
        try:
            cfg = TrainConfig(
                stage=stage or raw.pop("stage"),
                weights=weights,
                generator=gen_cfg,
                dataset_n=int(ds.get("n", 4096)),
                dataset_seed=int(ds.get("seed", 100)),
                heldout_n=int(ds.get("heldout_n", 256)),
                heldout_seed=int(ds.get("heldout_seed", 900)),
                resolution=int(ds.get("resolution", 64)),
                **{k: v for k, v in raw.items() if k != "stage"},
            )
        except (TypeError, KeyError) as exc:
            raise ValidationError(f"bad training config: {exc}") from exc
        return cfg.validate()


def load_train_config(path, stage: str | None = None, overrides: dict | None = None) -> TrainConfig:
    """Parse a stage TOML file, optionally applying CLI overrides."""
    import tomli

    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ValidationError(f"malformed TOML in {path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    return TrainConfig.from_dict(raw, stage=stage)


def _rng(seed: int, tag: str) -> np.random.Generator:
    key = np.random.SeedSequence((seed, zlib.crc32(tag.encode())))
    return np.random.Generator(np.random.Philox(key))


def _check_compatible(ckpt: Checkpoint, cfg: TrainConfig, what: str) -> None:
    theirs = ckpt.config.get("generator")
    if theirs is None or config_hash(theirs) != config_hash(cfg.generator.to_dict()):
        raise ValidationError(
            f"{what} checkpoint was trained with an incompatible generator config"
        )


def _scalar(value) -> float:
    return float(value.detach()) if torch.is_tensor(value) else float(value)


class _JsonlLogger:
    def __init__(self, path: Path):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "w")

    def write(self, **fields):
        self._fh.write(json.dumps(fields) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def _adam(params, cfg: TrainConfig, lr: float | None = None):
    return torch.optim.Adam(params, lr=cfg.learning_rate if lr is None else lr,
                            betas=(cfg.beta1, cfg.beta2))


def _freeze(module: torch.nn.Module) -> torch.nn.Module:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def _ema_update(ema: torch.nn.Module, live: torch.nn.Module, decay: float) -> None:
    with torch.no_grad():
        for pe, pl in zip(ema.parameters(), live.parameters()):
            pe.mul_(decay).add_(pl, alpha=1.0 - decay)
        for be, bl in zip(ema.buffers(), live.buffers()):
            be.copy_(bl)


def train_featnet(cfg: TrainConfig) -> Checkpoint:
    """Supervised attribute regression; the frozen feature stack for losses."""
    cfg.validate()
    torch.manual_seed(cfg.seed)
    ds = SceneDataset(cfg.dataset_n, cfg.dataset_seed, cfg.resolution)
    targets = encode_targets(ds.attributes)
    net = FeatureNet(cfg.resolution)
    opt = _adam(net.parameters(), cfg)
    batches = _rng(cfg.seed, "featnet-batches")
    log = _JsonlLogger(Path(cfg.checkpoint_dir) / "featnet_log.jsonl")
    for step in range(cfg.steps):
        idx = batches.integers(0, len(ds), size=cfg.batch_size)
        x = ds.batch(idx)
        y = targets[torch.as_tensor(idx, dtype=torch.long)]
        loss = torch.nn.functional.mse_loss(net(x), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            log.write(step=step, loss=_scalar(loss))
    log.close()
    ckpt = pack_modules("featnet", cfg.steps,
                        {"generator": cfg.generator.to_dict(), "train": cfg.snapshot()},
                        featnet=net)
    save_checkpoint(ckpt, Path(cfg.checkpoint_dir) / "featnet")
    return ckpt


def train_gan(cfg: TrainConfig) -> Checkpoint:
    """Adversarial training of the toy generator with lazy R1 and EMA."""
    cfg.validate()
    torch.manual_seed(cfg.seed)
    ds = SceneDataset(cfg.dataset_n, cfg.dataset_seed, cfg.resolution)
    gen_cfg = cfg.generator
    G = Generator(gen_cfg)
    M = MappingNetwork(gen_cfg.style_dim)
    D = Discriminator(cfg.resolution)
    G_ema = copy.deepcopy(G)
    M_ema = copy.deepcopy(M)
    opt_g = _adam(list(G.parameters()) + list(M.parameters()), cfg)
    opt_d = _adam(D.parameters(), cfg)
    batches = _rng(cfg.seed, "gan-batches")
    zgen = torch.Generator().manual_seed(cfg.seed + 1)
    log = _JsonlLogger(Path(cfg.checkpoint_dir) / "gan_log.jsonl")

    for step in range(cfg.steps):
        idx = batches.integers(0, len(ds), size=cfg.batch_size)
        real = ds.batch(idx)

        w = M.sample_latents(cfg.batch_size, gen_cfg.num_blocks, zgen)
        fake = G(w)
        loss_d, _ = adv_losses(D, real, fake.detach())
        opt_d.zero_grad()
        loss_d.backward()
        r1_val = 0.0
        if cfg.r1_weight > 0 and step % cfg.r1_interval == 0:
            r1 = r1_penalty(D, real) * cfg.r1_weight * cfg.r1_interval
            r1.backward()
            r1_val = float(r1.detach())
        opt_d.step()

        w2 = M.sample_latents(cfg.batch_size, gen_cfg.num_blocks, zgen)
        fake2 = G(w2)
        loss_g = torch.nn.functional.softplus(-D(fake2)).mean()
        opt_g.zero_grad()
        loss_g.backward()
        opt_g.step()
        _ema_update(G_ema, G, cfg.ema_decay)
        _ema_update(M_ema, M, cfg.ema_decay)

        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            log.write(step=step, loss_d=_scalar(loss_d), loss_g=_scalar(loss_g), r1=r1_val)
    log.close()

    with torch.no_grad():
        probe = torch.Generator().manual_seed(cfg.seed + 2)
        latents = M_ema.sample_latents(4096, gen_cfg.num_blocks, probe)
        latent_mean = latents.mean(dim=0)

    ckpt = pack_modules("gan", cfg.steps,
                        {"generator": gen_cfg.to_dict(), "train": cfg.snapshot()},
                        generator=G, mapping=M, discriminator=D,
                        generator_ema=G_ema, mapping_ema=M_ema,
                        latent_mean=latent_mean)
    save_checkpoint(ckpt, Path(cfg.checkpoint_dir) / "gan")
    return ckpt


def _load_frozen_generator(gan_ckpt: Checkpoint, cfg: TrainConfig) -> Generator:
    _check_compatible(gan_ckpt, cfg, "gan")
    G = Generator(cfg.generator)
    unpack_into(gan_ckpt, generator_ema=G)
    return _freeze(G)


def _load_frozen_featnet(featnet_ckpt: Checkpoint, cfg: TrainConfig) -> FeatureNet:
    _check_compatible(featnet_ckpt, cfg, "featnet")
    net = FeatureNet(cfg.resolution)
    unpack_into(featnet_ckpt, featnet=net)
    return _freeze(net)


def _heldout_mae(G: Generator, encoder: BasicEncoder, images: torch.Tensor) -> float:
    with torch.no_grad():
        rec = G.generate(encoder(images))
        return float((rec - images).abs().mean())


def train_encoder(cfg: TrainConfig, gan_ckpt: Checkpoint,
                  featnet_ckpt: Checkpoint) -> Checkpoint:
    """Reconstruction-only training of the low-rate encoder, generator frozen."""
    cfg.validate()
    torch.manual_seed(cfg.seed)
    ds = SceneDataset(cfg.dataset_n, cfg.dataset_seed, cfg.resolution)
    heldout = SceneDataset(cfg.heldout_n, cfg.heldout_seed, cfg.resolution)
    G = _load_frozen_generator(gan_ckpt, cfg)
    featnet = _load_frozen_featnet(featnet_ckpt, cfg)
    encoder = BasicEncoder(cfg.generator)
    opt = _adam(encoder.parameters(), cfg)
    batches = _rng(cfg.seed, "encoder-batches")
    log = _JsonlLogger(Path(cfg.checkpoint_dir) / "encoder_log.jsonl")

    for step in range(cfg.steps):
        idx = batches.integers(0, len(ds), size=cfg.batch_size)
        x = ds.batch(idx)
        x_hat = G(encoder(x))
        loss, comps = rec_loss(x, x_hat, featnet, cfg.weights)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            fields = {"step": step, "loss": _scalar(loss),
                      **{k: _scalar(v) for k, v in comps.items()}}
            if cfg.eval_every and step % cfg.eval_every == 0:
                fields["heldout_mae"] = _heldout_mae(G, encoder, heldout.images)
            log.write(**fields)
    log.close()

    ckpt = pack_modules("encoder", cfg.steps,
                        {"generator": cfg.generator.to_dict(), "train": cfg.snapshot()},
                        encoder=encoder)
    save_checkpoint(ckpt, Path(cfg.checkpoint_dir) / "encoder")
    return ckpt


def train_consultation(cfg: TrainConfig, gan_ckpt: Checkpoint, enc_ckpt: Checkpoint,
                       featnet_ckpt: Checkpoint) -> Checkpoint:
    """Stage two: map encoder + aligner + fuse convs, generator/encoder frozen.

    Every step builds its own self-supervised alignment sample from the batch;
    no editing direction appears anywhere in this loop.
    """
    cfg.validate()
    _check_compatible(enc_ckpt, cfg, "encoder")
    torch.manual_seed(cfg.seed)
    ds = SceneDataset(cfg.dataset_n, cfg.dataset_seed, cfg.resolution)
    G = _load_frozen_generator(gan_ckpt, cfg)
    featnet = _load_frozen_featnet(featnet_ckpt, cfg)
    encoder = BasicEncoder(cfg.generator)
    unpack_into(enc_ckpt, encoder=encoder)
    _freeze(encoder)

    frozen_before = {n: p.detach().clone() for n, p in G.named_parameters()}

    branch = ConsultationBranch(cfg.generator)
    disc = Discriminator(cfg.resolution)
    unpack_into(gan_ckpt, discriminator=disc)
    opt = _adam(branch.parameters(), cfg)
    opt_d = _adam(disc.parameters(), cfg) if cfg.disc_finetune else None
    batches = _rng(cfg.seed, "consult-batches")
    warp_seeds = _rng(cfg.seed, "consult-warps")
    log = _JsonlLogger(Path(cfg.checkpoint_dir) / "consult_log.jsonl")
    layers = cfg.generator.sorted_fusion_layers()

    for step in range(cfg.steps):
        idx = batches.integers(0, len(ds), size=cfg.batch_size)
        x = ds.batch(idx)
        with torch.no_grad():
            w = encoder(x)
            x_o = G.generate(w)
        delta = x - x_o
        warped = torch.stack([
            perspective_warp(delta[i], sample_perspective(int(warp_seeds.integers(2 ** 31))))
            for i in range(delta.shape[0])
        ])
        delta_hat = branch.aligner(x_o, warped)
        maps = branch.encoder(delta_hat)
        x_hat = G(w, latent_maps=maps, fusers=branch.fusers, fusion_layers=layers)
        loss, comps = total_loss(x, x_hat, delta_hat, delta, disc, featnet, cfg.weights)
        if not torch.isfinite(loss):
            diag = pack_modules("consult-diagnostic", step,
                                {"generator": cfg.generator.to_dict(), "train": cfg.snapshot()},
                                consult=branch, disc_consult=disc)
            save_checkpoint(diag, Path(cfg.checkpoint_dir) / "consult_diagnostic")
            log.close()
            raise RuntimeError(f"non-finite loss at step {step}; diagnostic checkpoint saved")
        opt.zero_grad()
        loss.backward()
        opt.step()

        if opt_d is not None:
            loss_d, _ = adv_losses(disc, x, x_hat.detach())
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()
        else:
            loss_d = torch.tensor(0.0)

        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            log.write(step=step, loss=_scalar(loss), loss_d=_scalar(loss_d),
                      **{k: _scalar(v) for k, v in comps.items()})
    log.close()

    for name, param in G.named_parameters():
        if not torch.equal(param, frozen_before[name]):
            raise RuntimeError(f"frozen generator parameter {name} changed during training")

    ckpt = pack_modules("consult", cfg.steps,
                        {"generator": cfg.generator.to_dict(), "train": cfg.snapshot()},
                        consult=branch, disc_consult=disc)
    save_checkpoint(ckpt, Path(cfg.checkpoint_dir) / "consult")
    return ckpt


def train_naive(cfg: TrainConfig, gan_ckpt: Checkpoint, enc_ckpt: Checkpoint,
                featnet_ckpt: Checkpoint) -> Checkpoint:
    """Naive high-rate baseline: ungated skips at every block, recon loss only."""
    cfg.validate()
    _check_compatible(enc_ckpt, cfg, "encoder")
    torch.manual_seed(cfg.seed)
    ds = SceneDataset(cfg.dataset_n, cfg.dataset_seed, cfg.resolution)
    G = _load_frozen_generator(gan_ckpt, cfg)
    featnet = _load_frozen_featnet(featnet_ckpt, cfg)
    encoder = BasicEncoder(cfg.generator)
    unpack_into(enc_ckpt, encoder=encoder)
    _freeze(encoder)

    branch = NaiveBranch(cfg.generator)
    opt = _adam(branch.parameters(), cfg)
    batches = _rng(cfg.seed, "naive-batches")
    log = _JsonlLogger(Path(cfg.checkpoint_dir) / "naive_log.jsonl")

    for step in range(cfg.steps):
        idx = batches.integers(0, len(ds), size=cfg.batch_size)
        x = ds.batch(idx)
        with torch.no_grad():
            w = encoder(x)
        maps = branch.skip_maps(x)
        x_hat = G(w, latent_maps=maps, fusers=branch.fusers,
                  fusion_layers=branch.all_layers)
        loss, comps = rec_loss(x, x_hat, featnet, cfg.weights)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            log.write(step=step, loss=_scalar(loss),
                      **{k: _scalar(v) for k, v in comps.items()})
    log.close()

    ckpt = pack_modules("naive", cfg.steps,
                        {"generator": cfg.generator.to_dict(), "train": cfg.snapshot()},
                        naive=branch)
    save_checkpoint(ckpt, Path(cfg.checkpoint_dir) / "naive")
    return ckpt
