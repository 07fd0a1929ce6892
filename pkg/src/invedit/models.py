"""Loaded-model container shared by the pipelines, evaluation, CLI and service."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch

from .checkpoint import Checkpoint, load_checkpoint, unpack_into
from .encoders import BasicEncoder, ConsultationBranch, NaiveBranch
from .errors import ConfigError
from .featnet import FeatureNet
from .generator import Discriminator, Generator, GeneratorConfig, MappingNetwork


@dataclass
class ModelBundle:
    """Frozen modules reconstructed from a checkpoint directory."""

    config: GeneratorConfig
    generator: Generator
    basic_encoder: BasicEncoder
    consult: ConsultationBranch | None = None
    naive: NaiveBranch | None = None
    featnet: FeatureNet | None = None
    mapping: MappingNetwork | None = None
    discriminator: Discriminator | None = None
    latent_mean: torch.Tensor | None = None
    checkpoint_steps: dict = field(default_factory=dict)

    @property
    def resolution(self) -> int:
        return self.config.resolution

    def checkpoint_ids(self) -> dict:
        return dict(self.checkpoint_steps)

    @staticmethod
    def load(checkpoint_dir, require=("gan", "encoder")) -> "ModelBundle":
        """Load whatever checkpoints exist under `checkpoint_dir`.

        `gan` and `encoder` are mandatory by default; consult/naive/featnet
        attach when present.
        """
        directory = Path(checkpoint_dir)

        def read(name: str, needed: bool) -> Checkpoint | None:
            base = directory / name
            if not base.with_suffix(".json").exists():
                if needed:
                    raise ConfigError(f"missing {name} checkpoint in {directory}")
                return None
            return load_checkpoint(base)

        gan = read("gan", "gan" in require)
        if gan is None:
            raise ConfigError(f"missing gan checkpoint in {directory}")
        config = GeneratorConfig.from_dict(gan.config["generator"])
        generator = Generator(config)
        unpack_into(gan, generator_ema=generator)
        mapping = MappingNetwork(config.style_dim)
        unpack_into(gan, mapping_ema=mapping)
        discriminator = Discriminator(config.resolution)
        unpack_into(gan, discriminator=discriminator)
        latent_mean = gan.tensors.get("latent_mean")
        steps = {"gan": gan.step}

        enc_ckpt = read("encoder", "encoder" in require)
        if enc_ckpt is None:
            raise ConfigError(f"missing encoder checkpoint in {directory}")
        basic_encoder = BasicEncoder(config)
        unpack_into(enc_ckpt, encoder=basic_encoder)
        steps["encoder"] = enc_ckpt.step

        consult = None
        consult_ckpt = read("consult", "consult" in require)
        if consult_ckpt is not None:
            consult = ConsultationBranch(config)
            unpack_into(consult_ckpt, consult=consult)
            steps["consult"] = consult_ckpt.step

        naive = None
        naive_ckpt = read("naive", "naive" in require)
        if naive_ckpt is not None:
            naive = NaiveBranch(config)
            unpack_into(naive_ckpt, naive=naive)
            steps["naive"] = naive_ckpt.step

        featnet = None
        feat_ckpt = read("featnet", "featnet" in require)
        if feat_ckpt is not None:
            featnet = FeatureNet(config.resolution)
            unpack_into(feat_ckpt, featnet=featnet)
            steps["featnet"] = feat_ckpt.step

        bundle = ModelBundle(
            config=config, generator=generator, basic_encoder=basic_encoder,
            consult=consult, naive=naive, featnet=featnet, mapping=mapping,
            discriminator=discriminator, latent_mean=latent_mean,
            checkpoint_steps=steps,
        )
        bundle.eval_mode()
        return bundle

    def eval_mode(self) -> "ModelBundle":
        for module in (self.generator, self.basic_encoder, self.consult,
                       self.naive, self.featnet, self.mapping, self.discriminator):
            if module is not None:
                module.eval()
                for p in module.parameters():
                    p.requires_grad_(False)
        return self

    def require_consult(self) -> ConsultationBranch:
        if self.consult is None:
            raise ConfigError("consultation branch checkpoint not loaded")
        return self.consult

    def require_naive(self) -> NaiveBranch:
        if self.naive is None:
            raise ConfigError("naive high-rate checkpoint not loaded")
        return self.naive

    def require_featnet(self) -> FeatureNet:
        if self.featnet is None:
            raise ConfigError("featnet checkpoint not loaded")
        return self.featnet
