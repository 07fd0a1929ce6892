"""Distortion-consultation GAN inversion and attribute editing, desk scale."""

from .distortion import (
    PerspectiveParams,
    alignment_loss,
    distortion_map,
    make_ada_sample,
    perspective_warp,
    sample_perspective,
)
from .editing import Direction, apply_edit, edit, invert, learn_direction_boundary, learn_direction_pca
from .errors import CheckpointFormatError, ConfigError, ValidationError
from .generator import (
    Generator,
    GeneratorConfig,
    adain,
    consultation_fuse,
    generate,
    generate_with_consultation,
)
from .losses import LossWeights, adv_losses, rec_loss, total_loss
from .metrics import mae, ssim
from .models import ModelBundle
from .scenes import SceneSpec, render_scene, sample_dataset

__all__ = [
    "PerspectiveParams", "alignment_loss", "distortion_map", "make_ada_sample",
    "perspective_warp", "sample_perspective",
    "Direction", "apply_edit", "edit", "invert",
    "learn_direction_boundary", "learn_direction_pca",
    "CheckpointFormatError", "ConfigError", "ValidationError",
    "Generator", "GeneratorConfig", "adain", "consultation_fuse",
    "generate", "generate_with_consultation",
    "LossWeights", "adv_losses", "rec_loss", "total_loss",
    "mae", "ssim", "ModelBundle", "SceneSpec", "render_scene", "sample_dataset",
]

__version__ = "0.1.0"
