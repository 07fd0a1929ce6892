"""Command-line entry points for every stage of the pipeline.

Exit codes: 0 success, 2 validation/config problems, 1 runtime failures.
Commands that need checkpoints take `--checkpoint-dir`, falling back to the
HFGI_CHECKPOINT_DIR environment variable.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import scenes
from .checkpoint import load_checkpoint
from .errors import CheckpointFormatError, ConfigError, ValidationError
from .models import ModelBundle

CHECKPOINT_ENV = "HFGI_CHECKPOINT_DIR"


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValidationError, ConfigError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except (CheckpointFormatError, OSError, RuntimeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def checkpoint_dir_option(fn):
    return click.option(
        "--checkpoint-dir", envvar=CHECKPOINT_ENV, required=True,
        help=f"checkpoint directory (or ${CHECKPOINT_ENV})",
    )(fn)


@click.group()
def main():
    """Distortion-consultation inversion and editing toolkit."""


# --- data -------------------------------------------------------------------


@main.group()
def data():
    """Toy dataset commands."""


@data.command("gen")
@click.option("--out", required=True, type=click.Path())
@click.option("--n", default=256, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--resolution", default=64, show_default=True)
@handle_errors
def data_gen(out, n, seed, resolution):
    """Export PNGs plus an index.json manifest."""
    path = scenes.export_dataset(out, n=n, seed=seed, resolution=resolution)
    click.echo(f"wrote {n} images and {path}")


# --- training ---------------------------------------------------------------


def _train_command(stage):
    @click.command(stage)
    @click.option("--config", "config_path", required=True, type=click.Path())
    @click.option("--steps", type=int, default=None, help="override config steps")
    @click.option("--seed", type=int, default=None, help="override config seed")
    @click.option("--checkpoint-dir", "ckpt_dir", default=None,
                  help="override config checkpoint_dir")
    @handle_errors
    def cmd(config_path, steps, seed, ckpt_dir):
        from . import training

        cfg = training.load_train_config(
            config_path, stage=stage,
            overrides={"steps": steps, "seed": seed, "checkpoint_dir": ckpt_dir},
        )
        directory = Path(cfg.checkpoint_dir)
        if stage == "featnet":
            ckpt = training.train_featnet(cfg)
        elif stage == "gan":
            ckpt = training.train_gan(cfg)
        elif stage == "encoder":
            ckpt = training.train_encoder(
                cfg, load_checkpoint(directory / "gan"),
                load_checkpoint(directory / "featnet"))
        elif stage == "consult":
            ckpt = training.train_consultation(
                cfg, load_checkpoint(directory / "gan"),
                load_checkpoint(directory / "encoder"),
                load_checkpoint(directory / "featnet"))
        else:
            ckpt = training.train_naive(
                cfg, load_checkpoint(directory / "gan"),
                load_checkpoint(directory / "encoder"),
                load_checkpoint(directory / "featnet"))
        click.echo(f"trained {stage} for {ckpt.step} steps -> {directory}")

    cmd.help = f"Train the {stage} stage from a TOML config."
    return cmd


@main.group()
def train():
    """Training stages (featnet, gan, encoder, consult, naive)."""


for _stage in ("gan", "featnet", "encoder", "consult", "naive"):
    train.add_command(_train_command(_stage))


# --- directions ---------------------------------------------------------------


@main.group()
def directions():
    """Semantic direction discovery."""


@directions.command("learn")
@checkpoint_dir_option
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--attributes", default="size,hue,pos_x,pos_y",
              show_default=True, help="comma-separated attribute names")
@click.option("--n", default=2048, show_default=True,
              help="latents to embed for boundary fitting")
@click.option("--seed", default=500, show_default=True)
@click.option("--pca", "pca_k", default=0, show_default=True,
              help="additionally store this many PCA directions")
@handle_errors
def directions_learn(checkpoint_dir, out_dir, attributes, n, seed, pca_k):
    """Fit boundary directions from encoder latents and ground-truth labels."""
    from .editing import learn_direction_boundary, learn_direction_pca

    bundle = ModelBundle.load(checkpoint_dir)
    dataset = scenes.SceneDataset(n, seed, bundle.resolution)
    with torch.no_grad():
        latents = torch.cat(
            [bundle.basic_encoder(dataset.images[i:i + 64])
             for i in range(0, n, 64)]
        )
    names = [a.strip() for a in attributes.split(",") if a.strip()]
    for name in names:
        if name not in scenes.ATTRIBUTE_NAMES:
            raise ValidationError(
                f"unknown attribute {name!r}; choose from {scenes.ATTRIBUTE_NAMES}"
            )
        column = dataset.attributes[:, scenes.ATTRIBUTE_NAMES.index(name)]
        labels = np.where(column > np.median(column), 1, -1)
        direction = learn_direction_boundary(latents, labels, name)
        path = direction.save(out_dir)
        click.echo(f"{name}: scale_hint={direction.scale_hint:.3f} -> {path}")
    if pca_k:
        for direction in learn_direction_pca(latents, pca_k):
            path = direction.save(out_dir)
            click.echo(f"{direction.name} -> {path}")


# --- inversion / editing ------------------------------------------------------


def _load_image(path: str, resolution: int) -> torch.Tensor:
    from PIL import Image as PILImage

    pil = PILImage.open(path).convert("RGB")
    if pil.size != (resolution, resolution):
        raise ValidationError(
            f"image must be {resolution}x{resolution}, got {pil.size[0]}x{pil.size[1]}"
        )
    arr = np.asarray(pil, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr.transpose(2, 0, 1))


def _save_image(img: torch.Tensor, path: str) -> None:
    from PIL import Image as PILImage

    arr = ((img.numpy().transpose(1, 2, 0) + 1.0) * 127.5).round().clip(0, 255)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr.astype(np.uint8)).save(path)


@main.command()
@checkpoint_dir_option
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--consultation/--no-consultation", default=True, show_default=True)
@handle_errors
def invert(checkpoint_dir, image_path, out, consultation):
    """Reconstruct one image; prints MAE/SSIM."""
    from .editing import invert as run_invert
    from .metrics import mae, ssim

    bundle = ModelBundle.load(checkpoint_dir)
    x = _load_image(image_path, bundle.resolution)
    result = run_invert(x, bundle, use_consultation=consultation)
    _save_image(result.image, out)
    click.echo(json.dumps({
        "mae": float(mae(x, result.image)),
        "ssim": float(ssim(x, result.image)),
        "out": str(out),
    }))


@main.command()
@checkpoint_dir_option
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--directions-dir", required=True, type=click.Path(exists=True))
@click.option("--direction", "direction_name", required=True)
@click.option("--alpha", default=0.0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--backend", default="consult", show_default=True,
              type=click.Choice(["lowrate", "consult", "naive"]))
@handle_errors
def edit(checkpoint_dir, image_path, directions_dir, direction_name, alpha, out, backend):
    """Apply one semantic edit and write the result PNG."""
    from .editing import load_directions
    from .evaluation import run_edit

    bundle = ModelBundle.load(checkpoint_dir)
    available = load_directions(directions_dir)
    if direction_name not in available:
        raise ValidationError(
            f"unknown direction {direction_name!r}; available: {sorted(available)}"
        )
    x = _load_image(image_path, bundle.resolution)
    edited = run_edit(backend, x, available[direction_name], alpha, bundle)
    _save_image(edited, out)
    click.echo(json.dumps({"out": str(out), "alpha": alpha, "backend": backend}))


# --- evaluation ---------------------------------------------------------------


@main.command("eval")
@checkpoint_dir_option
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--backends", default="lowrate,consult", show_default=True)
@click.option("--n", default=100, show_default=True)
@click.option("--heldout-seed", default=900, show_default=True)
@click.option("--directions-dir", default=None, type=click.Path())
@click.option("--edit-n", default=50, show_default=True)
@click.option("--optim-steps", default=300, show_default=True)
@click.option("--optim-lr", default=0.03, show_default=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
@handle_errors
def eval_cmd(checkpoint_dir, out_dir, backends, n, heldout_seed, directions_dir,
             edit_n, optim_steps, optim_lr, figures):
    """Write the inversion/editing report (JSON + Markdown + CSV + figures)."""
    from . import evaluation
    from .editing import load_directions

    backend_list = [b.strip() for b in backends.split(",") if b.strip()]
    bundle = ModelBundle.load(checkpoint_dir)
    dataset = scenes.SceneDataset(n, heldout_seed, bundle.resolution)
    report = evaluation.eval_inversion(backend_list, dataset, n, bundle,
                                       optim_steps=optim_steps, optim_lr=optim_lr)
    report.meta["checkpoints"] = bundle.checkpoint_ids()

    responses = {}
    if directions_dir:
        loaded = load_directions(directions_dir)
        featnet = bundle.require_featnet()
        for direction in loaded.values():
            if direction.name not in scenes.ATTRIBUTE_NAMES:
                continue
            alphas = [-direction.scale_hint, 0.0, direction.scale_hint]
            for backend in backend_list:
                if backend in ("copy", "optim"):
                    continue
                rows = evaluation.eval_editing(backend, [direction], alphas,
                                               dataset, featnet, bundle, n=edit_n)
                report.edit_rows.extend(rows)
                for row in rows:
                    if row["alpha"] > 0:
                        responses.setdefault(backend, {})[direction.name] = row["response"]

    out = report.write(out_dir)
    if figures:
        evaluation.save_contact_sheet(dataset, bundle, [b for b in backend_list if b != "copy"],
                                      Path(out_dir) / "inversions.png")
        if directions_dir and responses:
            first = {b: list(v.values())[0] for b, v in responses.items()}
            evaluation.save_tradeoff_figure(report, first, Path(out_dir) / "tradeoff.png")
    click.echo(f"report written to {out}")


# --- service ------------------------------------------------------------------


@main.command()
@checkpoint_dir_option
@click.option("--directions-dir", default="", type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True)
@click.option("--static-dir", default="", type=click.Path())
@click.option("--max-sessions", default=64, show_default=True)
@click.option("--session-idle-seconds", default=1800.0, show_default=True)
@handle_errors
def serve(checkpoint_dir, directions_dir, host, port, static_dir,
          max_sessions, session_idle_seconds):
    """Run the HTTP service for the studio UI."""
    from .service import ServiceConfig
    from .service import serve as run_serve

    run_serve(ServiceConfig(
        checkpoint_dir=checkpoint_dir, directions_dir=directions_dir,
        host=host, port=port, static_dir=static_dir,
        max_sessions=max_sessions, session_idle_seconds=session_idle_seconds,
    ))


if __name__ == "__main__":
    main()
