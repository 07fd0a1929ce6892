"""Quantitative harness: inversion tables, edit-fidelity scores, ablations,
and the rate/distortion/edit trade-off report.

Reports are written as JSON, a Markdown table, CSV files, and matplotlib
figures (contact sheets of source/inversion/edits plus a trade-off scatter).
Edit quality is measured with the attribute regressor: the response of the
edited attribute, the leakage into every other attribute, and the MAE on
background pixels (known analytically from the scene geometry, dilated by
two pixels).  Circular attributes are compared with wrapped differences.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import scenes
from .baselines import naive_highrate_edit, naive_highrate_invert, optimize_invert
from .editing import Direction, edit, invert
from .errors import ValidationError
from .losses import _normalize_channels
from .metrics import mae, ssim
from .models import ModelBundle

INVERSION_BACKENDS = ("copy", "lowrate", "consult", "naive", "optim")
EDIT_BACKENDS = ("identity", "lowrate", "consult", "naive")


def perceptual_distance(x: torch.Tensor, x_hat: torch.Tensor, featnet) -> float:
    """Channel-normalized feature MSE averaged over the regressor's stages."""
    with torch.no_grad():
        feats_x = featnet.features(x)
        feats_h = featnet.features(x_hat)
        vals = [
            F.mse_loss(_normalize_channels(fh), _normalize_channels(fx))
            for fx, fh in zip(feats_x, feats_h)
        ]
        return float(torch.stack(vals).mean())


def attribute_delta(name: str, after: np.ndarray, before: np.ndarray) -> np.ndarray:
    """Signed attribute change, wrapped to the shorter arc for circular fields."""
    diff = after - before
    period = scenes.CIRCULAR_ATTRIBUTES.get(name)
    if period is not None:
        diff = (diff + period / 2.0) % period - period / 2.0
    return diff


def background_mask(spec: scenes.SceneSpec, resolution: int) -> torch.Tensor:
    """True where neither the shape nor its ring lands, dilated by 2 px."""
    cover = torch.from_numpy(scenes.shape_coverage(spec, resolution) > 0.0)
    dilated = F.max_pool2d(cover[None, None].float(), kernel_size=5, stride=1, padding=2)
    return dilated[0, 0] < 0.5


def masked_mae(x: torch.Tensor, y: torch.Tensor, mask: torch.Tensor) -> float:
    m = mask.to(x.dtype)
    denom = float(m.sum()) * x.shape[-3]
    return float(((x - y).abs() * m).sum() / denom)


def run_inversion(backend: str, x: torch.Tensor, models: ModelBundle,
                  optim_steps: int = 300, optim_lr: float = 0.03) -> torch.Tensor:
    if backend == "copy":
        return x.clone()
    if backend == "lowrate":
        return invert(x, models, use_consultation=False).image
    if backend == "consult":
        return invert(x, models, use_consultation=True).image
    if backend == "naive":
        return naive_highrate_invert(x, models).image
    if backend == "optim":
        result = optimize_invert(
            x, models.generator, models.require_featnet(),
            steps=optim_steps, lr=optim_lr, latent_mean=models.latent_mean,
        )
        return result.image
    raise ValidationError(f"unknown inversion backend {backend!r}")


def run_edit(backend: str, x: torch.Tensor, direction: Direction, alpha: float,
             models: ModelBundle) -> torch.Tensor:
    if backend == "identity":
        return x.clone()
    if backend == "lowrate":
        return edit(x, direction, alpha, models, use_consultation=False)
    if backend == "consult":
        return edit(x, direction, alpha, models, use_consultation=True)
    if backend == "naive":
        return naive_highrate_edit(x, direction, alpha, models)
    raise ValidationError(f"unknown edit backend {backend!r}")


@dataclass
class EvalReport:
    inversion_rows: list = field(default_factory=list)
    edit_rows: list = field(default_factory=list)
    ablation_rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "meta": self.meta,
            "inversion": self.inversion_rows,
            "editing": self.edit_rows,
            "ada_ablation": self.ablation_rows,
        }

    def markdown(self) -> str:
        lines = ["# Evaluation report", ""]
        if self.inversion_rows:
            lines += ["## Inversion quality", "",
                      "| backend | MAE | SSIM | perceptual | time/image (s) |",
                      "|---|---|---|---|---|"]
            for r in self.inversion_rows:
                lines.append(
                    f"| {r['backend']} | {r['mae_mean']:.4f} ± {r['mae_stderr']:.4f} "
                    f"| {r['ssim_mean']:.4f} ± {r['ssim_stderr']:.4f} "
                    f"| {r['perceptual_mean']:.4f} | {r['seconds_per_image']:.4f} |"
                )
            lines.append("")
        if self.edit_rows:
            lines += ["## Editing", "",
                      "| backend | direction | alpha | response | leakage | background MAE |",
                      "|---|---|---|---|---|---|"]
            for r in self.edit_rows:
                lines.append(
                    f"| {r['backend']} | {r['direction']} | {r['alpha']:.3f} "
                    f"| {r['response']:.4f} | {r['leakage']:.4f} | {r['background_mae']:.4f} |"
                )
            lines.append("")
        if self.ablation_rows:
            lines += ["## Alignment ablation", "",
                      "| variant | direction | alpha | background MAE | perceptual |",
                      "|---|---|---|---|---|"]
            for r in self.ablation_rows:
                lines.append(
                    f"| {r['variant']} | {r['direction']} | {r['alpha']:.3f} "
                    f"| {r['background_mae']:.4f} | {r['perceptual']:.4f} |"
                )
            lines.append("")
        return "\n".join(lines)

    def write(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(self.to_json(), indent=2))
        (out_dir / "report.md").write_text(self.markdown())
        for name, rows in (("inversion", self.inversion_rows),
                           ("editing", self.edit_rows),
                           ("ada_ablation", self.ablation_rows)):
            if rows:
                with open(out_dir / f"{name}.csv", "w", newline="") as fh:
                    writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
                    writer.writeheader()
                    writer.writerows(rows)
        return out_dir


def eval_inversion(backends, dataset: scenes.SceneDataset, n: int, models: ModelBundle,
                   optim_steps: int = 300, optim_lr: float = 0.03) -> EvalReport:
    """Per-image metrics over the first n images, deterministic order."""
    if n > len(dataset):
        raise ValidationError(f"n ({n}) exceeds dataset size ({len(dataset)})")
    report = EvalReport(meta={"n": n, "backends": list(backends)})
    featnet = models.featnet
    for backend in backends:
        if backend not in INVERSION_BACKENDS:
            raise ValidationError(f"unknown inversion backend {backend!r}")
        maes, ssims, percs = [], [], []
        elapsed = 0.0
        for i in range(n):
            x = dataset.images[i]
            t0 = time.perf_counter()
            x_hat = run_inversion(backend, x, models, optim_steps, optim_lr)
            elapsed += time.perf_counter() - t0
            maes.append(float(mae(x, x_hat)))
            ssims.append(float(ssim(x, x_hat)))
            if featnet is not None:
                percs.append(perceptual_distance(x, x_hat, featnet))
        maes_arr = np.asarray(maes)
        ssims_arr = np.asarray(ssims)
        report.inversion_rows.append({
            "backend": backend,
            "mae_mean": float(maes_arr.mean()),
            "mae_stderr": float(maes_arr.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
            "ssim_mean": float(ssims_arr.mean()),
            "ssim_stderr": float(ssims_arr.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
            "perceptual_mean": float(np.mean(percs)) if percs else float("nan"),
            "seconds_per_image": elapsed / n,
        })
    return report


def eval_editing(backend: str, directions, alphas, dataset: scenes.SceneDataset,
                 featnet, models: ModelBundle, n: int | None = None) -> list[dict]:
    """Edit response / leakage / background preservation over an alpha grid."""
    n = len(dataset) if n is None else min(n, len(dataset))
    rows = []
    for direction in directions:
        if direction.name not in scenes.ATTRIBUTE_NAMES:
            raise ValidationError(
                f"direction {direction.name!r} does not name a ground-truth attribute"
            )
        attr_idx = scenes.ATTRIBUTE_NAMES.index(direction.name)
        base_attrs = []
        base_images = []
        for i in range(n):
            img = run_edit(backend, dataset.images[i], direction, 0.0, models)
            base_images.append(img)
            base_attrs.append(featnet.predict_attributes(img)[0])
        base_attrs = np.stack(base_attrs)

        for alpha in alphas:
            responses, leaks, bg = [], [], []
            for i in range(n):
                if alpha == 0.0:
                    edited = base_images[i]
                    attrs = base_attrs[i]
                else:
                    edited = run_edit(backend, dataset.images[i], direction, alpha, models)
                    attrs = featnet.predict_attributes(edited)[0]
                responses.append(
                    attribute_delta(direction.name,
                                    np.asarray([attrs[attr_idx]]),
                                    np.asarray([base_attrs[i][attr_idx]]))[0]
                )
                leak = 0.0
                for j, name in enumerate(scenes.ATTRIBUTE_NAMES):
                    if j == attr_idx:
                        continue
                    leak += abs(attribute_delta(name,
                                                np.asarray([attrs[j]]),
                                                np.asarray([base_attrs[i][j]]))[0])
                leaks.append(leak / (len(scenes.ATTRIBUTE_NAMES) - 1))
                mask = background_mask(dataset.specs[i], dataset.resolution)
                bg.append(masked_mae(dataset.images[i], edited, mask))
            rows.append({
                "backend": backend,
                "direction": direction.name,
                "alpha": float(alpha),
                "response": float(np.mean(responses)),
                "leakage": float(np.mean(leaks)),
                "background_mae": float(np.mean(bg)),
            })
    return rows


def edit_response(backend: str, direction: Direction, alpha: float,
                  dataset: scenes.SceneDataset, featnet, models: ModelBundle,
                  n: int) -> float:
    """Mean regressed change of the direction's attribute at one alpha."""
    rows = eval_editing(backend, [direction], [alpha], dataset, featnet, models, n=n)
    return rows[0]["response"]


@torch.no_grad()
def _consult_edit_raw_delta(x: torch.Tensor, direction: Direction, alpha: float,
                            models: ModelBundle) -> torch.Tensor:
    """Consultation edit with the aligner bypassed (raw residual fused)."""
    branch = models.require_consult()
    w = models.basic_encoder(x)
    x_o = models.generator.generate(w)
    delta = x - x_o
    from .editing import apply_edit

    w_edit = apply_edit(w, direction, alpha)
    maps = branch.encoder(delta)
    return models.generator.generate_with_consultation(w_edit, maps, branch.fusers)


@torch.no_grad()
def _image_space_edit(x: torch.Tensor, direction: Direction, alpha: float,
                      models: ModelBundle) -> torch.Tensor:
    """Add the raw residual to the edited low-fidelity image, clamped."""
    from .editing import apply_edit

    w = models.basic_encoder(x)
    x_o = models.generator.generate(w)
    delta = x - x_o
    w_edit = apply_edit(w, direction, alpha)
    x_o_edit = models.generator.generate(w_edit)
    return (x_o_edit + delta).clamp(-1.0, 1.0)


ABLATION_VARIANTS = {
    "with_ada": lambda x, d, a, m: edit(x, d, a, m, use_consultation=True),
    "raw_delta": _consult_edit_raw_delta,
    "image_space": _image_space_edit,
}


def eval_ada_ablation(dataset: scenes.SceneDataset, models: ModelBundle,
                      direction: Direction, alpha: float, n: int = 50) -> list[dict]:
    """Compare aligned, unaligned, and image-space detail reuse under an edit."""
    n = min(n, len(dataset))
    featnet = models.require_featnet()
    rows = []
    for variant, fn in ABLATION_VARIANTS.items():
        bg, percs = [], []
        for i in range(n):
            x = dataset.images[i]
            edited = fn(x, direction, alpha, models)
            mask = background_mask(dataset.specs[i], dataset.resolution)
            bg.append(masked_mae(x, edited, mask))
            percs.append(perceptual_distance(x, edited, featnet))
        rows.append({
            "variant": variant,
            "direction": direction.name,
            "alpha": float(alpha),
            "background_mae": float(np.mean(bg)),
            "perceptual": float(np.mean(percs)),
        })
    return rows


def _to_plot(img: torch.Tensor) -> np.ndarray:
    return ((img.detach().numpy().transpose(1, 2, 0) + 1.0) / 2.0).clip(0.0, 1.0)


def save_contact_sheet(dataset: scenes.SceneDataset, models: ModelBundle,
                       backends, path, n: int = 6) -> Path:
    """Grid of source rows against each backend's inversion."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = min(n, len(dataset))
    rows = ["source"] + list(backends)
    fig, axes = plt.subplots(len(rows), n, figsize=(1.6 * n, 1.6 * len(rows)))
    axes = np.atleast_2d(axes)
    for col in range(n):
        x = dataset.images[col]
        for row, name in enumerate(rows):
            ax = axes[row, col]
            img = x if name == "source" else run_inversion(name, x, models)
            ax.imshow(_to_plot(img))
            ax.set_xticks([])
            ax.set_yticks([])
            if col == 0:
                ax.set_ylabel(name, fontsize=9)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_edit_sheet(dataset: scenes.SceneDataset, models: ModelBundle,
                    direction: Direction, alphas, backend: str, path,
                    n: int = 4) -> Path:
    """One row per image, one column per alpha, for a single backend."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = min(n, len(dataset))
    fig, axes = plt.subplots(n, len(alphas), figsize=(1.6 * len(alphas), 1.6 * n))
    axes = np.atleast_2d(axes)
    for row in range(n):
        for col, alpha in enumerate(alphas):
            img = run_edit(backend, dataset.images[row], direction, float(alpha), models)
            ax = axes[row, col]
            ax.imshow(_to_plot(img))
            ax.set_xticks([])
            ax.set_yticks([])
            if row == 0:
                ax.set_title(f"a={alpha:+.2f}", fontsize=8)
    fig.suptitle(f"{backend}: {direction.name}", fontsize=10)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_tradeoff_figure(report: EvalReport, responses: dict, path) -> Path:
    """Scatter of reconstruction error against edit response per backend."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for row in report.inversion_rows:
        name = row["backend"]
        if name not in responses:
            continue
        ax.scatter(row["mae_mean"], responses[name], s=45)
        ax.annotate(name, (row["mae_mean"], responses[name]),
                    textcoords="offset points", xytext=(6, 4), fontsize=9)
    ax.set_xlabel("inversion MAE")
    ax.set_ylabel("edit response")
    ax.set_title("rate / distortion / edit trade-off")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
