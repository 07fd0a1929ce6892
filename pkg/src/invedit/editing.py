"""Semantic direction discovery and the inversion / editing pipelines.

Directions are unit vectors in the per-layer latent space.  The boundary
learner fits a linear SVM on flattened latents labeled by thresholding one
ground-truth attribute; the PCA learner returns top principal components.
Editing moves the low-rate code along a direction and, when consultation is
on, re-aligns the observed distortion map to the edited low-fidelity image
before fusing it back in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .distortion import distortion_map
from .errors import ValidationError
from .models import ModelBundle


@dataclass
class Direction:
    name: str
    vector: torch.Tensor  # (num_blocks, style_dim), unit Frobenius norm
    scale_hint: float

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "shape": list(self.vector.shape),
            "values": [float(v) for v in self.vector.flatten()],
            "scale_hint": self.scale_hint,
        }

    @staticmethod
    def from_json(data: dict) -> "Direction":
        vec = torch.tensor(data["values"], dtype=torch.float32).reshape(data["shape"])
        return Direction(name=data["name"], vector=vec, scale_hint=float(data["scale_hint"]))

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{self.name}.json"
        path.write_text(json.dumps(self.to_json()))
        return path


def load_directions(directory) -> dict[str, Direction]:
    out = {}
    for path in sorted(Path(directory).glob("*.json")):
        d = Direction.from_json(json.loads(path.read_text()))
        out[d.name] = d
    return out


def _flatten_latents(latents) -> tuple[np.ndarray, tuple]:
    if isinstance(latents, torch.Tensor):
        arr = latents.detach().cpu().numpy()
    else:
        arr = np.stack([np.asarray(l.detach().cpu() if isinstance(l, torch.Tensor) else l)
                        for l in latents])
    shape = arr.shape[1:]
    return arr.reshape(arr.shape[0], -1).astype(np.float64), shape


def _scale_hint(flat: np.ndarray, unit: np.ndarray) -> float:
    projections = flat @ unit
    return float(3.0 * projections.std())


def learn_direction_boundary(latents, labels, name: str) -> Direction:
    """Separating-hyperplane direction for a thresholded binary attribute.

    A linear SVM with a large C: on separable data the normal is the
    max-margin one, and on the (non-separable) real latents it degrades
    gracefully to a soft-margin boundary.
    """
    from sklearn.svm import SVC

    flat, shape = _flatten_latents(latents)
    y = np.asarray(labels)
    if flat.shape[0] != y.shape[0]:
        raise ValidationError(f"{flat.shape[0]} latents but {y.shape[0]} labels")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValidationError("boundary learning needs examples from both classes")
    if not set(classes.tolist()) <= {-1, 1}:
        raise ValidationError(f"labels must be +/-1, got {classes}")

    clf = SVC(kernel="linear", C=100.0, tol=1e-8)
    clf.fit(flat, y)
    normal = clf.coef_.ravel()
    norm = np.linalg.norm(normal)
    if norm == 0.0:
        raise ValidationError("degenerate boundary: zero classifier weights")
    unit = normal / norm
    vec = torch.from_numpy(unit.reshape(shape)).to(torch.float32)
    return Direction(name=name, vector=vec, scale_hint=_scale_hint(flat, unit))


def learn_direction_pca(latents_or_features, k: int) -> list[Direction]:
    """Top-k principal components of mean-centered flattened samples."""
    flat, shape = _flatten_latents(latents_or_features)
    n = flat.shape[0]
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if k >= n:
        raise ValidationError(f"k ({k}) must be smaller than the sample count ({n})")
    centered = flat - flat.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    out = []
    for i in range(k):
        unit = vt[i]
        vec = torch.from_numpy(unit.reshape(shape)).to(torch.float32)
        out.append(Direction(name=f"pca_{i}", vector=vec,
                             scale_hint=_scale_hint(flat, unit)))
    return out


def apply_edit(w: torch.Tensor, direction: Direction, alpha: float) -> torch.Tensor:
    """Move a latent code along a direction: w + alpha * vector."""
    vec = direction.vector.to(w.dtype)
    if w.shape[-2:] != vec.shape:
        raise ValidationError(
            f"latent shape {tuple(w.shape)} incompatible with direction {tuple(vec.shape)}"
        )
    return w + alpha * vec


@dataclass
class InversionResult:
    image: torch.Tensor
    latent: torch.Tensor
    delta: torch.Tensor


@torch.no_grad()
def invert(x: torch.Tensor, models: ModelBundle, use_consultation: bool) -> InversionResult:
    """Reconstruct an image through the low-rate (+ optional consultation) path."""
    w = models.basic_encoder(x)
    x_o = models.generator.generate(w)
    delta = distortion_map(x, x_o)
    if not use_consultation:
        return InversionResult(image=x_o, latent=w, delta=delta)
    branch = models.require_consult()
    aligned = branch.aligner(x_o, delta)
    maps = branch.encoder(aligned)
    x_hat = models.generator.generate_with_consultation(w, maps, branch.fusers)
    return InversionResult(image=x_hat, latent=w, delta=delta)


@torch.no_grad()
def edit(x: torch.Tensor, direction: Direction, alpha: float, models: ModelBundle,
         use_consultation: bool) -> torch.Tensor:
    """Invert, shift the code, and resynthesize; consultation re-aligns details.

    The distortion map is recomputed against the plain inversion each call so
    the operation is stateless; callers may cache entire results instead.
    """
    w = models.basic_encoder(x)
    x_o = models.generator.generate(w)
    delta = distortion_map(x, x_o)
    w_edit = apply_edit(w, direction, alpha)
    x_o_edit = models.generator.generate(w_edit)
    if not use_consultation:
        return x_o_edit
    branch = models.require_consult()
    aligned = branch.aligner(x_o_edit, delta)
    maps = branch.encoder(aligned)
    return models.generator.generate_with_consultation(w_edit, maps, branch.fusers)
