"""Checkpoint persistence: a JSON manifest plus one raw float32 blob.

The manifest lists every tensor with its name, dtype tag ("f32"), shape and
byte offset into the blob; the blob is the tensors' little-endian float32
bytes laid out back to back.  Offsets must be non-overlapping and the blob
length must equal the summed tensor sizes, so load(save(x)) is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointFormatError

_BYTES_PER_VALUE = 4


def config_hash(config: dict) -> str:
    """Stable digest of a config snapshot, for cross-stage compatibility checks."""
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    component: str
    step: int
    config: dict
    tensors: dict[str, torch.Tensor] = field(default_factory=dict)

    def manifest(self) -> dict:
        entries = []
        offset = 0
        for name, tensor in self.tensors.items():
            size = tensor.numel() * _BYTES_PER_VALUE
            entries.append(
                {"name": name, "dtype": "f32", "shape": list(tensor.shape), "offset": offset}
            )
            offset += size
        return {
            "component": self.component,
            "step": self.step,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "tensors": entries,
        }

    def blob(self) -> bytes:
        chunks = [
            t.detach().cpu().contiguous().numpy().astype("<f4", copy=False).tobytes()
            for t in self.tensors.values()
        ]
        return b"".join(chunks)


def save_checkpoint(ckpt: Checkpoint, path) -> tuple[Path, Path]:
    """Write `<path>.json` and `<path>.bin`; returns both paths."""
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    manifest_path = base.with_suffix(".json")
    blob_path = base.with_suffix(".bin")
    manifest_path.write_text(json.dumps(ckpt.manifest(), indent=2))
    blob_path.write_bytes(ckpt.blob())
    return manifest_path, blob_path


def load_checkpoint(path) -> Checkpoint:
    """Read and validate a checkpoint pair written by `save_checkpoint`."""
    base = Path(path)
    manifest_path = base.with_suffix(".json")
    blob_path = base.with_suffix(".bin")
    if not manifest_path.exists() or not blob_path.exists():
        raise CheckpointFormatError(f"missing checkpoint files at {base}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"unreadable manifest {manifest_path}: {exc}") from exc
    blob = blob_path.read_bytes()

    entries = manifest.get("tensors", [])
    expected = 0
    last_end = 0
    for entry in sorted(entries, key=lambda e: e["offset"]):
        if entry.get("dtype") != "f32":
            raise CheckpointFormatError(f"unknown dtype {entry.get('dtype')!r} for {entry['name']}")
        size = int(np.prod(entry["shape"], dtype=np.int64)) * _BYTES_PER_VALUE if entry["shape"] else _BYTES_PER_VALUE
        if entry["offset"] < last_end:
            raise CheckpointFormatError(f"overlapping tensor offsets at {entry['name']}")
        if entry["offset"] != last_end:
            raise CheckpointFormatError(f"gap before tensor {entry['name']}")
        last_end = entry["offset"] + size
        expected += size
    if expected != len(blob):
        raise CheckpointFormatError(
            f"blob holds {len(blob)} bytes but manifest claims {expected}"
        )

    tensors: dict[str, torch.Tensor] = {}
    for entry in entries:
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=entry["offset"])
        tensors[entry["name"]] = torch.from_numpy(arr.copy()).reshape(entry["shape"])
    return Checkpoint(
        component=manifest.get("component", ""),
        step=int(manifest.get("step", 0)),
        config=manifest.get("config", {}),
        tensors=tensors,
    )


def pack_modules(component: str, step: int, config: dict, **modules) -> Checkpoint:
    """Collect `<module>.<param>` tensors from named nn.Modules (or tensors)."""
    tensors: dict[str, torch.Tensor] = {}
    for mod_name, module in modules.items():
        if isinstance(module, torch.Tensor):
            tensors[mod_name] = module.detach().clone()
            continue
        for param_name, value in module.state_dict().items():
            tensors[f"{mod_name}.{param_name}"] = value.detach().clone()
    return Checkpoint(component=component, step=step, config=config, tensors=tensors)


def unpack_into(ckpt: Checkpoint, **modules) -> None:
    """Load `<module>.<param>` tensors back into named nn.Modules."""
    for mod_name, module in modules.items():
        prefix = f"{mod_name}."
        state = {
            name[len(prefix):]: tensor
            for name, tensor in ckpt.tensors.items()
            if name.startswith(prefix)
        }
        if not state:
            raise CheckpointFormatError(f"checkpoint has no tensors for module {mod_name!r}")
        module.load_state_dict(state)
