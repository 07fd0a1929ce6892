"""Checkpoint manifest + blob format: round trips and corruption handling."""

import json

import pytest
import torch

from invedit.checkpoint import (
    Checkpoint,
    load_checkpoint,
    pack_modules,
    save_checkpoint,
    unpack_into,
)
from invedit.errors import CheckpointFormatError


def sample_ckpt():
    torch.manual_seed(2)
    return Checkpoint(
        component="demo", step=7, config={"generator": {"d": 4}},
        tensors={
            "a.weight": torch.randn(3, 4),
            "a.bias": torch.randn(3),
            "b.scale": torch.randn(2, 2, 2),
        },
    )


def test_roundtrip_bit_exact(tmp_path):
    ckpt = sample_ckpt()
    save_checkpoint(ckpt, tmp_path / "demo")
    loaded = load_checkpoint(tmp_path / "demo")
    assert loaded.component == "demo" and loaded.step == 7
    for name, tensor in ckpt.tensors.items():
        assert torch.equal(loaded.tensors[name], tensor)
    # save -> load -> save produces byte-identical blob and manifest
    save_checkpoint(loaded, tmp_path / "again")
    assert (tmp_path / "again.bin").read_bytes() == (tmp_path / "demo.bin").read_bytes()
    assert json.loads((tmp_path / "again.json").read_text()) == \
        json.loads((tmp_path / "demo.json").read_text())


def test_offsets_match_cumulative_sum_oracle():
    ckpt = Checkpoint(
        component="two", step=0, config={},
        tensors={"first": torch.zeros(2, 3), "second": torch.zeros(5)},
    )
    manifest = ckpt.manifest()
    sizes = [2 * 3 * 4, 5 * 4]
    offsets = [0, sizes[0]]
    got = [(e["name"], e["offset"]) for e in manifest["tensors"]]
    assert got == [("first", offsets[0]), ("second", offsets[1])]
    assert len(ckpt.blob()) == sum(sizes)


def test_truncated_blob_rejected(tmp_path):
    save_checkpoint(sample_ckpt(), tmp_path / "demo")
    blob = (tmp_path / "demo.bin").read_bytes()
    (tmp_path / "demo.bin").write_bytes(blob[:-4])
    with pytest.raises(CheckpointFormatError, match="bytes"):
        load_checkpoint(tmp_path / "demo")


def test_manifest_overclaim_rejected(tmp_path):
    save_checkpoint(sample_ckpt(), tmp_path / "demo")
    manifest = json.loads((tmp_path / "demo.json").read_text())
    manifest["tensors"][-1]["shape"] = [100, 100]
    (tmp_path / "demo.json").write_text(json.dumps(manifest))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "demo")


def test_overlapping_offsets_rejected(tmp_path):
    save_checkpoint(sample_ckpt(), tmp_path / "demo")
    manifest = json.loads((tmp_path / "demo.json").read_text())
    manifest["tensors"][1]["offset"] -= 4
    (tmp_path / "demo.json").write_text(json.dumps(manifest))
    with pytest.raises(CheckpointFormatError, match="overlap"):
        load_checkpoint(tmp_path / "demo")


def test_unknown_dtype_rejected(tmp_path):
    save_checkpoint(sample_ckpt(), tmp_path / "demo")
    manifest = json.loads((tmp_path / "demo.json").read_text())
    manifest["tensors"][0]["dtype"] = "f64"
    (tmp_path / "demo.json").write_text(json.dumps(manifest))
    with pytest.raises(CheckpointFormatError, match="dtype"):
        load_checkpoint(tmp_path / "demo")


def test_missing_files_rejected(tmp_path):
    with pytest.raises(CheckpointFormatError, match="missing"):
        load_checkpoint(tmp_path / "nope")


def test_pack_unpack_modules(tmp_path):
    torch.manual_seed(3)
    lin = torch.nn.Linear(4, 2)
    conv = torch.nn.Conv2d(3, 5, 3)
    ckpt = pack_modules("pair", 11, {"x": 1}, lin=lin, conv=conv)
    save_checkpoint(ckpt, tmp_path / "pair")
    loaded = load_checkpoint(tmp_path / "pair")

    lin2 = torch.nn.Linear(4, 2)
    conv2 = torch.nn.Conv2d(3, 5, 3)
    unpack_into(loaded, lin=lin2, conv=conv2)
    assert torch.equal(lin2.weight, lin.weight)
    assert torch.equal(lin2.bias, lin.bias)
    assert torch.equal(conv2.weight, conv.weight)

    with pytest.raises(CheckpointFormatError, match="no tensors"):
        unpack_into(loaded, other=torch.nn.Linear(2, 2))
