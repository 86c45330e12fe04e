"""Checkpoint format round-trip and tamper detection."""

import numpy as np
import pytest

from collusim.checkpoint import load_checkpoint, save_checkpoint
from collusim.errors import CheckpointError
from collusim.nn import init_mlp


@pytest.fixture
def nets():
    rng = np.random.default_rng(0)
    return {
        "actor": init_mlp((5, 8, 3), rng),
        "critic": init_mlp((5, 8, 1), rng),
    }


def test_round_trip_exact(tmp_path, nets):
    p = tmp_path / "x.ckpt"
    save_checkpoint(str(p), nets, {"alpha": "0.5"})
    loaded, meta = load_checkpoint(str(p))
    assert meta == {"alpha": "0.5"}
    assert set(loaded) == {"actor", "critic"}
    for name in nets:
        assert loaded[name].layer_sizes == nets[name].layer_sizes
        assert np.array_equal(loaded[name].params, nets[name].params)


def test_tampered_manifest_rejected(tmp_path, nets):
    p = tmp_path / "x.ckpt"
    save_checkpoint(str(p), nets)
    text = p.read_text().replace("layers 5 8 3", "layers 5 9 3", 1)
    p.write_text(text)
    with pytest.raises(CheckpointError, match="manifest mismatch"):
        load_checkpoint(str(p))


def test_truncated_file_rejected(tmp_path, nets):
    p = tmp_path / "x.ckpt"
    save_checkpoint(str(p), nets)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(p))


def test_bad_header_rejected(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_text("WRONG v1\n")
    with pytest.raises(CheckpointError, match="header"):
        load_checkpoint(str(p))


def test_missing_file_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "nope.ckpt"))


def test_non_numeric_value_rejected(tmp_path, nets):
    p = tmp_path / "x.ckpt"
    save_checkpoint(str(p), {"actor": nets["actor"]})
    lines = p.read_text().splitlines()
    lines[4] = lines[4].replace(lines[4].split()[0], "bogus", 1)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(CheckpointError, match="non-numeric"):
        load_checkpoint(str(p))
