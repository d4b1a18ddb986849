"""Unit tests for binary checkpoints and image grids."""

import numpy as np
import pygame
import pytest

from checkpoint import (
    Checkpoint,
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    restore,
    save_checkpoint,
    snapshot,
)
from images import read_pgm, tile_grid, write_pgm, write_png
from tensor_core import parameter


def make_checkpoint() -> Checkpoint:
    return Checkpoint(
        tag="fa",
        step=250,
        config_text="# resolved run configuration\nmodel = fa\n",
        tensors={"W": np.arange(6.0).reshape(3, 2) / 7.0, "pre_sigma": np.array([-0.1, 0.2, 1e-300])},
    )


class TestCheckpoint:
    """Tests for the checkpoint file format."""

    def test_save_and_load(self, tmp_path):
        original = make_checkpoint()
        save_checkpoint(tmp_path / "final.ckpt", original)
        loaded = load_checkpoint(tmp_path / "final.ckpt")
        assert (loaded.tag, loaded.step, loaded.config_text) == (original.tag, original.step, original.config_text)
        for name, values in original.tensors.items():
            np.testing.assert_array_equal(loaded.tensors[name], values)

    def test_encoding_is_byte_stable(self):
        assert encode_checkpoint(make_checkpoint()) == encode_checkpoint(make_checkpoint())

    def test_bad_magic(self):
        blob = encode_checkpoint(make_checkpoint())
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            decode_checkpoint(b"XXXXXXXX" + blob[8:])

    def test_unsupported_version(self):
        blob = bytearray(encode_checkpoint(make_checkpoint()))
        blob[8] = 99
        with pytest.raises(CheckpointError, match="version"):
            decode_checkpoint(bytes(blob))

    def test_truncated(self):
        with pytest.raises(CheckpointError, match="truncated"):
            decode_checkpoint(encode_checkpoint(make_checkpoint())[:-3])

    def test_trailing_bytes(self):
        with pytest.raises(CheckpointError, match="trailing"):
            decode_checkpoint(encode_checkpoint(make_checkpoint()) + b"\x00")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.ckpt")


class TestRestore:
    """Tests for writing checkpoint tensors back into parameters."""

    def test_snapshot_and_restore(self):
        params = {"a": parameter(np.ones(2), name="a"), "b": parameter(np.zeros((2, 2)), name="b")}
        saved = snapshot(params)
        params["a"].data = np.full(2, 5.0)
        restore(params, saved)
        np.testing.assert_array_equal(params["a"].data, np.ones(2))

    def test_snapshot_is_a_copy(self):
        params = {"a": parameter(np.ones(2), name="a")}
        saved = snapshot(params)
        params["a"].data[0] = 9.0
        assert saved["a"][0] == 1.0

    def test_missing_name(self):
        params = {"a": parameter(np.ones(2), name="a")}
        with pytest.raises(CheckpointError, match="missing"):
            restore(params, {"b": np.ones(2)})

    def test_shape_mismatch(self):
        params = {"a": parameter(np.ones(2), name="a")}
        with pytest.raises(CheckpointError, match="shape"):
            restore(params, {"a": np.ones(3)})


class TestImages:
    """Tests for sample grids."""

    def test_tile_grid_layout(self):
        images = np.zeros((2, 3, 4, 5))
        images[1, 2] = 1.0
        grid = tile_grid(images, padding=2)
        assert grid.shape == (2 * 6 + 2, 3 * 7 + 2)
        assert grid.dtype == np.uint8
        assert (grid[8:12, 16:21] == 255).all()
        assert grid.sum() == 255 * 4 * 5

    def test_pgm_file(self, tmp_path):
        grid = (np.arange(12).reshape(3, 4) * 20).astype(np.uint8)
        write_pgm(tmp_path / "grid.pgm", grid)
        assert (tmp_path / "grid.pgm").read_bytes().startswith(b"P5\n4 3\n255\n")
        np.testing.assert_array_equal(read_pgm(tmp_path / "grid.pgm"), grid)

    def test_png_preview(self, tmp_path):
        grid = np.zeros((3, 5), dtype=np.uint8)
        write_png(tmp_path / "grid.png", grid, scale=2)
        assert pygame.image.load(str(tmp_path / "grid.png")).get_size() == (10, 6)
