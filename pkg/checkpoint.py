"""Binary checkpoints: model tag, step, config snapshot and a table of float64 tensors.

Layout (little-endian): magic "AEVBCKPT", u32 version, tag, u64 step, config text, u32 tensor
count, then per tensor its name, u32 rank, u32 extents and the raw float64 values. Strings are
a u32 byte length followed by UTF-8. Tensors are written in name order.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from tensor_core import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"AEVBCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is unreadable or does not fit the model it is loaded into."""


@dataclass(frozen=True)
class Checkpoint:
    tag: str
    step: int
    config_text: str
    tensors: dict[str, np.ndarray]
    version: int = FORMAT_VERSION


def _pack_text(text: str) -> bytes:
    encoded = text.encode("utf-8")
    return struct.pack("<I", len(encoded)) + encoded


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", checkpoint.version), _pack_text(checkpoint.tag)]
    parts.append(struct.pack("<Q", checkpoint.step))
    parts.append(_pack_text(checkpoint.config_text))
    parts.append(struct.pack("<I", len(checkpoint.tensors)))
    for name in sorted(checkpoint.tensors):
        array = np.ascontiguousarray(checkpoint.tensors[name], dtype="<f8")
        parts.append(_pack_text(name))
        parts.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        parts.append(array.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes, source: str):
        self.blob = blob
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.blob):
            raise CheckpointError(f"{self.source}: truncated checkpoint")
        chunk = self.blob[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (length,) = self.unpack("<I")
        return self.take(length).decode("utf-8")


def decode_checkpoint(blob: bytes, source: str = "checkpoint") -> Checkpoint:
    reader = _Reader(blob, source)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported format version {version}")
    tag = reader.text()
    (step,) = reader.unpack("<Q")
    config_text = reader.text()
    (count,) = reader.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = reader.text()
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) * 8
        tensors[name] = np.frombuffer(reader.take(size), dtype="<f8").reshape(shape).astype(np.float64)
    if reader.offset != len(blob):
        raise CheckpointError(f"{source}: {len(blob) - reader.offset} trailing bytes")
    return Checkpoint(tag, step, config_text, tensors, version)


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(checkpoint))
    logger.info("Saved %s checkpoint at step %d to %s", checkpoint.tag, checkpoint.step, path)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: no such checkpoint")
    return decode_checkpoint(path.read_bytes(), str(path))


def snapshot(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Copy the values of named tensors."""
    return {name: np.array(tensor.data, dtype=np.float64) for name, tensor in params.items()}


def restore(params: Mapping[str, Tensor], tensors: Mapping[str, np.ndarray]) -> None:
    """Write checkpoint values into named tensors in place; names and shapes must match exactly."""
    missing = sorted(set(params) - set(tensors))
    extra = sorted(set(tensors) - set(params))
    if missing or extra:
        raise CheckpointError(f"tensor names differ: missing {missing}, unexpected {extra}")
    for name, tensor in params.items():
        if tensors[name].shape != tensor.data.shape:
            raise CheckpointError(f"{name}: shape {tensors[name].shape} does not match {tensor.data.shape}")
        tensor.data = np.array(tensors[name], dtype=np.float64)
