"""Datasets: synthetic Factor Analysis data and MNIST in IDX format with its preprocessing modes."""

from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from aevb_data import IMAGE_SIDE, PREPROCESS_STREAM, Split
from model_fa import FaGenerative, fa_exact_evidence, fa_generate
from tensor_core import SeededRng, Tensor

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
GZIP_MAGIC = b"\x1f\x8b"
BINARIZE_THRESHOLD = 127.5

# Seed streams of the synthetic train and test splits
FA_TRAIN_STREAM = 10
FA_TEST_STREAM = 11
FA_TRUTH_STREAM = 12

PathLike = Union[str, Path]


class IdxFormatError(ValueError):
    """An IDX file is malformed."""


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class PreprocessingError(ValueError):
    """A preprocessing step was applied to data in the wrong state."""


class IncompatibleModeError(ValueError):
    """A model was asked for an operation or data preparation it does not support."""


# === SYNTHETIC FACTOR ANALYSIS DATA ===


@dataclass(frozen=True)
class FaSyntheticSpec:
    n: int
    true_W: np.ndarray
    true_noise_std: np.ndarray
    seed: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"FaSyntheticSpec: n must be at least 1, got {self.n}")
        if not (np.asarray(self.true_noise_std) > 0).all():
            raise ValueError("FaSyntheticSpec: noise std must be positive")
        if self.true_W.shape[0] != len(self.true_noise_std):
            raise ValueError(
                f"FaSyntheticSpec: W has {self.true_W.shape[0]} rows but {len(self.true_noise_std)} noise entries"
            )

    def generative(self) -> FaGenerative:
        pre_sigma = np.log(np.expm1(np.asarray(self.true_noise_std, dtype=np.float64)))
        return FaGenerative(W=Tensor(self.true_W), pre_sigma=Tensor(pre_sigma))


@dataclass(frozen=True)
class FaSyntheticData:
    train: Split
    test: Split
    true_evidence: float  # exact test evidence of the generating model
    spec: FaSyntheticSpec


def default_fa_spec(n: int = 1000, data_dim: int = 3, latent_dim: int = 2, seed: int = 0) -> FaSyntheticSpec:
    """Ground truth drawn the way the model class is initialized: W standard normal, std = softplus(normal)."""
    rng = SeededRng(seed, FA_TRUTH_STREAM)
    true_w = rng.normal((data_dim, latent_dim))
    true_std = np.logaddexp(0.0, rng.normal((data_dim,)))
    return FaSyntheticSpec(n=n, true_W=true_w, true_noise_std=true_std, seed=seed)


def generate_fa_synthetic(spec: FaSyntheticSpec) -> FaSyntheticData:
    """Ancestral train and test samples from disjoint streams, both de-meaned by the train mean."""
    truth = spec.generative()
    train = fa_generate(truth, spec.n, SeededRng(spec.seed, FA_TRAIN_STREAM))
    test = fa_generate(truth, spec.n, SeededRng(spec.seed, FA_TEST_STREAM))
    mean = train.mean(axis=0)
    train, test = train - mean, test - mean
    true_evidence = fa_exact_evidence(truth, test)
    logger.info("Synthetic FA data: n=%d, D=%d, true test evidence %.4f", spec.n, train.shape[1], true_evidence)
    return FaSyntheticData(Split(train), Split(test), true_evidence, spec)


# === IDX ===


@dataclass(frozen=True)
class ImageDataset:
    images: np.ndarray  # (N, rows * cols), or (N, rows, cols) for row sequences
    labels: np.ndarray
    preprocessing: str = "raw"  # raw | normalized | binarized | row_sequence
    image_shape: tuple[int, int] = (IMAGE_SIDE, IMAGE_SIDE)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def to_split(self) -> Split:
        return Split(self.images, self.labels)


def _read_bytes(path: PathLike) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == GZIP_MAGIC:
        return gzip.decompress(raw)
    return raw


def _parse_idx(path: PathLike, expected_magic: int) -> np.ndarray:
    payload = _read_bytes(path)
    if len(payload) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", payload[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: magic {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(payload) < header_end:
        raise TruncatedFileError(f"{path}: header cut short")
    dims = struct.unpack(f">{ndim}I", payload[4:header_end])
    expected = int(np.prod(dims))
    body = payload[header_end:]
    if len(body) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} data bytes, found {len(body)}")
    return np.frombuffer(body[:expected], dtype=np.uint8).reshape(dims)


def load_idx(path_images: PathLike, path_labels: PathLike) -> ImageDataset:
    """Raw images (pixels 0-255 as floats) and labels; gzip-compressed files are read transparently."""
    images = _parse_idx(path_images, IMAGE_MAGIC)
    labels = _parse_idx(path_labels, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    count, rows, cols = images.shape
    logger.debug("Loaded %d images of %dx%d from %s", count, rows, cols, path_images)
    return ImageDataset(
        images=images.reshape(count, rows * cols).astype(np.float64),
        labels=labels.astype(np.int64),
        image_shape=(rows, cols),
    )


def write_idx(path: PathLike, array: np.ndarray) -> None:
    """Write an unsigned-byte IDX file (gzip-compressed when the name ends in .gz)."""
    data = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | data.ndim) + struct.pack(f">{data.ndim}I", *data.shape)
    blob = header + data.tobytes()
    if str(path).endswith(".gz"):
        blob = gzip.compress(blob, mtime=0)
    Path(path).write_bytes(blob)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(data_dir: Path, stem: str) -> Path:
    for candidate in (data_dir / stem, data_dir / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"MNIST file {stem}[.gz] not found in {data_dir}")


def load_mnist(data_dir: PathLike, split: str) -> ImageDataset:
    images_stem, labels_stem = MNIST_FILES[split]
    root = Path(data_dir)
    return load_idx(_find(root, images_stem), _find(root, labels_stem))


# === PREPROCESSING ===


def _require_raw(dataset: ImageDataset, step: str) -> None:
    if dataset.preprocessing != "raw":
        raise PreprocessingError(f"{step}: expects raw pixels, got {dataset.preprocessing} data")


def normalize(dataset: ImageDataset, rng: SeededRng) -> ImageDataset:
    """(pixel + u) / 256 with u ~ Uniform[0, 1), drawn once."""
    _require_raw(dataset, "normalize")
    noisy = (dataset.images + rng.uniform(dataset.images.shape)) / 256.0
    return replace(dataset, images=noisy, preprocessing="normalized")


def binarize(dataset: ImageDataset, threshold: float = BINARIZE_THRESHOLD) -> ImageDataset:
    _require_raw(dataset, "binarize")
    return replace(dataset, images=(dataset.images > threshold).astype(np.float64), preprocessing="binarized")


def to_row_sequences(dataset: ImageDataset) -> ImageDataset:
    """View each binarized image as a sequence of its rows, shape (N, rows, cols)."""
    if dataset.preprocessing != "binarized":
        raise PreprocessingError(f"to_row_sequences: expects binarized data, got {dataset.preprocessing}")
    rows, cols = dataset.image_shape
    if dataset.images.ndim != 2 or dataset.images.shape[1] != rows * cols:
        raise PreprocessingError(f"to_row_sequences: images of shape {dataset.images.shape[1:]} are not {rows}x{cols}")
    if (rows, cols) != (IMAGE_SIDE, IMAGE_SIDE):
        raise IncompatibleModeError(
            f"to_row_sequences: the vrnn reads {IMAGE_SIDE} rows of {IMAGE_SIDE} pixels, got {rows}x{cols} images"
        )
    return replace(dataset, images=dataset.images.reshape(-1, rows, cols), preprocessing="row_sequence")


def take_subset(dataset: ImageDataset, n: Optional[int], seed: int) -> ImageDataset:
    """Deterministic subset of n examples, kept in their original order."""
    if n is None or n >= len(dataset):
        return dataset
    chosen = np.sort(SeededRng(seed, PREPROCESS_STREAM).permutation(len(dataset))[:n])
    return replace(dataset, images=dataset.images[chosen], labels=dataset.labels[chosen])
