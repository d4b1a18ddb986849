"""Model construction, data preparation and sample generation keyed by model tag."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from aevb_data import (
    IMAGE_SIDE,
    INIT_STREAM,
    NORMALIZE_TEST_STREAM,
    NORMALIZE_TRAIN_STREAM,
    RunConfig,
    Split,
)
from data_io import (
    ImageDataset,
    IncompatibleModeError,
    binarize,
    default_fa_spec,
    generate_fa_synthetic,
    load_mnist,
    normalize,
    take_subset,
    to_row_sequences,
)
from model_fa import FaModel, fa_generate
from model_gmvae import GmvaeModel, gmvae_generate
from model_vae_cvae import CvaeModel, VaeModel, cvae_generate, vae_generate
from model_vrnn import VrnnModel, vrnn_generate
from tensor_core import SeededRng
from training import LatentModel

PREPROCESSING = {
    "fa": "synthetic",
    "vae": "normalized",
    "cvae": "normalized",
    "gmvae": "binarized",
    "vrnn": "row_sequence",
}
GENERATION_MODES = {
    "fa": "unconditional",
    "vae": "unconditional",
    "cvae": "per_label",
    "gmvae": "per_cluster",
    "vrnn": "sequential",
}
LATENT_EXPORT_MODELS = ("vae", "cvae")


def build_model(config: RunConfig) -> LatentModel:
    rng = SeededRng(config.seed, INIT_STREAM)
    pixels = IMAGE_SIDE * IMAGE_SIDE
    if config.model == "fa":
        return FaModel(config.data_dim, config.latent_dim, rng, config.posterior, config.kl)
    if config.model == "vae":
        return VaeModel(pixels, config.latent_dim, rng, config.hidden, config.dropout, config.kl)
    if config.model == "cvae":
        return CvaeModel(
            pixels, config.latent_dim, config.num_classes, rng, config.hidden, config.dropout, config.kl,
            config.label_mode, config.seed,
        )
    if config.model == "gmvae":
        return GmvaeModel(
            pixels, config.latent_dim, config.num_classes, rng, config.hidden, config.estimator, config.temperature
        )
    if config.model == "vrnn":
        return VrnnModel(IMAGE_SIDE, config.latent_dim, rng, config.hidden_size, config.hidden, config.kl)
    raise IncompatibleModeError(f"Unknown model: {config.model}")


@dataclass(frozen=True)
class RunData:
    train: Split
    test: Split
    preprocessing: str
    true_evidence: Optional[float] = None  # fa: exact test evidence of the generating model


def prepare_images(dataset: ImageDataset, model: str, config: RunConfig, stream: int) -> ImageDataset:
    """Apply the preprocessing the model is trained on."""
    mode = PREPROCESSING.get(model)
    if mode == "normalized":
        return normalize(dataset, SeededRng(config.seed, stream))
    if mode == "binarized":
        return binarize(dataset, config.binarize_threshold)
    if mode == "row_sequence":
        return to_row_sequences(binarize(dataset, config.binarize_threshold))
    raise IncompatibleModeError(f"The {model} model does not train on images")


def load_data(config: RunConfig) -> RunData:
    if config.model == "fa":
        spec = default_fa_spec(config.synthetic_n, config.data_dim, config.latent_dim, config.seed)
        synthetic = generate_fa_synthetic(spec)
        return RunData(synthetic.train, synthetic.test, "synthetic", synthetic.true_evidence)
    train = take_subset(load_mnist(config.data_dir, "train"), config.train_size, config.seed)
    test = take_subset(load_mnist(config.data_dir, "test"), config.test_size, config.seed)
    return RunData(
        prepare_images(train, config.model, config, NORMALIZE_TRAIN_STREAM).to_split(),
        prepare_images(test, config.model, config, NORMALIZE_TEST_STREAM).to_split(),
        PREPROCESSING[config.model],
    )


def check_data_matches(tag: str, preprocessing: str) -> None:
    """A checkpoint can only be evaluated on data prepared the way its model was trained."""
    expected = PREPROCESSING.get(tag)
    if expected != preprocessing:
        raise IncompatibleModeError(f"The {tag} model expects {expected} data, got {preprocessing}")


@dataclass(frozen=True)
class Generated:
    """Raw per-example values (one row each) and, for image models, grids of shape (rows, cols, H, W)."""

    values: np.ndarray
    mean_grid: Optional[np.ndarray] = None
    sample_grid: Optional[np.ndarray] = None


def _square(flat: np.ndarray) -> np.ndarray:
    return flat.reshape(flat.shape[:-1] + (IMAGE_SIDE, IMAGE_SIDE))


def generate(model: LatentModel, mode: str, n: int, rng: SeededRng) -> Generated:
    """Samples from a trained model; conditional modes make one row of n images per class."""
    expected = GENERATION_MODES.get(model.tag)
    if mode != expected:
        raise IncompatibleModeError(f"The {model.tag} model generates in {expected} mode, not {mode}")
    if model.tag == "fa":
        return Generated(fa_generate(model.generative, n, rng))
    if model.tag == "vae":
        means, samples = vae_generate(model.nets, n, rng)
        return Generated(means, _square(means)[None], _square(samples)[None])
    if model.tag == "vrnn":
        probs, rows = vrnn_generate(model.nets, IMAGE_SIDE, n, rng)
        return Generated(probs.reshape(n, -1), probs[None], rows[None])

    classes = np.eye(model.num_classes)
    draw = cvae_generate if model.tag == "cvae" else gmvae_generate
    means, samples = zip(*(draw(model.nets, y, n, rng) for y in classes))
    means, samples = np.stack(means), np.stack(samples)
    return Generated(means.reshape(-1, means.shape[-1]), _square(means), _square(samples))


def export_latents(model: LatentModel, split: Split) -> np.ndarray:
    """Latent means with the label appended as the last column."""
    if model.tag not in LATENT_EXPORT_MODELS:
        raise IncompatibleModeError(f"Latent export supports {', '.join(LATENT_EXPORT_MODELS)}, not {model.tag}")
    means = model.latent_means(split.x, split.labels)
    return np.column_stack([means, split.labels])
