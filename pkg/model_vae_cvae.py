"""VAE and conditional VAE with a Continuous Bernoulli likelihood over normalized images."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from aevb_data import LABEL_STREAM
from distributions import (
    DiagGaussian,
    check_one_hot,
    continuous_bernoulli,
    kl_diag_gaussian,
    log_prob,
    one_hot,
    rsample,
    sample,
    standard_normal,
)
from networks import MLP, GaussianHead, GaussianNet, joined
from tensor_core import SeededRng, Tensor, sigmoid

DEFAULT_HIDDEN = (500, 500)
DEFAULT_DROPOUT = 0.1
LABEL_MODES = ("true", "shuffled", "constant")


class VaeNets:
    """Decoder lambda(z): L -> hidden -> D (sigmoid); encoder: D -> hidden -> (mu, sigma)."""

    def __init__(
        self,
        data_dim: int,
        latent_dim: int,
        rng: SeededRng,
        hidden: Sequence[int] = DEFAULT_HIDDEN,
        dropout_rate: float = DEFAULT_DROPOUT,
    ):
        self.data_dim = data_dim
        self.latent_dim = latent_dim
        self.decoder = MLP("decoder", (latent_dim, *hidden, data_dim), rng, dropout_rate)
        self.encoder = GaussianNet("encoder", data_dim, hidden, latent_dim, rng, dropout_rate)

    def parameters(self) -> dict[str, Tensor]:
        return {**self.decoder.parameters(), **self.encoder.parameters()}


class CvaeNets:
    """Decoder on (z || y), a linear label prior y -> (mu, sigma), encoder on (x || y)."""

    def __init__(
        self,
        data_dim: int,
        latent_dim: int,
        num_classes: int,
        rng: SeededRng,
        hidden: Sequence[int] = DEFAULT_HIDDEN,
        dropout_rate: float = DEFAULT_DROPOUT,
    ):
        self.data_dim = data_dim
        self.latent_dim = latent_dim
        self.num_classes = num_classes
        self.decoder = MLP("decoder", (latent_dim + num_classes, *hidden, data_dim), rng, dropout_rate)
        self.prior = GaussianHead("prior", num_classes, latent_dim, rng)
        self.encoder = GaussianNet("encoder", data_dim + num_classes, hidden, latent_dim, rng, dropout_rate)

    @property
    def theta(self) -> dict[str, Tensor]:
        return {**self.decoder.parameters(), **self.prior.parameters()}

    @property
    def phi(self) -> dict[str, Tensor]:
        return self.encoder.parameters()


def _decode(decoder: MLP, inputs, rng: Optional[SeededRng], train: bool) -> Tensor:
    return sigmoid(decoder(inputs, rng, train))


def vae_elbo_estimator(
    nets: VaeNets,
    x: np.ndarray,
    rng: Optional[SeededRng],
    train: bool = True,
    kl: str = "analytic",
    noise: Optional[np.ndarray] = None,
    prior: Optional[DiagGaussian] = None,
) -> Tensor:
    """Per-example log p(x | z^s) - KL(q(z | x) || prior) with z^s = mu(x) + sigma(x) * eps.

    prior defaults to N(0, I); passing one gives the learnable-prior variant.
    """
    q = nets.encoder(x, rng, train)
    z = rsample(q, rng, noise)
    reconstruction = log_prob(continuous_bernoulli(_decode(nets.decoder, z, rng, train)), x)
    p = prior if prior is not None else standard_normal(nets.latent_dim)
    if kl == "analytic":
        return reconstruction - kl_diag_gaussian(q, p)
    if kl == "sampled":
        return reconstruction + log_prob(p, z) - log_prob(q, z)
    raise ValueError(f"Unknown KL mode: {kl}")


def vae_generate(nets: VaeNets, n: int, rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    """Decode n prior draws; returns the lambda grids and one Continuous Bernoulli sample per image."""
    z = rng.normal((n, nets.latent_dim))
    lambdas = continuous_bernoulli(_decode(nets.decoder, z, None, False))
    return lambdas.lambdas.numpy(), sample(lambdas, rng)


def latent_means(nets, xs: np.ndarray, ys: Optional[np.ndarray] = None) -> np.ndarray:
    """Encoder means with dropout off; the CVAE encoder also takes the one-hot labels."""
    inputs = xs if ys is None else np.concatenate([xs, ys], axis=1)
    return nets.encoder(inputs, None, False).mu.numpy()


def cvae_elbo_estimator(
    nets: CvaeNets,
    x: np.ndarray,
    y: np.ndarray,
    rng: Optional[SeededRng],
    train: bool = True,
    kl: str = "analytic",
    noise: Optional[np.ndarray] = None,
) -> Tensor:
    """Per-example log p(x | z^s, y) - KL(q(z | x, y) || p(z | y))."""
    check_one_hot("cvae_elbo_estimator", np.asarray(y, dtype=np.float64))
    q = nets.encoder(np.concatenate([x, y], axis=1), rng, train)
    p = nets.prior(Tensor(y))
    z = rsample(q, rng, noise)
    lambdas = _decode(nets.decoder, joined(z, y), rng, train)
    reconstruction = log_prob(continuous_bernoulli(lambdas), x)
    if kl == "analytic":
        return reconstruction - kl_diag_gaussian(q, p)
    if kl == "sampled":
        return reconstruction + log_prob(p, z) - log_prob(q, z)
    raise ValueError(f"Unknown KL mode: {kl}")


def cvae_generate(nets: CvaeNets, y: np.ndarray, n: int, rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral sampling z ~ p(z | y), x ~ decoder(z, y) for n copies of one label."""
    ys = np.tile(np.asarray(y, dtype=np.float64).reshape(1, -1), (n, 1))
    check_one_hot("cvae_generate", ys)
    p = nets.prior(Tensor(ys))
    z = Tensor(sample(p, rng))
    lambdas = continuous_bernoulli(_decode(nets.decoder, joined(z, ys), None, False))
    return lambdas.lambdas.numpy(), sample(lambdas, rng)


class VaeModel:
    tag = "vae"

    def __init__(
        self,
        data_dim: int,
        latent_dim: int,
        rng: SeededRng,
        hidden: Sequence[int] = DEFAULT_HIDDEN,
        dropout_rate: float = DEFAULT_DROPOUT,
        kl: str = "analytic",
    ):
        self.nets = VaeNets(data_dim, latent_dim, rng, hidden, dropout_rate)
        self.kl = kl

    @property
    def theta(self) -> dict[str, Tensor]:
        return self.nets.decoder.parameters()

    @property
    def phi(self) -> dict[str, Tensor]:
        return self.nets.encoder.parameters()

    def parameters(self) -> dict[str, Tensor]:
        return self.nets.parameters()

    def elbo(self, x: np.ndarray, labels: Optional[np.ndarray], rng: SeededRng, train: bool = True) -> Tensor:
        return vae_elbo_estimator(self.nets, x, rng, train, self.kl)

    def eval_extras(self, x: np.ndarray, labels: Optional[np.ndarray]) -> dict[str, float]:
        return {}

    def latent_means(self, x: np.ndarray, labels: Optional[np.ndarray]) -> np.ndarray:
        return latent_means(self.nets, x)


class CvaeModel:
    """Conditional VAE; label_mode replaces the labels it sees by shuffled or constant ones."""

    tag = "cvae"

    def __init__(
        self,
        data_dim: int,
        latent_dim: int,
        num_classes: int,
        rng: SeededRng,
        hidden: Sequence[int] = DEFAULT_HIDDEN,
        dropout_rate: float = DEFAULT_DROPOUT,
        kl: str = "analytic",
        label_mode: str = "true",
        seed: int = 0,
    ):
        if label_mode not in LABEL_MODES:
            raise ValueError(f"Unknown label mode: {label_mode}")
        self.nets = CvaeNets(data_dim, latent_dim, num_classes, rng, hidden, dropout_rate)
        self.kl = kl
        self.label_mode = label_mode
        self.seed = seed  # shuffles labels outside training

    @property
    def num_classes(self) -> int:
        return self.nets.num_classes

    @property
    def theta(self) -> dict[str, Tensor]:
        return self.nets.theta

    @property
    def phi(self) -> dict[str, Tensor]:
        return self.nets.phi

    def parameters(self) -> dict[str, Tensor]:
        return {**self.theta, **self.phi}

    def condition(self, labels: np.ndarray, rng: Optional[SeededRng]) -> np.ndarray:
        """One-hot conditioning vectors for integer labels, under the configured label mode."""
        if labels is None:
            raise ValueError("CvaeModel needs labels")
        labels = np.asarray(labels, dtype=np.int64)
        if self.label_mode == "shuffled":
            labels = labels[rng.permutation(len(labels))]
        elif self.label_mode == "constant":
            labels = np.zeros_like(labels)
        return one_hot(labels, self.num_classes)

    def elbo(self, x: np.ndarray, labels: Optional[np.ndarray], rng: SeededRng, train: bool = True) -> Tensor:
        return cvae_elbo_estimator(self.nets, x, self.condition(labels, rng), rng, train, self.kl)

    def eval_extras(self, x: np.ndarray, labels: Optional[np.ndarray]) -> dict[str, float]:
        return {}

    def latent_means(self, x: np.ndarray, labels: Optional[np.ndarray]) -> np.ndarray:
        return latent_means(self.nets, x, self.condition(labels, SeededRng(self.seed, LABEL_STREAM)))
