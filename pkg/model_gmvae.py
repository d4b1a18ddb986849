"""Gaussian-mixture VAE over binarized images.

Generative model: y ~ Cat(1/C), z | y ~ N(mu(y), sigma(y)), x | z ~ Bernoulli(p(z)).
Inference: q(y | x) from a classifier, q(z | x, y) from an encoder on (x || y).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from distributions import (
    DiagGaussian,
    OneHotCategorical,
    RelaxedOneHotCategorical,
    bernoulli_from_logits,
    entropy_categorical,
    kl_categorical,
    kl_diag_gaussian,
    log_prob,
    relaxed_log_prob_from_log,
    rsample,
    rsample_log,
    sample,
)
from networks import MLP, GaussianNet, glorot_normal, joined
from tensor_core import DomainError, SeededRng, Tensor, exp, parameter, softmax, softplus

ESTIMATORS = ("marginalized", "gumbel_logprob", "gumbel_kl", "sampled_y")
DEFAULT_TEMPERATURE = 0.5


class GmvaeNets:
    def __init__(
        self,
        data_dim: int,
        latent_dim: int,
        num_classes: int,
        rng: SeededRng,
        hidden: Sequence[int] = (500, 500),
    ):
        self.data_dim = data_dim
        self.latent_dim = latent_dim
        self.num_classes = num_classes
        # one-hot y selects a column of each prior matrix
        self.prior_mu = parameter(glorot_normal(rng, num_classes, latent_dim), name="prior.mu")
        self.prior_pre_sigma = parameter(np.zeros((num_classes, latent_dim)), name="prior.pre_sigma")
        self.decoder = MLP("decoder", (latent_dim, *hidden, data_dim), rng)
        self.classifier = MLP("classifier", (data_dim, *hidden, num_classes), rng)
        self.encoder = GaussianNet("encoder", data_dim + num_classes, hidden, latent_dim, rng)

    @property
    def prior_logits(self) -> Tensor:
        return Tensor(np.zeros(self.num_classes))

    @property
    def theta(self) -> dict[str, Tensor]:
        return {
            self.prior_mu.name: self.prior_mu,
            self.prior_pre_sigma.name: self.prior_pre_sigma,
            **self.decoder.parameters(),
        }

    @property
    def phi(self) -> dict[str, Tensor]:
        return {**self.classifier.parameters(), **self.encoder.parameters()}

    def prior(self, y) -> DiagGaussian:
        y = y if isinstance(y, Tensor) else Tensor(y)
        return DiagGaussian(y @ self.prior_mu, softplus(y @ self.prior_pre_sigma))

    def logits(self, x) -> Tensor:
        return self.classifier(x)


@dataclass(frozen=True)
class ContingencyTable:
    """counts[k, c]: examples assigned to cluster k whose true label is c."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _bracket(nets: GmvaeNets, x: np.ndarray, y, eps: np.ndarray) -> Tensor:
    """log p(x | z^s) - KL(q(z | x, y) || p(z | y)) for each row."""
    q_z = nets.encoder(joined(x, y))
    z = rsample(q_z, None, eps)
    reconstruction = log_prob(bernoulli_from_logits(nets.decoder(z)), x)
    return reconstruction - kl_diag_gaussian(q_z, nets.prior(y))


def _uniform_categorical(nets: GmvaeNets) -> OneHotCategorical:
    return OneHotCategorical(nets.prior_logits)


def gmvae_elbo_marginalized(
    nets: GmvaeNets, x: np.ndarray, rng: Optional[SeededRng], noise: Optional[np.ndarray] = None
) -> Tensor:
    """Sum over y of q(y | x) times the bracketed term, minus KL(q(y | x) || p(y)).

    Every class is evaluated in one pass over C stacked copies of the batch (class-major).
    """
    batch, classes = x.shape[0], nets.num_classes
    logits = nets.logits(x)
    eps = rng.normal((classes * batch, nets.latent_dim)) if noise is None else noise
    x_rep = np.tile(x, (classes, 1))
    y_rep = np.repeat(np.eye(classes), batch, axis=0)
    per_class = _bracket(nets, x_rep, y_rep, eps).reshape(classes, batch).T
    q_y = OneHotCategorical(logits)
    return (softmax(logits) * per_class).sum(axis=-1) - kl_categorical(q_y, _uniform_categorical(nets))


def gmvae_elbo_sampled_y(nets: GmvaeNets, x: np.ndarray, rng: SeededRng) -> Tensor:
    """Bracketed term at an exact draw y ~ q(y | x), minus KL(q(y | x) || p(y))."""
    logits = nets.logits(x)
    eps = rng.normal((x.shape[0], nets.latent_dim))
    q_y = OneHotCategorical(logits)
    y = sample(q_y, rng)
    return _bracket(nets, x, y, eps) - kl_categorical(q_y, _uniform_categorical(nets))


def gmvae_elbo_gumbel_logprob(nets: GmvaeNets, x: np.ndarray, tau: float, rng: SeededRng) -> Tensor:
    """Full log-ratio at a jointly reparametrized (y~, z) with relaxed densities for y."""
    logits = nets.logits(x)
    eps = rng.normal((x.shape[0], nets.latent_dim))
    q_y = RelaxedOneHotCategorical(logits, tau)
    log_y = rsample_log(q_y, rng)
    y = exp(log_y)
    q_z = nets.encoder(joined(x, y))
    z = rsample(q_z, None, eps)
    p_y = RelaxedOneHotCategorical(nets.prior_logits, tau)
    return (
        log_prob(bernoulli_from_logits(nets.decoder(z)), x)
        + log_prob(nets.prior(y), z)
        + relaxed_log_prob_from_log(p_y, log_y)
        - relaxed_log_prob_from_log(q_y, log_y)
        - log_prob(q_z, z)
    )


def gmvae_elbo_gumbel_kl(nets: GmvaeNets, x: np.ndarray, tau: float, rng: SeededRng) -> Tensor:
    """Bracketed term at a relaxed y~, with the analytic KL on the one-hot head."""
    logits = nets.logits(x)
    eps = rng.normal((x.shape[0], nets.latent_dim))
    y = exp(rsample_log(RelaxedOneHotCategorical(logits, tau), rng))
    q_y = OneHotCategorical(logits)
    return _bracket(nets, x, y, eps) - kl_categorical(q_y, _uniform_categorical(nets))


def gmvae_cluster(nets: GmvaeNets, x: np.ndarray) -> np.ndarray:
    """Argmax of the classifier logits; ties go to the lowest index."""
    return np.argmax(nets.logits(np.atleast_2d(x)).data, axis=-1)


def conditional_entropy(nets: GmvaeNets, xs: np.ndarray) -> float:
    return float(np.mean(entropy_categorical(OneHotCategorical(nets.logits(xs))).data))


def contingency_table(predicted: np.ndarray, labels: np.ndarray, num_classes: int) -> ContingencyTable:
    """Cluster-by-label counts; widened to more columns when labels outnumber the clusters."""
    predicted = np.asarray(predicted, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    num_labels = max(num_classes, int(labels.max()) + 1) if labels.size else num_classes
    counts = np.zeros((num_classes, num_labels), dtype=np.int64)
    np.add.at(counts, (predicted, labels), 1)
    return ContingencyTable(counts)


def clustering_accuracy(table: ContingencyTable) -> float:
    """Best one-to-one cluster-to-label matching, as a fraction of all scored examples."""
    if table.total == 0:
        raise DomainError("clustering_accuracy: empty contingency table")
    rows, cols = optimize.linear_sum_assignment(table.counts, maximize=True)
    return float(table.counts[rows, cols].sum()) / table.total


def gmvae_generate(nets: GmvaeNets, y: np.ndarray, n: int, rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral sampling z ~ p(z | y), x ~ Bernoulli(p(z)); returns probabilities and binary images."""
    ys = np.tile(np.asarray(y, dtype=np.float64).reshape(1, -1), (n, 1))
    z = sample(nets.prior(ys), rng)
    pixels = bernoulli_from_logits(nets.decoder(z))
    return pixels.probs.numpy(), sample(pixels, rng)


class GmvaeModel:
    tag = "gmvae"

    def __init__(
        self,
        data_dim: int,
        latent_dim: int,
        num_classes: int,
        rng: SeededRng,
        hidden: Sequence[int] = (500, 500),
        estimator: str = "marginalized",
        temperature: float = DEFAULT_TEMPERATURE,
    ):
        if estimator not in ESTIMATORS:
            raise ValueError(f"Unknown GMVAE estimator: {estimator}")
        self.nets = GmvaeNets(data_dim, latent_dim, num_classes, rng, hidden)
        self.estimator = estimator
        self.temperature = temperature

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

    def elbo(self, x: np.ndarray, labels: Optional[np.ndarray], rng: SeededRng, train: bool = True) -> Tensor:
        if self.estimator == "marginalized":
            return gmvae_elbo_marginalized(self.nets, x, rng)
        if self.estimator == "gumbel_logprob":
            return gmvae_elbo_gumbel_logprob(self.nets, x, self.temperature, rng)
        if self.estimator == "gumbel_kl":
            return gmvae_elbo_gumbel_kl(self.nets, x, self.temperature, rng)
        return gmvae_elbo_sampled_y(self.nets, x, rng)

    def eval_extras(self, x: np.ndarray, labels: Optional[np.ndarray]) -> dict[str, float]:
        extras = {"cond_entropy": conditional_entropy(self.nets, x)}
        if labels is not None:
            table = contingency_table(gmvae_cluster(self.nets, x), labels, self.num_classes)
            extras["cluster_acc"] = clustering_accuracy(table)
        return extras
