"""Distributions used by the models: log-densities, sampling, entropies and closed-form KLs.

Every distribution is batched over a leading axis; log-densities and divergences sum over
the last (event) axis and return one value per row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import singledispatch
from typing import Optional, Union

import numpy as np
from scipy import special

from tensor_core import (
    DomainError,
    SeededRng,
    ShapeError,
    Tensor,
    as_tensor,
    cb_log_norm,
    clip,
    exp,
    inv_upper,
    log,
    log_softmax,
    logsumexp,
    softmax,
    softplus,
    absolute,
)

# Decoder lambdas are kept this far from 0 and 1
LAMBDA_CLAMP = 1e-6
# Logit standing in for log(0) in categorical probabilities
LOG_ZERO_LOGIT = -1e4
# Tolerance on row sums for simplex-valued arguments
SIMPLEX_TOLERANCE = 1e-9

LOG_2PI = math.log(2.0 * math.pi)

Value = Union[Tensor, np.ndarray]


class InfiniteDivergenceError(DomainError):
    """KL(q || p) is infinite because p puts zero mass where q does not."""


def _array(value: Value) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)


def _support_error(name: str, mask: np.ndarray) -> DomainError:
    index = tuple(int(i) for i in np.argwhere(mask)[0])
    return DomainError(f"log_prob: value outside the support of {name} at coordinate {index}")


@dataclass(frozen=True)
class DiagGaussian:
    """Gaussian with diagonal covariance diag(sigma^2)."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        np.broadcast_shapes(self.mu.shape, self.sigma.shape)
        if not (self.sigma.data > 0).all():
            raise DomainError("DiagGaussian: sigma must be strictly positive")

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return np.broadcast_shapes(self.mu.shape, self.sigma.shape)


@dataclass(frozen=True)
class FullGaussianCholesky:
    """Gaussian with covariance U^T U for an upper-triangular U shared across the batch."""

    mu: Tensor
    chol_upper: Tensor

    def __post_init__(self):
        k = self.mu.shape[-1]
        if self.chol_upper.shape != (k, k):
            raise ShapeError(
                f"FullGaussianCholesky: factor shape {self.chol_upper.shape} does not match mean dim {k}"
            )
        if (np.diag(self.chol_upper.data) == 0).any():
            raise DomainError("FullGaussianCholesky: zero on the diagonal of the Cholesky factor")

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    def covariance(self) -> np.ndarray:
        u = np.triu(self.chol_upper.data)
        return u.T @ u


@dataclass(frozen=True)
class ContinuousBernoulliVec:
    """Product of Continuous Bernoullis on [0, 1]^D."""

    lambdas: Tensor

    def __post_init__(self):
        lam = self.lambdas.data
        if not ((lam > 0) & (lam < 1)).all():
            raise DomainError("ContinuousBernoulliVec: lambdas must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class BernoulliVec:
    """Product of Bernoullis on {0, 1}^D; logits, when present, are used for stable log-masses."""

    probs: Tensor
    logits: Optional[Tensor] = None

    def __post_init__(self):
        p = self.probs.data
        if not ((p >= 0) & (p <= 1)).all():
            raise DomainError("BernoulliVec: probs must lie in [0, 1]")


@dataclass(frozen=True)
class OneHotCategorical:
    logits: Tensor

    @property
    def probs(self) -> Tensor:
        return softmax(self.logits)

    @property
    def num_classes(self) -> int:
        return self.logits.shape[-1]


@dataclass(frozen=True)
class RelaxedOneHotCategorical:
    """Gumbel-Softmax (Concrete) relaxation of a one-hot categorical at temperature tau."""

    logits: Tensor
    temperature: float

    def __post_init__(self):
        if not self.temperature > 0:
            raise DomainError(f"RelaxedOneHotCategorical: temperature must be positive, got {self.temperature}")

    @property
    def num_classes(self) -> int:
        return self.logits.shape[-1]


Distribution = Union[
    DiagGaussian,
    FullGaussianCholesky,
    ContinuousBernoulliVec,
    BernoulliVec,
    OneHotCategorical,
    RelaxedOneHotCategorical,
]


# === CONSTRUCTORS ===


def continuous_bernoulli(lambdas: Tensor) -> ContinuousBernoulliVec:
    """Clamp decoder outputs away from {0, 1} before building the distribution."""
    return ContinuousBernoulliVec(clip(lambdas, LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP))


def bernoulli_from_logits(logits: Tensor) -> BernoulliVec:
    return BernoulliVec(Tensor(special.expit(logits.data)), logits)


def categorical_from_probs(probs: Value) -> OneHotCategorical:
    """Build a one-hot categorical from probabilities, mapping zero mass to a vanishing logit."""
    p = _array(probs)
    with np.errstate(divide="ignore"):
        logits = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), LOG_ZERO_LOGIT)
    return OneHotCategorical(Tensor(logits))


def standard_normal(dim: int) -> DiagGaussian:
    return DiagGaussian(Tensor(np.zeros(dim)), Tensor(np.ones(dim)))


# === LOG DENSITIES ===


@singledispatch
def log_prob(dist, x: Value) -> Tensor:
    raise TypeError(f"log_prob: unsupported distribution {type(dist).__name__}")


@log_prob.register
def _(dist: DiagGaussian, x: Value) -> Tensor:
    if not np.isfinite(_array(x)).all():
        raise _support_error("DiagGaussian", ~np.isfinite(_array(x)))
    standardized = (as_tensor(x) - dist.mu) / dist.sigma
    per_coordinate = -0.5 * (standardized * standardized) - log(dist.sigma) - 0.5 * LOG_2PI
    return per_coordinate.sum(axis=-1)


def _diagonal(matrix: Tensor) -> Tensor:
    return (matrix * np.eye(matrix.shape[0])).sum(axis=0)


def _upper(matrix: Tensor) -> Tensor:
    return matrix * np.triu(np.ones(matrix.shape))


@log_prob.register
def _(dist: FullGaussianCholesky, x: Value) -> Tensor:
    if not np.isfinite(_array(x)).all():
        raise _support_error("FullGaussianCholesky", ~np.isfinite(_array(x)))
    upper = _upper(dist.chol_upper)
    residual = as_tensor(x) - dist.mu
    batched = residual if len(residual.shape) == 2 else residual.reshape(1, dist.dim)
    whitened = batched @ inv_upper(upper)
    quad = (whitened * whitened).sum(axis=-1)
    log_det = 2.0 * log(absolute(_diagonal(upper))).sum()
    out = -0.5 * quad - 0.5 * log_det - 0.5 * dist.dim * LOG_2PI
    return out if len(residual.shape) == 2 else out.reshape(1).sum()


@log_prob.register
def _(dist: ContinuousBernoulliVec, x: Value) -> Tensor:
    xs = _array(x)
    outside = ~((xs >= 0) & (xs <= 1))
    if outside.any():
        raise _support_error("ContinuousBernoulliVec", outside)
    lam = dist.lambdas
    per_coordinate = xs * log(lam) + (1.0 - xs) * log(1.0 - lam) + cb_log_norm(lam)
    return per_coordinate.sum(axis=-1)


@log_prob.register
def _(dist: BernoulliVec, x: Value) -> Tensor:
    xs = _array(x)
    outside = ~((xs == 0) | (xs == 1))
    if outside.any():
        raise _support_error("BernoulliVec", outside)
    if dist.logits is not None:
        per_coordinate = xs * -softplus(-dist.logits) + (1.0 - xs) * -softplus(dist.logits)
    else:
        tiny = np.finfo(np.float64).tiny
        per_coordinate = xs * log(clip(dist.probs, tiny, 1.0)) + (1.0 - xs) * log(
            clip(1.0 - dist.probs, tiny, 1.0)
        )
    return per_coordinate.sum(axis=-1)


def check_one_hot(name: str, xs: np.ndarray) -> None:
    outside = ~((xs == 0) | (xs == 1))
    if outside.any():
        raise _support_error(name, outside)
    bad_rows = np.atleast_1d(xs.sum(axis=-1) != 1)
    if bad_rows.any():
        raise DomainError(f"{name}: row {int(np.argmax(bad_rows))} is not one-hot")


@log_prob.register
def _(dist: OneHotCategorical, x: Value) -> Tensor:
    xs = _array(x)
    check_one_hot("OneHotCategorical", xs)
    return (log_softmax(dist.logits) * xs).sum(axis=-1)


def relaxed_log_prob_from_log(dist: RelaxedOneHotCategorical, log_y: Tensor) -> Tensor:
    """Concrete log-density evaluated at exp(log_y); stable when some coordinates underflow."""
    tau = dist.temperature
    c = dist.num_classes
    log_pi = log_softmax(dist.logits)
    const = special.gammaln(c) + (c - 1) * math.log(tau)
    body = (log_pi - (tau + 1.0) * log_y).sum(axis=-1)
    return body - c * logsumexp(log_pi - tau * log_y) + const


@log_prob.register
def _(dist: RelaxedOneHotCategorical, x: Value) -> Tensor:
    xs = _array(x)
    outside = ~(xs > 0)
    if outside.any():
        raise _support_error("RelaxedOneHotCategorical", outside)
    off_simplex = np.atleast_1d(np.abs(xs.sum(axis=-1) - 1.0) > SIMPLEX_TOLERANCE)
    if off_simplex.any():
        raise DomainError(f"RelaxedOneHotCategorical: row {int(np.argmax(off_simplex))} is off the simplex")
    return relaxed_log_prob_from_log(dist, log(as_tensor(x)))


# === SAMPLING ===


@singledispatch
def rsample(dist, rng: Optional[SeededRng], noise: Optional[np.ndarray] = None) -> Tensor:
    """Reparametrized sample: a differentiable function of parameters and parameter-free noise."""
    raise TypeError(f"rsample: {type(dist).__name__} has no reparametrized sampler")


@rsample.register
def _(dist: DiagGaussian, rng: Optional[SeededRng], noise: Optional[np.ndarray] = None) -> Tensor:
    eps = rng.normal(dist.batch_shape) if noise is None else noise
    return dist.mu + dist.sigma * eps


@rsample.register
def _(dist: FullGaussianCholesky, rng: Optional[SeededRng], noise: Optional[np.ndarray] = None) -> Tensor:
    eps = rng.normal(dist.mu.shape) if noise is None else noise
    batched = eps if eps.ndim == 2 else eps.reshape(1, -1)
    z = dist.mu + Tensor(batched) @ _upper(dist.chol_upper)
    return z if eps.ndim == 2 else z.reshape(dist.dim)


def rsample_log(
    dist: RelaxedOneHotCategorical, rng: Optional[SeededRng], noise: Optional[np.ndarray] = None
) -> Tensor:
    """Log of a Gumbel-Softmax sample, log softmax((logits + g) / tau)."""
    g = rng.gumbel(dist.logits.shape) if noise is None else noise
    return log_softmax((dist.logits + g) * (1.0 / dist.temperature))


@rsample.register
def _(dist: RelaxedOneHotCategorical, rng: Optional[SeededRng], noise: Optional[np.ndarray] = None) -> Tensor:
    return exp(rsample_log(dist, rng, noise))


@singledispatch
def sample(dist, rng: SeededRng) -> np.ndarray:
    """Exact, non-differentiable draw."""
    raise TypeError(f"sample: unsupported distribution {type(dist).__name__}")


@sample.register
def _(dist: DiagGaussian, rng: SeededRng) -> np.ndarray:
    return np.broadcast_to(dist.mu.data, dist.batch_shape) + dist.sigma.data * rng.normal(dist.batch_shape)


@sample.register
def _(dist: FullGaussianCholesky, rng: SeededRng) -> np.ndarray:
    eps = rng.normal(dist.mu.shape)
    return dist.mu.data + eps @ np.triu(dist.chol_upper.data)


def continuous_bernoulli_icdf(lambdas: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse CDF of the Continuous Bernoulli; the uniform law at lambda = 1/2."""
    lam = np.asarray(lambdas, dtype=np.float64)
    near = np.abs(lam - 0.5) < 1e-6
    safe = np.where(near, 0.25, lam)
    exact = np.log1p(u * (2.0 * safe - 1.0) / (1.0 - safe)) / np.log(safe / (1.0 - safe))
    return np.where(near, u, exact)


def continuous_bernoulli_mean(lambdas: np.ndarray) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=np.float64)
    near = np.abs(lam - 0.5) < 1e-6
    safe = np.where(near, 0.25, lam)
    exact = safe / (2.0 * safe - 1.0) + 1.0 / (2.0 * np.arctanh(1.0 - 2.0 * safe))
    return np.where(near, 0.5, exact)


@sample.register
def _(dist: ContinuousBernoulliVec, rng: SeededRng) -> np.ndarray:
    return continuous_bernoulli_icdf(dist.lambdas.data, rng.uniform(dist.lambdas.shape))


@sample.register
def _(dist: BernoulliVec, rng: SeededRng) -> np.ndarray:
    return (rng.uniform(dist.probs.shape) < dist.probs.data).astype(np.float64)


def one_hot(indices: np.ndarray, num_classes: int) -> np.ndarray:
    return np.eye(num_classes)[np.asarray(indices, dtype=np.int64)]


@sample.register
def _(dist: OneHotCategorical, rng: SeededRng) -> np.ndarray:
    logits = dist.logits.data
    return one_hot(np.argmax(logits + rng.gumbel(logits.shape), axis=-1), dist.num_classes)


@sample.register
def _(dist: RelaxedOneHotCategorical, rng: SeededRng) -> np.ndarray:
    logits = dist.logits.data
    return special.softmax((logits + rng.gumbel(logits.shape)) / dist.temperature, axis=-1)


# === DIVERGENCES AND ENTROPY ===


def kl_diag_gaussian(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    if q.dim != p.dim:
        raise ShapeError(f"kl_diag_gaussian: dimension mismatch {q.dim} vs {p.dim}")
    variance_ratio = (q.sigma / p.sigma) * (q.sigma / p.sigma)
    shift = (q.mu - p.mu) / p.sigma
    per_coordinate = log(p.sigma) - log(q.sigma) + 0.5 * (variance_ratio + shift * shift) - 0.5
    return per_coordinate.sum(axis=-1)


def kl_full_gaussian_vs_standard(q: FullGaussianCholesky) -> Tensor:
    """KL(q || N(0, I)) = 1/2 (tr(Sigma) + mu^T mu - k - log det Sigma)."""
    upper = _upper(q.chol_upper)
    trace = (upper * upper).sum()
    log_det = 2.0 * log(absolute(_diagonal(upper))).sum()
    return 0.5 * ((q.mu * q.mu).sum(axis=-1) + trace - q.dim - log_det)


def kl_categorical(q: OneHotCategorical, p: OneHotCategorical) -> Tensor:
    if q.num_classes != p.num_classes:
        raise ShapeError(f"kl_categorical: class count mismatch {q.num_classes} vs {p.num_classes}")
    q_probs = special.softmax(q.logits.data, axis=-1)
    p_probs = np.broadcast_to(special.softmax(p.logits.data, axis=-1), q_probs.shape)
    impossible = (q_probs > 0) & (p_probs == 0)
    if impossible.any():
        index = tuple(int(i) for i in np.argwhere(impossible)[0])
        raise InfiniteDivergenceError(f"kl_categorical: p has zero mass where q does not, at {index}")
    log_q = log_softmax(q.logits)
    return (softmax(q.logits) * (log_q - log_softmax(p.logits))).sum(axis=-1)


def entropy_categorical(q: OneHotCategorical) -> Tensor:
    return -(softmax(q.logits) * log_softmax(q.logits)).sum(axis=-1)


def cb_log_normalizer(lam: Value) -> Tensor:
    """log C(lambda) of the Continuous Bernoulli, with a Taylor branch near lambda = 1/2."""
    return cb_log_norm(as_tensor(lam))
