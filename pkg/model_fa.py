"""Factor Analysis trained by stochastic ELBO ascent.

Generative model: z ~ N(0, I_L), x | z ~ N(W z, Phi) with Phi = diag(softplus(pre_sigma)^2).
Amortized posterior: q(z | x) = N(V x, Sigma) with Sigma = U^T U shared by every x.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, special, stats

from distributions import (
    LOG_2PI,
    DiagGaussian,
    FullGaussianCholesky,
    kl_full_gaussian_vs_standard,
    log_prob,
    rsample,
    standard_normal,
)
from tensor_core import DomainError, SeededRng, Tensor, as_tensor, parameter, softplus

POSTERIOR_FAMILIES = ("full", "diagonal", "fixed_diagonal")
KL_MODES = ("analytic", "sampled")


@dataclass
class FaGenerative:
    W: Tensor
    pre_sigma: Tensor

    @property
    def data_dim(self) -> int:
        return self.W.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.W.shape[1]

    def noise_std(self) -> np.ndarray:
        return np.logaddexp(0.0, self.pre_sigma.data)

    def marginal_covariance(self) -> np.ndarray:
        w = self.W.data
        return w @ w.T + np.diag(self.noise_std() ** 2)

    def parameters(self) -> dict[str, Tensor]:
        return {"W": self.W, "pre_sigma": self.pre_sigma}


@dataclass
class FaAmortizedPosterior:
    """Linear posterior mean V x and a covariance factor shared across examples.

    family "full" uses the upper triangle of cov_decomp, "diagonal" only its diagonal,
    and "fixed_diagonal" keeps the diagonal but never trains it.
    """

    V: Tensor
    cov_decomp: Tensor
    family: str = "full"

    def __post_init__(self):
        if self.family not in POSTERIOR_FAMILIES:
            raise ValueError(f"Unknown posterior family: {self.family}")

    @property
    def latent_dim(self) -> int:
        return self.V.shape[0]

    def factor(self) -> Tensor:
        k = self.latent_dim
        mask = np.triu(np.ones((k, k))) if self.family == "full" else np.eye(k)
        return self.cov_decomp * mask

    def parameters(self) -> dict[str, Tensor]:
        if self.family == "fixed_diagonal":
            return {"V": self.V}
        return {"V": self.V, "cov_decomp": self.cov_decomp}


def init_fa_generative(data_dim: int, latent_dim: int, rng: SeededRng) -> FaGenerative:
    return FaGenerative(
        W=parameter(rng.normal((data_dim, latent_dim)), name="W"),
        pre_sigma=parameter(rng.normal((data_dim,)), name="pre_sigma"),
    )


def init_fa_posterior(data_dim: int, latent_dim: int, rng: SeededRng, family: str = "full") -> FaAmortizedPosterior:
    # cov_decomp starts at the Cholesky factor of the identity
    return FaAmortizedPosterior(
        V=parameter(rng.normal((latent_dim, data_dim)), name="V"),
        cov_decomp=parameter(np.eye(latent_dim), name="cov_decomp"),
        family=family,
    )


def fa_generate(theta: FaGenerative, n: int, rng: SeededRng) -> np.ndarray:
    """Ancestral samples: z ~ N(0, I), x ~ N(W z, Phi)."""
    if n < 1:
        raise DomainError(f"fa_generate: n must be at least 1, got {n}")
    z = rng.normal((n, theta.latent_dim))
    return z @ theta.W.data.T + theta.noise_std() * rng.normal((n, theta.data_dim))


def fa_posterior(phi: FaAmortizedPosterior, x) -> FullGaussianCholesky:
    xs = as_tensor(x)
    if len(xs.shape) == 1:
        xs = xs.reshape(1, xs.shape[0])
    return FullGaussianCholesky(xs @ phi.V.T, phi.factor())


def fa_likelihood(theta: FaGenerative, z: Tensor) -> DiagGaussian:
    return DiagGaussian(z @ theta.W.T, softplus(theta.pre_sigma))


def fa_elbo_estimator(
    theta: FaGenerative,
    phi: FaAmortizedPosterior,
    x,
    rng: Optional[SeededRng],
    kl: str = "analytic",
    noise: Optional[np.ndarray] = None,
) -> Tensor:
    """Single-sample ELBO estimate for each row of x: log p(x | z^s) - KL(q(z | x) || N(0, I))."""
    xs = np.atleast_2d(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64))
    q = fa_posterior(phi, xs)
    z = rsample(q, rng, noise)
    reconstruction = log_prob(fa_likelihood(theta, z), xs)
    if kl == "analytic":
        return reconstruction - kl_full_gaussian_vs_standard(q)
    if kl == "sampled":
        return reconstruction + log_prob(standard_normal(theta.latent_dim), z) - log_prob(q, z)
    raise ValueError(f"Unknown KL mode: {kl}")


def fa_log_evidence(theta: FaGenerative, xs) -> np.ndarray:
    """Exact log N(x; 0, W W^T + Phi) for every row of xs."""
    cov = theta.marginal_covariance()
    try:
        linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise DomainError("fa_exact_evidence: W W^T + Phi is not positive definite") from exc
    rows = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    return np.atleast_1d(stats.multivariate_normal(mean=np.zeros(theta.data_dim), cov=cov).logpdf(rows))


def fa_exact_evidence(theta: FaGenerative, xs) -> float:
    return float(np.mean(fa_log_evidence(theta, xs)))


def fa_exact_posterior(theta: FaGenerative) -> FaAmortizedPosterior:
    """Analytic posterior: Sigma* = (I + W^T Phi^-1 W)^-1, V* = Sigma* W^T Phi^-1."""
    w = theta.W.data
    phi_inv = 1.0 / theta.noise_std() ** 2
    precision = np.eye(theta.latent_dim) + w.T @ (phi_inv[:, None] * w)
    sigma = linalg.inv(precision)
    sigma = 0.5 * (sigma + sigma.T)
    v = sigma @ w.T * phi_inv
    upper = linalg.cholesky(sigma, lower=False)
    return FaAmortizedPosterior(V=parameter(v, name="V"), cov_decomp=parameter(upper, name="cov_decomp"))


def _gaussian_kl(mu_q: np.ndarray, cov_q: np.ndarray, mu_p: np.ndarray, cov_p: np.ndarray) -> np.ndarray:
    k = cov_q.shape[0]
    cho_p = linalg.cho_factor(cov_p)
    trace = np.trace(linalg.cho_solve(cho_p, cov_q))
    diff = mu_p - mu_q
    mahalanobis = np.einsum("bi,bi->b", diff, linalg.cho_solve(cho_p, diff.T).T)
    _, logdet_p = np.linalg.slogdet(cov_p)
    _, logdet_q = np.linalg.slogdet(cov_q)
    return 0.5 * (trace + mahalanobis - k + logdet_p - logdet_q)


def fa_variational_gap(theta: FaGenerative, phi: FaAmortizedPosterior, xs) -> float:
    """Mean KL(q(z | x) || p(z | x)): the amount by which the ELBO falls short of the evidence."""
    rows = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    exact = fa_exact_posterior(theta)
    factor = np.triu(phi.factor().data)
    cov_q = factor.T @ factor
    exact_factor = exact.cov_decomp.data
    kls = _gaussian_kl(rows @ phi.V.data.T, cov_q, rows @ exact.V.data.T, exact_factor.T @ exact_factor)
    return float(np.mean(kls))


def fa_mc_evidence(theta: FaGenerative, xs, n_samples: int, rng: SeededRng) -> float:
    """Naive Monte Carlo evidence: log of the prior-sample average of p(x | z), averaged over rows."""
    rows = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    std = theta.noise_std()
    means = rng.normal((n_samples, theta.latent_dim)) @ theta.W.data.T
    norm = -np.sum(np.log(std)) - 0.5 * theta.data_dim * LOG_2PI
    totals = []
    for x in rows:
        log_lik = -0.5 * np.sum(((x - means) / std) ** 2, axis=1) + norm
        totals.append(special.logsumexp(log_lik) - np.log(n_samples))
    return float(np.mean(totals))


class FaModel:
    """Factor Analysis bundle exposing theta/phi parameter sets and a per-example ELBO."""

    tag = "fa"

    def __init__(
        self,
        data_dim: int,
        latent_dim: int,
        rng: SeededRng,
        family: str = "full",
        kl: str = "analytic",
    ):
        if kl not in KL_MODES:
            raise ValueError(f"Unknown KL mode: {kl}")
        self.generative = init_fa_generative(data_dim, latent_dim, rng)
        self.posterior = init_fa_posterior(data_dim, latent_dim, rng, family)
        self.kl = kl

    @property
    def theta(self) -> dict[str, Tensor]:
        return self.generative.parameters()

    @property
    def phi(self) -> dict[str, Tensor]:
        return self.posterior.parameters()

    def parameters(self) -> dict[str, Tensor]:
        return {**self.theta, "V": self.posterior.V, "cov_decomp": self.posterior.cov_decomp}

    def elbo(self, x: np.ndarray, labels: Optional[np.ndarray], rng: SeededRng, train: bool = True) -> Tensor:
        return fa_elbo_estimator(self.generative, self.posterior, x, rng, kl=self.kl)

    def eval_extras(self, x: np.ndarray, labels: Optional[np.ndarray]) -> dict[str, float]:
        return {
            "evidence": fa_exact_evidence(self.generative, x),
            "gap": fa_variational_gap(self.generative, self.posterior, x),
        }
