"""Variational RNN over binary sequences (image rows as time steps).

One LSTM state h_t feeds the prior p(z_t | h_t), the posterior q(z_t | x_t, h_t) and the
emission p(x_t | z_t, h_t). The state advances on (x_{t-1} || z_{t-1}) and starts at zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from distributions import bernoulli_from_logits, kl_diag_gaussian, log_prob, rsample, sample
from networks import MLP, GaussianNet, LSTMCell, joined
from tensor_core import SeededRng, ShapeError, Tensor

DEFAULT_HIDDEN_SIZE = 64


class VrnnNets:
    def __init__(
        self,
        data_dim: int,
        latent_dim: int,
        rng: SeededRng,
        hidden_size: int = DEFAULT_HIDDEN_SIZE,
        hidden: Sequence[int] = (64,),
    ):
        self.data_dim = data_dim
        self.latent_dim = latent_dim
        self.hidden_size = hidden_size
        self.recurrence = LSTMCell("recurrence", data_dim + latent_dim, hidden_size, rng)
        self.prior = GaussianNet("prior", hidden_size, hidden, latent_dim, rng)
        self.posterior = GaussianNet("posterior", data_dim + hidden_size, hidden, latent_dim, rng)
        self.emission = MLP("emission", (latent_dim + hidden_size, *hidden, data_dim), rng)

    @property
    def theta(self) -> dict[str, Tensor]:
        return {**self.recurrence.parameters(), **self.prior.parameters(), **self.emission.parameters()}

    @property
    def phi(self) -> dict[str, Tensor]:
        return self.posterior.parameters()


@dataclass(frozen=True)
class VrnnState:
    h: Tensor
    c: Tensor
    t: int = 1


def initial_state(nets: VrnnNets, batch: int) -> VrnnState:
    zeros = np.zeros((batch, nets.hidden_size))
    return VrnnState(Tensor(zeros), Tensor(zeros), 1)


def vrnn_step(nets: VrnnNets, state: VrnnState, x_prev, z_prev) -> VrnnState:
    """(h_t, c_t) = LSTM(x_{t-1} || z_{t-1}, (h_{t-1}, c_{t-1}))."""
    x_width = x_prev.shape[-1]
    z_width = z_prev.shape[-1]
    if x_width != nets.data_dim or z_width != nets.latent_dim:
        raise ShapeError(
            f"vrnn_step: expected x width {nets.data_dim} and z width {nets.latent_dim}, got {x_width} and {z_width}"
        )
    if state.h.shape[-1] != nets.hidden_size:
        raise ShapeError(f"vrnn_step: state width {state.h.shape[-1]} does not match {nets.hidden_size}")
    h, c = nets.recurrence(joined(x_prev, z_prev), state.h, state.c)
    return VrnnState(h, c, state.t + 1)


def vrnn_elbo_estimator(
    nets: VrnnNets,
    x_seq: np.ndarray,
    rng: Optional[SeededRng],
    kl: str = "analytic",
    noise: Optional[np.ndarray] = None,
) -> Tensor:
    """Per-sequence sum over t of log p(x_t | z^s_t, h_t) - KL(q(z_t | x_t, h_t) || p(z_t | h_t)).

    x_seq has shape (B, T, D); noise, when given, has shape (T, B, L). With kl="sampled" the
    per-step KL is replaced by the single-sample log-ratio log q(z^s_t) - log p(z^s_t).
    """
    xs = np.asarray(x_seq, dtype=np.float64)
    if xs.ndim == 2:
        xs = xs[None]
    batch, steps, _ = xs.shape
    state = initial_state(nets, batch)
    total: Optional[Tensor] = None
    z: Optional[Tensor] = None
    for t in range(steps):
        if t > 0:
            state = vrnn_step(nets, state, xs[:, t - 1], z)
        x_t = xs[:, t]
        prior = nets.prior(state.h)
        q = nets.posterior(joined(x_t, state.h))
        z = rsample(q, rng, None if noise is None else noise[t])
        reconstruction = log_prob(bernoulli_from_logits(nets.emission(joined(z, state.h))), x_t)
        if kl == "analytic":
            term = reconstruction - kl_diag_gaussian(q, prior)
        elif kl == "sampled":
            term = reconstruction + log_prob(prior, z) - log_prob(q, z)
        else:
            raise ValueError(f"Unknown KL mode: {kl}")
        total = term if total is None else total + term
    return total


def vrnn_generate(nets: VrnnNets, steps: int, n: int, rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral sampling one row at a time; returns emission probabilities and binary rows, (n, T, D)."""
    if steps < 1:
        raise ValueError(f"vrnn_generate: need at least one step, got {steps}")
    state = initial_state(nets, n)
    probs = np.zeros((n, steps, nets.data_dim))
    rows = np.zeros((n, steps, nets.data_dim))
    x_prev = z_prev = None
    for t in range(steps):
        if t > 0:
            state = vrnn_step(nets, state, x_prev, z_prev)
        z_prev = sample(nets.prior(state.h), rng)
        emission = bernoulli_from_logits(nets.emission(joined(z_prev, state.h)))
        x_prev = sample(emission, rng)
        probs[:, t] = emission.probs.data
        rows[:, t] = x_prev
    return probs, rows


class VrnnModel:
    tag = "vrnn"

    def __init__(
        self,
        data_dim: int,
        latent_dim: int,
        rng: SeededRng,
        hidden_size: int = DEFAULT_HIDDEN_SIZE,
        hidden: Sequence[int] = (64,),
        kl: str = "analytic",
    ):
        self.nets = VrnnNets(data_dim, latent_dim, rng, hidden_size, hidden)
        self.kl = kl

    @property
    def theta(self) -> dict[str, Tensor]:
        return self.nets.theta

    @property
    def phi(self) -> dict[str, Tensor]:
        return self.nets.phi

    def parameters(self) -> dict[str, Tensor]:
        return {**self.theta, **self.phi}

    def elbo(self, x: np.ndarray, labels: Optional[np.ndarray], rng: SeededRng, train: bool = True) -> Tensor:
        return vrnn_elbo_estimator(self.nets, x, rng, self.kl)

    def eval_extras(self, x: np.ndarray, labels: Optional[np.ndarray]) -> dict[str, float]:
        return {}
