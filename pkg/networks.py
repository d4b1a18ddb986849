"""Layers shared by the neural models: Glorot-initialized linear maps, MLPs, Gaussian heads, an LSTM cell."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from distributions import DiagGaussian
from tensor_core import (
    SeededRng,
    Tensor,
    concat,
    dropout,
    parameter,
    relu,
    sigmoid,
    softplus,
    tanh,
)

Activation = Callable[[Tensor], Tensor]


def glorot_normal(rng: SeededRng, fan_in: int, fan_out: int) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return std * rng.normal((fan_in, fan_out))


class Linear:
    """x @ weight + bias, with weight of shape (fan_in, fan_out)."""

    def __init__(self, name: str, fan_in: int, fan_out: int, rng: SeededRng):
        self.name = name
        self.weight = parameter(glorot_normal(rng, fan_in, fan_out), name=f"{name}.weight")
        self.bias = parameter(np.zeros(fan_out), name=f"{name}.bias")

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {self.weight.name: self.weight, self.bias.name: self.bias}

    def __call__(self, x) -> Tensor:
        return x @ self.weight + self.bias


class MLP:
    """Stack of Linear layers with an activation and dropout after every hidden layer.

    With activate_last the final layer is treated as hidden too, which is how encoder
    trunks end before their heads.
    """

    def __init__(
        self,
        name: str,
        sizes: Sequence[int],
        rng: SeededRng,
        dropout_rate: float = 0.0,
        activation: Activation = relu,
        activate_last: bool = False,
    ):
        if len(sizes) < 1:
            raise ValueError(f"MLP {name}: needs at least an input size")
        self.name = name
        self.sizes = tuple(int(s) for s in sizes)
        self.dropout_rate = dropout_rate
        self.activation = activation
        self.activate_last = activate_last
        self.layers = [
            Linear(f"{name}.{i}", fan_in, fan_out, rng)
            for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:]))
        ]

    @property
    def out_size(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for layer in self.layers:
            params.update(layer.parameters())
        return params

    def __call__(self, x, rng: Optional[SeededRng] = None, train: bool = False) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(x)
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1 or self.activate_last:
                h = self.activation(h)
                if self.dropout_rate > 0.0:
                    h = dropout(h, self.dropout_rate, rng, train=train)
        return h


class GaussianHead:
    """Linear mean and softplus standard deviation over a shared feature vector."""

    def __init__(self, name: str, fan_in: int, latent_dim: int, rng: SeededRng):
        self.mean = Linear(f"{name}.mean", fan_in, latent_dim, rng)
        self.pre_sigma = Linear(f"{name}.pre_sigma", fan_in, latent_dim, rng)

    def parameters(self) -> dict[str, Tensor]:
        return {**self.mean.parameters(), **self.pre_sigma.parameters()}

    def __call__(self, features: Tensor) -> DiagGaussian:
        return DiagGaussian(self.mean(features), softplus(self.pre_sigma(features)))


class GaussianNet:
    """Trunk MLP followed by a GaussianHead: input -> diagonal Gaussian."""

    def __init__(
        self, name: str, in_size: int, hidden: Sequence[int], latent_dim: int, rng: SeededRng,
        dropout_rate: float = 0.0,
    ):
        self.trunk = MLP(f"{name}.trunk", (in_size, *hidden), rng, dropout_rate, activate_last=True)
        self.head = GaussianHead(f"{name}.head", self.trunk.out_size, latent_dim, rng)

    def parameters(self) -> dict[str, Tensor]:
        return {**self.trunk.parameters(), **self.head.parameters()}

    def __call__(self, x, rng: Optional[SeededRng] = None, train: bool = False) -> DiagGaussian:
        return self.head(self.trunk(x, rng, train))


class LSTMCell:
    """Standard LSTM cell; gates are laid out [input, forget, candidate, output]."""

    def __init__(self, name: str, input_size: int, hidden_size: int, rng: SeededRng):
        self.hidden_size = hidden_size
        self.input_size = input_size
        self.weight_x = parameter(glorot_normal(rng, input_size, 4 * hidden_size), name=f"{name}.weight_x")
        self.weight_h = parameter(glorot_normal(rng, hidden_size, 4 * hidden_size), name=f"{name}.weight_h")
        self.bias = parameter(np.zeros(4 * hidden_size), name=f"{name}.bias")

    def parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in (self.weight_x, self.weight_h, self.bias)}

    def __call__(self, x, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        n = self.hidden_size
        gates = x @ self.weight_x + h @ self.weight_h + self.bias
        input_gate = sigmoid(gates[:, 0:n])
        forget_gate = sigmoid(gates[:, n : 2 * n])
        candidate = tanh(gates[:, 2 * n : 3 * n])
        output_gate = sigmoid(gates[:, 3 * n : 4 * n])
        c_next = forget_gate * c + input_gate * candidate
        h_next = output_gate * tanh(c_next)
        return h_next, c_next


def joined(*parts) -> Tensor:
    """Concatenate feature blocks along the last axis."""
    return concat([p if isinstance(p, Tensor) else Tensor(p) for p in parts], axis=1)
