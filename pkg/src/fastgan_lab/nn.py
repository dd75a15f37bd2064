"""Fully connected layers on top of the autodiff engine."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class Linear:
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, fan_in: int, fan_out: int) -> "Linear":
        return cls(
            Tensor(glorot_uniform(rng, fan_in, fan_out), requires_grad=True),
            Tensor(np.zeros(fan_out), requires_grad=True),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    @property
    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class MLP:
    """Leaky-relu trunk; ``heads`` share the last hidden layer."""

    trunk: list[Linear]
    heads: list[Linear]
    slope: float = 0.2
    widths: tuple[int, ...] = field(default=())

    @classmethod
    def init(cls, rng, in_dim: int, hidden_width: int, depth: int, head_dims, slope: float = 0.2) -> "MLP":
        trunk, prev = [], in_dim
        for _ in range(depth):
            trunk.append(Linear.init(rng, prev, hidden_width))
            prev = hidden_width
        heads = [Linear.init(rng, prev, d) for d in head_dims]
        return cls(trunk, heads, slope, (in_dim,) + (hidden_width,) * depth)

    def features(self, x: Tensor) -> Tensor:
        h = x
        for layer in self.trunk:
            h = ad.leaky_relu(layer(h), self.slope)
        return h

    def __call__(self, x: Tensor) -> list[Tensor]:
        h = self.features(x)
        return [head(h) for head in self.heads]

    @property
    def params(self) -> list[Tensor]:
        out = []
        for layer in self.trunk + self.heads:
            out.extend(layer.params)
        return out


def get_flat(params) -> np.ndarray:
    return np.concatenate([p.data.reshape(-1) for p in params])


def set_flat(params, vector: np.ndarray) -> None:
    for p, chunk in zip(params, ad.unflatten(vector, params)):
        p.data = chunk.copy()
