from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class MLP:
    """Fully connected network: ReLU between hidden layers, linear output.

    Weights and biases are drawn uniformly in +-sqrt(1/fan_in); the last
    layer is additionally multiplied by ``out_scale``.
    """

    def __init__(self, sizes, rng: np.random.Generator, out_scale: float = 1.0,
                 name: str = "mlp"):
        self.sizes = tuple(int(s) for s in sizes)
        self.name = name
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        n_layers = len(self.sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = np.sqrt(1.0 / fan_in)
            scale = out_scale if i == n_layers - 1 else 1.0
            w = rng.uniform(-bound, bound, (fan_in, fan_out)) * scale
            b = rng.uniform(-bound, bound, (1, fan_out)) * scale
            self.weights.append(Tensor(w, requires_grad=True, name=f"{name}.w{i}"))
            self.biases.append(Tensor(b, requires_grad=True, name=f"{name}.b{i}"))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = T.affine(x, w, b, relu=i < last)
        return x

    def forward_numpy(self, x: np.ndarray) -> np.ndarray:
        """Same computation on raw arrays, no tape."""
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w.value + b.value
            if i < last:
                np.maximum(x, 0.0, out=x)
        return x


def copy_values(dst: list[Tensor], src: list[Tensor]) -> None:
    for d, s in zip(dst, src, strict=True):
        d.value = s.value.copy()


def soft_update(target: list[Tensor], online: list[Tensor], tau: float) -> None:
    """``target <- (1 - tau) * target + tau * online`` element-wise."""
    for t, o in zip(target, online, strict=True):
        t.value = (1.0 - tau) * t.value + tau * o.value
