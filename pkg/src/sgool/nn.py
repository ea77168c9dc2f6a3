"""Multilayer perceptrons and Adam on top of ndtensor."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import ndtensor as nt
from .ndtensor import Tensor

ACTIVATIONS = {"silu": nt.silu, "tanh": nt.tanh}


class MLP:
    """Fully connected stack; activation after every layer except the last."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], activation: str = "silu"):
        self.params: list[Tensor] = []
        for w, b in zip(weights, biases):
            self.params += [Tensor(w), Tensor(b)]
        self.activation = activation

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator, activation: str = "silu") -> "MLP":
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, activation)

    @property
    def sizes(self) -> list[int]:
        ws = self.params[0::2]
        return [ws[0].shape[0]] + [w.shape[1] for w in ws]

    def trainable(self, flag: bool) -> None:
        for p in self.params:
            p.requires_grad = flag
            p.grad = None

    def __call__(self, x: Tensor) -> Tensor:
        act = ACTIVATIONS[self.activation]
        n = len(self.params) // 2
        for i in range(n):
            x = nt.affine(x, self.params[2 * i], self.params[2 * i + 1])
            if i < n - 1:
                x = act(x)
        return x

    def state(self) -> dict[str, np.ndarray]:
        return {f"layer{i // 2}.{'w' if i % 2 == 0 else 'b'}": p.data.copy() for i, p in enumerate(self.params)}

    @classmethod
    def from_state(cls, state: dict[str, np.ndarray], activation: str) -> "MLP":
        n = len(state) // 2
        return cls([state[f"layer{i}.w"] for i in range(n)], [state[f"layer{i}.b"] for i in range(n)], activation)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad**2
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def cosine_lr(base: float, step: int, total: int, floor: float = 0.1) -> float:
    if total <= 1:
        return base
    return base * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * step / total)))
