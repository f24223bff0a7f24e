"""Parameter registry and the Adam optimizer."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .tensor import Tensor


def glorot_uniform(rng: np.random.Generator, shape: tuple,
                   fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class ParamStore:
    """Named parameters (trained) and buffers (running statistics).

    Insertion order is the serialization order, so checkpoint bytes are
    stable for a fixed architecture.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def param(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params or name in self.buffers:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise ConfigError(f"duplicate buffer name {name!r}")
        arr = np.asarray(data, dtype=self.dtype)
        self.buffers[name] = arr
        return arr

    @property
    def n_trainable(self) -> int:
        return sum(int(t.data.size) for t in self.params.values())

    @property
    def n_parameters(self) -> int:
        """Trainable weights plus normalization running statistics."""
        return self.n_trainable + sum(int(a.size) for a in self.buffers.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        out = {name: t.data.copy() for name, t in self.params.items()}
        out.update({name: a.copy() for name, a in self.buffers.items()})
        return out

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            np.copyto(t.data, snap[name])
        for name, a in self.buffers.items():
            np.copyto(a, snap[name])


class Adam:
    """Adam with bias correction (Kingma & Ba defaults except the rate)."""

    def __init__(self, store: ParamStore, lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in store.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in store.params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.store.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        self.store.zero_grad()
