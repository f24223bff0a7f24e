"""A small reverse-mode tape over numpy arrays.

Every differentiable op returns a new Tensor holding the forward value,
the parent tensors, and a closure that scatters the incoming gradient to
those parents. ``backward`` runs the closures in reverse topological
order, then frees the graph: a second backward through the same result,
or a backward on a tensor built with gradients disabled, is a TapeError
rather than silently wrong numbers.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..errors import ShapeError, TapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_spent")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._spent = False

    # construction helper used by every op
    @staticmethod
    def _make(data: np.ndarray, parents: tuple, backward_fn) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward_fn
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse sweep from this (scalar) tensor through the live graph."""
        if self._spent:
            raise TapeError("graph already consumed; run a fresh forward pass")
        if self._backward is None and not self._parents:
            raise TapeError(
                "no tape behind this tensor (built under no_grad, or a leaf)"
            )
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar, got shape {self.shape}")

        # topological order over the live graph
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

        # free the tape so stale reuse is loud, and intermediates get GC'd
        for node in order:
            node._backward = None
            node._parents = ()
        self._spent = True


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
