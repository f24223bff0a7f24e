"""Differentiable operations over :class:`Tensor`.

Convolutions are evaluated as one GEMM per kernel tap, accumulated into
a preallocated output. That keeps peak memory at a small multiple of the
activation size (a full im2col buffer for the widest decoder layer would
run to gigabytes at training batch sizes).
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, as_tensor


def _flat2(a: np.ndarray, k: int) -> np.ndarray:
    """View/copy of ``a`` as (-1, k), contiguous for BLAS."""
    return np.ascontiguousarray(a).reshape(-1, k)


# --- arithmetic -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def backward(g):
        a.accumulate(g)
        b.accumulate(g)

    return Tensor._make(out_data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data * c

    def backward(g):
        a.accumulate(g * c)

    return Tensor._make(out_data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b where b is a 2D weight, or both are batched with equal
    leading dimensions (used for attention scores)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    if b.data.ndim == 2:
        def backward(g):
            if a.requires_grad or a._parents:
                a.accumulate(g @ b.data.T)
            if b.requires_grad or b._parents:
                k = a.shape[-1]
                b.accumulate(_flat2(a.data, k).T @ _flat2(g, g.shape[-1]))
    else:
        if a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(f"matmul batch dims: {a.shape} vs {b.shape}")

        def backward(g):
            if a.requires_grad or a._parents:
                a.accumulate(g @ b.data.swapaxes(-1, -2))
            if b.requires_grad or b._parents:
                b.accumulate(a.data.swapaxes(-1, -2) @ g)

    return Tensor._make(out_data, (a, b), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        a.accumulate(g.reshape(a.shape))

    return Tensor._make(out_data, (a,), backward)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    a = as_tensor(a)
    inverse = tuple(np.argsort(axes))
    out_data = a.data.transpose(axes)

    def backward(g):
        a.accumulate(g.transpose(inverse))

    return Tensor._make(out_data, (a,), backward)


# --- activations ------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0)

    def backward(g):
        x.accumulate(g * mask)

    return Tensor._make(out_data, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        x.accumulate(g * (1.0 - y * y))

    return Tensor._make(y, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        # J^T g = y * (g - <g, y>)
        inner = (g * y).sum(axis=axis, keepdims=True)
        x.accumulate(y * (g - inner))

    return Tensor._make(y, (x,), backward)


# --- dense / conv -----------------------------------------------------------

def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (..., K) @ w (K, N) + b (N)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.shape[-1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"dense: x{x.shape} w{w.shape} b{b.shape}")
    out_data = x.data @ w.data + b.data

    def backward(g):
        n = g.shape[-1]
        g2 = _flat2(g, n)
        if x.requires_grad or x._parents:
            x.accumulate(g @ w.data.T)
        w.accumulate(_flat2(x.data, x.shape[-1]).T @ g2)
        b.accumulate(g2.sum(axis=0))

    return Tensor._make(out_data, (x, w, b), backward)


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Same-padded 1D convolution.

    x: (B, T, C_in), w: (k, C_in, C_out), b: (C_out,).
    Output time is ceil(T / stride); padding is split so the kernel
    center lands on input positions stride * t.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 3:
        raise ShapeError(f"conv1d expects (B, T, C), got {x.shape}")
    k, c_in, c_out = w.shape
    B, T, cx = x.shape
    if cx != c_in:
        raise ShapeError(f"conv1d: input has {cx} channels, kernel wants {c_in}")
    if stride < 1:
        raise ShapeError(f"conv1d: stride must be >= 1, got {stride}")

    t_out = -(-T // stride)
    pad_l = (k - 1) // 2
    pad_r = max((t_out - 1) * stride + k - T - pad_l, 0)
    xp = np.zeros((B, T + pad_l + pad_r, c_in), dtype=x.data.dtype)
    xp[:, pad_l : pad_l + T] = x.data

    # One GEMM per kernel tap against a strided view of the padded input;
    # BLAS consumes the views directly, so nothing is ever im2col'd.
    wd, bd = w.data, b.data
    out_data = np.empty((B, t_out, c_out), dtype=x.data.dtype)
    out_data[:] = bd
    tmp = np.empty_like(out_data)
    for j in range(k):
        np.matmul(xp[:, j : j + stride * t_out : stride, :], wd[j], out=tmp)
        out_data += tmp

    def backward(g):
        g = np.ascontiguousarray(g)
        b.accumulate(g.sum(axis=(0, 1)))
        dw = np.empty_like(wd)
        tw = np.empty((B, c_in, c_out), dtype=wd.dtype)
        need_dx = x.requires_grad or x._parents
        dxp = np.zeros_like(xp) if need_dx else None
        tx = np.empty((B, t_out, c_in), dtype=xp.dtype) if need_dx else None
        for j in range(k):
            sl = xp[:, j : j + stride * t_out : stride, :]
            np.matmul(sl.transpose(0, 2, 1), g, out=tw)
            np.sum(tw, axis=0, out=dw[j])
            if need_dx:
                np.matmul(g, wd[j].T, out=tx)
                dxp[:, j : j + stride * t_out : stride, :] += tx
        w.accumulate(dw)
        if need_dx:
            x.accumulate(dxp[:, pad_l : pad_l + T])

    return Tensor._make(out_data, (x, w, b), backward)


# --- normalization ----------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.99,
               eps: float = 1e-3) -> Tensor:
    """Per-channel normalization over (batch, time) for (B, T, C) input.

    In training mode the batch statistics normalize the activations and
    the running buffers are updated in place:
    running = momentum * running + (1 - momentum) * batch.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.ndim != 3:
        raise ShapeError(f"batch_norm expects (B, T, C), got {x.shape}")
    if x.shape[0] == 0 or x.shape[1] == 0:
        raise ShapeError(f"batch_norm statistics undefined for shape {x.shape}")

    if training:
        mu = x.data.mean(axis=(0, 1))
        var = x.data.var(axis=(0, 1))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu, var = running_mean, running_var

    ivstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * ivstd
    out_data = gamma.data * xhat + beta.data

    def backward(g):
        gamma.accumulate((g * xhat).sum(axis=(0, 1)))
        beta.accumulate(g.sum(axis=(0, 1)))
        if not (x.requires_grad or x._parents):
            return
        dxhat = g * gamma.data
        if training:
            n = x.shape[0] * x.shape[1]
            s1 = dxhat.sum(axis=(0, 1))
            s2 = (dxhat * xhat).sum(axis=(0, 1))
            x.accumulate((ivstd / n) * (n * dxhat - s1 - xhat * s2))
        else:
            x.accumulate(dxhat * ivstd)

    return Tensor._make(out_data, (x, gamma, beta), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               eps: float = 1e-3) -> Tensor:
    """Normalization over the last axis, per position."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    ivstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * ivstd
    out_data = gamma.data * xhat + beta.data

    def backward(g):
        axes = tuple(range(g.ndim - 1))
        gamma.accumulate((g * xhat).sum(axis=axes))
        beta.accumulate(g.sum(axis=axes))
        if not (x.requires_grad or x._parents):
            return
        n = x.shape[-1]
        dxhat = g * gamma.data
        s1 = dxhat.sum(axis=-1, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
        x.accumulate((ivstd / n) * (n * dxhat - s1 - xhat * s2))

    return Tensor._make(out_data, (x, gamma, beta), backward)


# --- structure --------------------------------------------------------------

def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour doubling along time: (B, T, C) -> (B, 2T, C)."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"upsample2 expects (B, T, C), got {x.shape}")
    out_data = np.repeat(x.data, 2, axis=1)

    def backward(g):
        B, T2, C = g.shape
        x.accumulate(g.reshape(B, T2 // 2, 2, C).sum(axis=2))

    return Tensor._make(out_data, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel (last) axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat: leading dims differ, {a.shape} vs {b.shape}")
    ca = a.shape[-1]
    out_data = np.concatenate((a.data, b.data), axis=-1)

    def backward(g):
        a.accumulate(g[..., :ca])
        b.accumulate(g[..., ca:])

    return Tensor._make(out_data, (a, b), backward)


# --- loss -------------------------------------------------------------------

def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target."""
    pred = as_tensor(pred)
    t = np.asarray(target, dtype=pred.data.dtype)
    if pred.shape != t.shape:
        raise ShapeError(f"mse: {pred.shape} vs {t.shape}")
    diff = pred.data - t
    out_data = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)

    def backward(g):
        pred.accumulate(g * (2.0 / diff.size) * diff)

    return Tensor._make(out_data, (pred,), backward)
