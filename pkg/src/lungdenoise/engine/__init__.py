"""Reverse-mode tensor engine: tape, ops, optimizer, checkpoints."""
from .tensor import Tensor, as_tensor, no_grad, grad_enabled
from .optim import Adam, ParamStore, glorot_uniform
from .checkpoint import load_checkpoint, save_checkpoint
from . import ops

__all__ = [
    "Tensor", "as_tensor", "no_grad", "grad_enabled",
    "Adam", "ParamStore", "glorot_uniform",
    "load_checkpoint", "save_checkpoint", "ops",
]
