"""Minimal reverse-mode autodiff over numpy f64 arrays."""
from . import tensor as ops
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .gradcheck import grad_check
from .nn import Module, Parameter, stream
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, no_grad

__all__ = [
    "Adam", "AdamState", "CheckpointError", "Module", "Parameter", "Tensor",
    "adam_step", "grad_check", "no_grad", "ops", "read_checkpoint", "stream",
    "write_checkpoint",
]
