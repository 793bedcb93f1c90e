"""Minimal tensor engine: float64 arrays, reverse-mode autodiff, layers, Adam."""

from . import functional
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import BatchNorm2d, Conv2d, ConvTranspose2d, Module, Parameter
from .optim import Adam, adam_step
from .tensor import Tape, Tensor, backward

__all__ = [
    "Adam",
    "BatchNorm2d",
    "Conv2d",
    "ConvTranspose2d",
    "Module",
    "Parameter",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "functional",
    "load_checkpoint",
    "save_checkpoint",
]
