"""Minimal numpy-backed neural substrate: tape autodiff, layers, Adam,
squashed-Gaussian sampling, and weight checkpoints."""
from . import tensor, layers, optim, sampling, checkpoint  # noqa: F401
from .tensor import Tensor, backward, no_grad  # noqa: F401
