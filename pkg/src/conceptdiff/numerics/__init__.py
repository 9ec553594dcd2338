"""Numeric substrate: tensors with reverse-mode autodiff, optimizers, RNG."""

from conceptdiff.numerics.tensor import Tensor, Tape, backward, as_tensor
from conceptdiff.numerics.rng import RngStream
from conceptdiff.numerics.optim import AdamState, adam_step, sgd_step
from conceptdiff.numerics.gradcheck import gradient_check

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "as_tensor",
    "RngStream",
    "AdamState",
    "adam_step",
    "sgd_step",
    "gradient_check",
]
