"""Central-difference validation of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from conceptdiff.numerics.tensor import Tape, Tensor, backward


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(1e-12, abs(a) + abs(n))


def gradient_check(
    fn: Callable[[Tensor], Tensor],
    point: Tensor,
    h: float = 1e-5,
) -> float:
    """Max elementwise relative error between tape and numeric gradients.

    ``fn`` must map ``point`` to a scalar Tensor using tape ops only.  The
    numeric side perturbs each coordinate of ``point`` in place (restored
    afterwards), so ``fn`` must not cache the input data.
    """
    was = point.requires_grad
    point.requires_grad = True
    point.grad = None
    with Tape() as tape:
        loss = fn(point)
        backward(tape, loss)
    point.requires_grad = was
    analytic = point.grad if point.grad is not None else np.zeros_like(point.data)
    analytic = analytic.copy()
    point.grad = None

    flat = point.data.reshape(-1)
    numeric = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(fn(point).data)
        flat[i] = orig - h
        f_minus = float(fn(point).data)
        flat[i] = orig
        numeric[i] = (f_plus - f_minus) / (2.0 * h)

    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        raise FloatingPointError("non-finite gradient encountered in check")

    a = analytic.reshape(-1)
    errs = np.abs(a - numeric) / np.maximum(1e-12, np.abs(a) + np.abs(numeric))
    return float(errs.max()) if errs.size else 0.0
