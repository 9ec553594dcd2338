"""Arithmetic on predicted noise: guidance, conjunction, weighted mixing.

All composition here happens per noise level on the predictor outputs.
The algebra is exact for the identities tested (single term, one-hot
weights, guidance scale 0/1) because each formula is factored so those
cases reduce to a plain copy of one input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from conceptdiff.numerics.tensor import (
    Tensor,
    as_tensor,
    concat,
    reshape,
    slice_axis,
    tsum,
)


@dataclass
class ScoreSet:
    """One unconditional prediction plus M conditional predictions."""

    uncond: Tensor
    conds: list[Tensor]

    def __post_init__(self):
        self.uncond = as_tensor(self.uncond)
        self.conds = [as_tensor(c) for c in self.conds]
        if not self.conds:
            raise ValueError("ScoreSet needs at least one conditional score")
        for i, c in enumerate(self.conds):
            if c.shape != self.uncond.shape:
                raise ValueError(
                    f"cond {i} shape {c.shape} != uncond shape {self.uncond.shape}"
                )


class SimplexWeights:
    """Nonnegative weights summing to one over K concepts.

    ``values`` may be a Tensor produced on a tape (softmax of logits), in
    which case downstream composition stays differentiable through it.
    """

    def __init__(self, values):
        self.values = as_tensor(values)
        v = self.values.data
        if v.ndim != 1:
            raise ValueError(f"weights must be 1-D, got shape {v.shape}")
        if np.any(v < 0.0) or abs(float(v.sum()) - 1.0) > 1e-9:
            raise ValueError(f"weights must lie on the simplex, got {v}")

    @property
    def k(self) -> int:
        return self.values.data.shape[0]

    def as_array(self) -> np.ndarray:
        return self.values.data.copy()

    @staticmethod
    def one_hot(k: int, index: int) -> "SimplexWeights":
        w = np.zeros(k)
        w[index] = 1.0
        return SimplexWeights(w)

    @staticmethod
    def uniform(k: int) -> "SimplexWeights":
        return SimplexWeights(np.full(k, 1.0 / k))


def guide(eps_cond: Tensor, eps_uncond: Tensor, scale: float) -> Tensor:
    """Classifier-free guidance, factored as (1-s)*uncond + s*cond.

    At scale 0 or 1 the inactive term is multiplied by exactly 0.0, so the
    result is bitwise equal to the surviving input.
    """
    eps_cond = as_tensor(eps_cond)
    eps_uncond = as_tensor(eps_uncond)
    s = float(scale)
    if s == 1.0:
        return eps_cond
    if s == 0.0:
        return eps_uncond
    return eps_uncond * (1.0 - s) + eps_cond * s


def compose_conjunction(scores: ScoreSet) -> Tensor:
    """Joint-condition noise: uncond + sum_m (cond_m - uncond).

    With a single condition this returns that condition's score unchanged.
    """
    if len(scores.conds) == 1:
        return scores.conds[0]
    out = scores.uncond
    for c in scores.conds:
        out = out + (c - scores.uncond)
    return out


def mix_scores(eps_conds: Tensor, eps_uncond: Tensor, weights: Tensor) -> Tensor:
    """Simplex-weighted composition over a batch.

    eps_conds: (B, K, D); eps_uncond: (B, D); weights: (B, K), rows on the
    simplex.  Computes sum_k w_k * cond_k + (1 - sum_k w_k) * uncond, which
    equals uncond + sum_k w_k (cond_k - uncond) but collapses bitwise to a
    single conditional score when a weight row is exactly one-hot.
    """
    b, k, d = eps_conds.shape
    w3 = reshape(weights, (b, k, 1))
    weighted = tsum(eps_conds * w3, axis=1)  # (B, D)
    residual = 1.0 - tsum(weights, axis=1, keepdims=True)  # (B, 1)
    return weighted + eps_uncond * residual


def compose_unsup(
    x_t,
    t: int,
    weights: SimplexWeights,
    library,
    denoiser,
) -> Tensor:
    """Weighted concept composition for one item at one noise level.

    ``library`` is a (K, d) tensor of concept embeddings; the denoiser is
    queried once for all K concepts plus the unconditional row.  The output
    is differentiable w.r.t. both the weights and the library.
    """
    x = np.asarray(x_t.data if isinstance(x_t, Tensor) else x_t, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"compose_unsup handles one item, got shape {x.shape}")
    lib = as_tensor(library)
    k = lib.shape[0]
    if weights.k != k:
        raise ValueError(f"{weights.k} weights for {k} concepts")
    null_row = reshape(denoiser.null_embedding, (1, lib.shape[1]))
    conds = concat([lib, null_row], axis=0)  # (K+1, d)
    preds = denoiser.predict_multi(x[None, :], t, conds)  # (1, K+1, D)
    eps_conds = slice_axis(preds, 1, 0, k)
    eps_uncond = reshape(slice_axis(preds, 1, k, k + 1), (1, x.shape[0]))
    w = reshape(weights.values, (1, k))
    out = mix_scores(eps_conds, eps_uncond, w)
    return reshape(out, (x.shape[0],))
