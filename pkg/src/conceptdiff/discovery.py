"""Unsupervised concept discovery by joint embedding/weight optimization.

A library of K concept embeddings and an (N, K) matrix of per-item weight
logits are optimized together against the standard denoising objective,
with each item's predicted noise formed as its simplex-weighted mixture of
per-concept predictions over the unconditional one.  Items that share a
generative factor end up pulling the same embedding toward that factor's
conditional score, so concepts specialize and weights cluster — no labels
are ever seen.  The denoiser itself stays frozen in the default mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from conceptdiff.composition import SimplexWeights, mix_scores
from conceptdiff.denoiser import ConditionalDenoiser, EMBED_INIT_STD
from conceptdiff.numerics.optim import AdamState, adam_step, sgd_step
from conceptdiff.numerics.rng import RngStream
from conceptdiff.numerics.tensor import (
    Tape,
    Tensor,
    backward,
    concat,
    gather_rows,
    reshape,
    slice_axis,
    softmax,
    tmean,
)
from conceptdiff.schedule import DiffusionSchedule

LR_LIBRARY = 5e-3
LR_LOGITS = 5e-2


@dataclass
class DiscoveryState:
    library: Tensor  # (K, d), requires_grad
    logits: Tensor  # (N, K), requires_grad; holds weights directly in projected mode
    mode: str = "frozen"  # "frozen" | "joint"
    optimizer: str = "adam"  # "adam" | "sgd"
    weight_param: str = "softmax"  # "softmax" | "projected"
    lr_library: float = LR_LIBRARY
    lr_logits: float = LR_LOGITS
    lr_net: float = LR_LIBRARY
    iteration: int = 0
    loss_trace: list = field(default_factory=list)
    opt_library: Optional[AdamState] = None
    opt_logits: Optional[AdamState] = None
    opt_net: Optional[AdamState] = None

    @property
    def k(self) -> int:
        return self.library.shape[0]

    def weights(self) -> np.ndarray:
        """Current per-item simplex weights, (N, K)."""
        if self.weight_param == "projected":
            return self.logits.data.copy()
        z = self.logits.data - self.logits.data.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def assignments(self) -> np.ndarray:
        """Arg-max concept per item; ties resolve to the lowest index."""
        return self.weights().argmax(axis=1)


def init_discovery(
    n_items: int,
    k: int,
    denoiser: ConditionalDenoiser,
    seed: int = 0,
    mode: str = "frozen",
    optimizer: str = "adam",
    weight_param: str = "softmax",
    lr_library: float = LR_LIBRARY,
    lr_logits: float = LR_LOGITS,
    lr_net: Optional[float] = None,
    library_init: Optional[np.ndarray] = None,
    logits_init: Optional[np.ndarray] = None,
) -> DiscoveryState:
    """Fresh state: small-normal embeddings, uniform weights.

    With ``weight_param="softmax"`` the weight matrix stores logits mapped
    through a row softmax (uniform = all zeros); ``"projected"`` stores the
    weights themselves and re-projects rows onto the simplex after every
    optimizer step.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if mode not in ("frozen", "joint"):
        raise ValueError(f"unknown mode {mode!r}")
    if optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    if weight_param not in ("softmax", "projected"):
        raise ValueError(f"unknown weight parameterization {weight_param!r}")
    if lr_net is None:
        lr_net = lr_library
    rng = RngStream(seed, stream=31)
    if library_init is None:
        library_init = rng.normal((k, denoiser.embed_dim)) * EMBED_INIT_STD
    if logits_init is None:
        if weight_param == "projected":
            logits_init = np.full((n_items, k), 1.0 / k)
        else:
            logits_init = np.zeros((n_items, k))
    state = DiscoveryState(
        # copies: optimizer steps mutate in place and must never write back
        # into caller-owned init arrays
        library=Tensor(np.array(library_init, dtype=np.float64), requires_grad=True),
        logits=Tensor(np.array(logits_init, dtype=np.float64), requires_grad=True),
        mode=mode,
        optimizer=optimizer,
        weight_param=weight_param,
        lr_library=lr_library,
        lr_logits=lr_logits,
        lr_net=lr_net,
    )
    if optimizer == "adam":
        state.opt_library = AdamState([state.library], lr=lr_library)
        state.opt_logits = AdamState([state.logits], lr=lr_logits)
        if mode == "joint":
            state.opt_net = AdamState(denoiser.params(), lr=lr_net)
    return state


def discover_step(
    state: DiscoveryState,
    items: np.ndarray,
    batch_idx: np.ndarray,
    denoiser: ConditionalDenoiser,
    schedule: DiffusionSchedule,
    rng: RngStream,
) -> float:
    """One joint update of the library and the batch rows' logits."""
    b = len(batch_idx)
    x0 = items[batch_idx]
    t = rng.randint(1, schedule.timesteps + 1, b)
    eps = rng.normal(x0.shape)
    x_t = schedule.forward_noise(x0, t, eps)
    k = state.k

    with Tape() as tape:
        rows = gather_rows(state.logits, batch_idx)  # (B, K)
        w = rows if state.weight_param == "projected" else softmax(rows, axis=-1)
        null_row = reshape(denoiser.null_embedding, (1, denoiser.embed_dim))
        conds = concat([state.library, null_row], axis=0)  # (K+1, d)
        preds = denoiser.predict_multi(x_t, t, conds)  # (B, K+1, D)
        eps_conds = slice_axis(preds, 1, 0, k)
        eps_uncond = reshape(slice_axis(preds, 1, k, k + 1), x0.shape)
        eps_mix = mix_scores(eps_conds, eps_uncond, w)
        loss = tmean((eps_mix - Tensor(eps)) ** 2.0)
        backward(tape, loss)

    val = loss.item()
    if not np.isfinite(val):
        raise FloatingPointError(
            f"discovery loss non-finite at iteration {state.iteration}"
        )
    if state.optimizer == "adam":
        adam_step([state.library], state.opt_library)
        adam_step([state.logits], state.opt_logits)
        if state.mode == "joint":
            adam_step(denoiser.params(), state.opt_net)
    else:
        sgd_step([state.library], state.lr_library)
        sgd_step([state.logits], state.lr_logits)
        if state.mode == "joint":
            sgd_step(denoiser.params(), state.lr_net)
    if state.weight_param == "projected":
        # adam momentum moves rows outside the current batch too, so the
        # whole table is re-projected, not just the batch rows
        state.logits.data = project_simplex_rows(state.logits.data)
    state.iteration += 1
    state.loss_trace.append(val)
    return val


def project_simplex_rows(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex."""
    v = np.atleast_2d(v)
    n, k = v.shape
    u = -np.sort(-v, axis=1)  # descending
    css = np.cumsum(u, axis=1)
    j = np.arange(1, k + 1)
    cond = u + (1.0 - css) / j > 0.0
    rho = k - np.argmax(cond[:, ::-1], axis=1) - 1  # last true index per row
    theta = (css[np.arange(n), rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta[:, None], 0.0)


def run_discovery(
    items: np.ndarray,
    denoiser: ConditionalDenoiser,
    schedule: DiffusionSchedule,
    k: int,
    iters: int = 3000,
    batch_size: int = 16,
    seed: int = 0,
    mode: str = "frozen",
    optimizer: str = "adam",
    weight_param: str = "softmax",
    lr_library: float = LR_LIBRARY,
    lr_logits: float = LR_LOGITS,
    lr_net: Optional[float] = None,
    state: Optional[DiscoveryState] = None,
) -> DiscoveryState:
    """Full discovery loop over an unlabeled (N, D) item array.

    Batches draw items uniformly with replacement.  In ``frozen`` mode the
    denoiser parameters are left untouched (bit-identical before/after);
    ``joint`` mode fine-tunes them alongside the library.
    """
    items = np.asarray(items, dtype=np.float64)
    n = items.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    if state is None:
        state = init_discovery(
            n, k, denoiser, seed=seed, mode=mode, optimizer=optimizer,
            weight_param=weight_param, lr_library=lr_library, lr_logits=lr_logits,
            lr_net=lr_net,
        )
    was_trainable = [p.requires_grad for p in denoiser.params()]
    denoiser.set_trainable(state.mode == "joint")
    try:
        rng = RngStream(seed, stream=32)
        for _ in range(iters):
            batch_idx = rng.randint(0, n, batch_size)
            discover_step(state, items, batch_idx, denoiser, schedule, rng)
    finally:
        for p, flag in zip(denoiser.params(), was_trainable):
            p.requires_grad = flag
    return state


def infer_weights(
    x_new: np.ndarray,
    library,
    denoiser: ConditionalDenoiser,
    schedule: DiffusionSchedule,
    iters: int = 500,
    seed: int = 0,
    lr: float = LR_LOGITS,
) -> SimplexWeights:
    """Simplex weights for a new item under a frozen library.

    Optimizes only the item's logits by the same mixture loss used during
    discovery.  ``x_new`` may also be (M, D); rows are then optimized as
    independent problems sharing one noise stream, and an (M, K) array of
    weights is returned instead of a single SimplexWeights.
    """
    x = np.asarray(x_new, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    lib_arr = library.data if isinstance(library, Tensor) else np.asarray(library)
    lib = Tensor(np.asarray(lib_arr, dtype=np.float64))
    m, k = x.shape[0], lib.shape[0]
    logits = Tensor(np.zeros((m, k)), requires_grad=True)
    opt = AdamState([logits], lr=lr)
    rng = RngStream(seed, stream=33)

    was_trainable = [p.requires_grad for p in denoiser.params()]
    denoiser.set_trainable(False)
    try:
        for _ in range(iters):
            t = rng.randint(1, schedule.timesteps + 1, m)
            eps = rng.normal(x.shape)
            x_t = schedule.forward_noise(x, t, eps)
            with Tape() as tape:
                w = softmax(logits, axis=-1)
                null_row = reshape(denoiser.null_embedding, (1, denoiser.embed_dim))
                conds = concat([lib, null_row], axis=0)
                preds = denoiser.predict_multi(x_t, t, conds)
                eps_conds = slice_axis(preds, 1, 0, k)
                eps_uncond = reshape(slice_axis(preds, 1, k, k + 1), x.shape)
                eps_mix = mix_scores(eps_conds, eps_uncond, w)
                loss = tmean((eps_mix - Tensor(eps)) ** 2.0)
                backward(tape, loss)
            if not np.isfinite(loss.item()):
                raise FloatingPointError("weight inference loss non-finite")
            adam_step([logits], opt)
    finally:
        for p, flag in zip(denoiser.params(), was_trainable):
            p.requires_grad = flag

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    w_out = e / e.sum(axis=1, keepdims=True)
    return SimplexWeights(w_out[0]) if single else w_out
