"""Conditional noise-prediction MLP and its pretraining loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from conceptdiff.numerics.optim import AdamState, adam_step
from conceptdiff.numerics.rng import RngStream
from conceptdiff.numerics.tensor import (
    Tape,
    Tensor,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    gather_rows,
    reshape,
    silu,
    tmean,
)
from conceptdiff.schedule import DiffusionSchedule

TIME_DIM = 64
EMBED_DIM = 32
EMBED_INIT_STD = 0.02


def time_embedding(t, dim: int = TIME_DIM) -> np.ndarray:
    """Sinusoidal features of the (1-based) step index.

    Half the dims are sines, half cosines, over frequencies spaced
    geometrically from 1 to 1e4.  Returns (B, dim) for array t, (dim,)
    for scalar t.
    """
    if dim % 2 != 0:
        raise ValueError(f"time embedding dim must be even, got {dim}")
    half = dim // 2
    periods = 10.0 ** np.linspace(0.0, 4.0, half)
    t_arr = np.asarray(t, dtype=np.float64)
    ang = t_arr.reshape(-1, 1) / periods
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    return emb if t_arr.ndim else emb[0]


def init_embedding(rng: RngStream, dim: int = EMBED_DIM) -> Tensor:
    """Fresh trainable concept embedding, small-normal initialized."""
    return Tensor(rng.normal((dim,)) * EMBED_INIT_STD, requires_grad=True)


@dataclass
class PretrainCorpus:
    """Training items with per-item descriptor indices into a fixed vocabulary.

    ``descriptors[i]`` lists the vocabulary rows that truthfully describe
    item i (e.g. one class index, or one shape index plus one lighting
    index).  ``vocab`` rows are frozen; only the denoiser (including its
    null embedding) trains against them.
    """

    items: np.ndarray  # (N, D)
    descriptors: list[list[int]]
    vocab: np.ndarray  # (V, embed_dim)
    p_uncond: float = 0.1
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.descriptors) != self.items.shape[0]:
            raise ValueError("one descriptor list per item required")
        if not 0.0 <= self.p_uncond < 1.0:
            raise ValueError(f"p_uncond out of [0, 1): {self.p_uncond}")
        v = self.vocab.shape[0]
        for i, desc in enumerate(self.descriptors):
            if not desc:
                raise ValueError(f"item {i} has no descriptors")
            if any(not 0 <= d < v for d in desc):
                raise ValueError(f"item {i} descriptor out of vocab range: {desc}")


class ConditionalDenoiser:
    """MLP eps-predictor over [x_t, time embedding, condition embedding]."""

    def __init__(
        self,
        data_dim: int,
        embed_dim: int = EMBED_DIM,
        hidden_width: int = 512,
        hidden_layers: int = 3,
        time_dim: int = TIME_DIM,
        rng: Optional[RngStream] = None,
    ):
        if rng is None:
            rng = RngStream(0, stream=7)
        self.data_dim = int(data_dim)
        self.embed_dim = int(embed_dim)
        self.hidden_width = int(hidden_width)
        self.hidden_layers = int(hidden_layers)
        self.time_dim = int(time_dim)

        in_dim = data_dim + time_dim + embed_dim
        dims = [in_dim] + [hidden_width] * hidden_layers + [data_dim]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            std = np.sqrt(2.0 / fan_in)
            if i == len(dims) - 2:
                std = 0.1 / np.sqrt(fan_in)  # small head: initial predictions near zero
            w = rng.normal((fan_in, fan_out)) * std
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
        self.null_embedding = init_embedding(rng, embed_dim)

    def params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        out.append(self.null_embedding)
        return out

    def set_trainable(self, flag: bool):
        for p in self.params():
            p.requires_grad = bool(flag)

    def _forward(self, h: Tensor) -> Tensor:
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = silu(h)
        return h

    def predict(self, x_t, t, cond=None) -> Tensor:
        """Predicted noise for x_t at level t under one condition.

        ``cond=None`` routes to the learned null embedding, which is the
        unconditional branch.  Accepts a single item (D,) or a batch (B, D);
        output shape matches the input.  Differentiable w.r.t. x_t, cond,
        and the network parameters when those are on an active tape.
        """
        x = as_tensor(x_t)
        single = x.ndim == 1
        if single:
            x = reshape(x, (1, self.data_dim))
        b = x.shape[0]
        temb = Tensor(np.broadcast_to(time_embedding(t, self.time_dim), (b, self.time_dim)).copy())
        if cond is None:
            cond = self.null_embedding
        c = as_tensor(cond)
        if c.ndim == 1:
            c = broadcast_to(reshape(c, (1, self.embed_dim)), (b, self.embed_dim))
        h = concat([x, temb, c], axis=1)
        out = self._forward(h)
        return reshape(out, (self.data_dim,)) if single else out

    def predict_multi(self, x_t: np.ndarray, t, conds: Tensor) -> Tensor:
        """Predictions for every (item, condition) pair in one batched pass.

        x_t: (B, D) plain array; t: scalar or (B,); conds: (M, d) tensor.
        Returns (B, M, D).  Gradients flow to ``conds`` (and the network);
        x_t is treated as a constant.
        """
        x = np.asarray(x_t, dtype=np.float64)
        conds = as_tensor(conds)
        b = x.shape[0]
        m = conds.shape[0]
        temb = np.broadcast_to(time_embedding(t, self.time_dim), (b, self.time_dim))
        xt_block = np.concatenate([x, temb], axis=1)  # (B, D + T)
        tiled = np.repeat(xt_block, m, axis=0)  # (B*M, D + T)
        cond_block = reshape(
            broadcast_to(reshape(conds, (1, m, self.embed_dim)), (b, m, self.embed_dim)),
            (b * m, self.embed_dim),
        )
        h = concat([Tensor(tiled), cond_block], axis=1)
        out = self._forward(h)
        return reshape(out, (b, m, self.data_dim))

    # ------------------------------------------------------------------
    def pretrain(
        self,
        corpus: PretrainCorpus,
        schedule: DiffusionSchedule,
        steps: int,
        rng: RngStream,
        batch_size: int = 32,
        lr: float = 1e-3,
        cond_scale: tuple[float, float] | None = None,
        desc_dropout: float = 0.0,
    ) -> list[float]:
        """Denoising-MSE training against summed item descriptors.

        Each batch row draws a random item, level, and noise; with
        probability ``p_uncond`` the condition drops to the null embedding,
        otherwise it is the sum of the item's descriptor embeddings.
        Additive conditioning keeps single-factor vectors meaningful
        directions of the learned response, which is what makes factored
        mixtures and conjunction composition work downstream.

        Two optional augmentations widen the trained conditioning envelope
        beyond the exact descriptor sums.  ``desc_dropout`` independently
        removes each descriptor from the sum with that probability (a row
        losing all of them trains as unconditional), so single-factor
        directions are trained responses rather than extrapolations.
        ``cond_scale=(lo, hi)`` multiplies each row's condition by a
        log-uniform draw from [lo, hi] while keeping the same noise
        target, covering the norms convex mixtures of library vectors
        actually probe.  Returns the per-step loss trace.
        """
        n = corpus.items.shape[0]
        params = self.params()
        state = AdamState(params, lr=lr)
        vocab = np.asarray(corpus.vocab, dtype=np.float64)
        losses: list[float] = []
        for step in range(steps):
            idx = rng.randint(0, n, batch_size)
            t = rng.randint(1, schedule.timesteps + 1, batch_size)
            eps = rng.normal((batch_size, self.data_dim))
            x_t = schedule.forward_noise(corpus.items[idx], t, eps)

            drop = rng.uniform(batch_size) < corpus.p_uncond
            cond_rows = np.empty((batch_size, self.embed_dim))
            for j, i in enumerate(idx):
                desc = corpus.descriptors[i]
                if desc_dropout > 0.0:
                    keep = rng.uniform(len(desc)) >= desc_dropout
                    if not keep.any():
                        drop[j] = True
                        cond_rows[j] = 0.0
                        continue
                    desc = [d for d, k in zip(desc, keep) if k]
                cond_rows[j] = vocab[desc].sum(axis=0)
            if cond_scale is not None:
                lo, hi = cond_scale
                if not (0.0 < lo <= hi):
                    raise ValueError("cond_scale must satisfy 0 < lo <= hi")
                alpha = np.exp(
                    np.log(lo) + rng.uniform(batch_size) * (np.log(hi) - np.log(lo))
                )
                cond_rows *= alpha[:, None]
            mask = (~drop).astype(np.float64)[:, None]

            with Tape() as tape:
                null_b = broadcast_to(
                    reshape(self.null_embedding, (1, self.embed_dim)),
                    (batch_size, self.embed_dim),
                )
                cond = Tensor(cond_rows * mask) + null_b * Tensor(1.0 - mask)
                x_in = Tensor(x_t)
                temb = Tensor(time_embedding(t, self.time_dim))
                h = concat([x_in, temb, cond], axis=1)
                pred = self._forward(h)
                loss = tmean((pred - Tensor(eps)) ** 2.0)
                backward(tape, loss)
            val = loss.item()
            if not np.isfinite(val):
                raise FloatingPointError(f"pretrain loss non-finite at step {step}")
            losses.append(val)
            adam_step(params, state)
        return losses
