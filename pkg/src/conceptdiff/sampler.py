"""Reverse-process samplers: ancestral, DDIM, optional Langevin correction.

A sampler consumes an eps-prediction function ``eps_fn(x, t) -> eps_hat``
operating on plain (B, D) arrays, so any composition of denoiser outputs
can be sampled from without touching sampler code.

Per-level composition of predicted noise is exact for matching component
widths but only approximate in general; the optional corrector rounds run
a few steps of Langevin dynamics against the same eps_fn at fixed level,
which pulls the iterate distribution toward the composed target before the
next predictor step.  ``corrector_steps=0`` (the default) leaves both
samplers in their plain closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from conceptdiff.composition import ScoreSet, compose_conjunction, guide
from conceptdiff.numerics.rng import RngStream
from conceptdiff.schedule import DiffusionSchedule

EpsFn = Callable[[np.ndarray, int], np.ndarray]


@dataclass
class SamplerConfig:
    kind: str = "ancestral"  # "ancestral" | "ddim"
    steps: int = 50  # DDIM only; ancestral always walks all T levels
    guidance: float = 2.0
    count: int = 64
    seed: int = 0
    corrector_steps: int = 0
    corrector_snr: float = 0.1
    x0_clamp: tuple | None = None  # (lo, hi) bound on predicted clean data

    def __post_init__(self):
        if self.kind not in ("ancestral", "ddim"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.corrector_steps < 0:
            raise ValueError("corrector_steps must be >= 0")
        if self.x0_clamp is not None:
            lo, hi = self.x0_clamp
            if not lo < hi:
                raise ValueError(f"x0_clamp needs lo < hi, got {self.x0_clamp}")


def _langevin_round(
    x: np.ndarray,
    level: int,
    eps_fn: EpsFn,
    schedule: DiffusionSchedule,
    rng: RngStream,
    n_steps: int,
    snr: float,
) -> np.ndarray:
    """Langevin iterations targeting the composed density at a fixed level.

    The score is -eps_hat / sqrt(1 - alpha_bar); step size is set per batch
    from the signal-to-noise ratio rule eta = 2 * (snr * |z| / |score|)^2.
    """
    if level < 1:
        return x
    denom = np.sqrt(1.0 - schedule.alpha_bar(level))
    for _ in range(n_steps):
        score = -eps_fn(x, level) / denom
        z = rng.normal(x.shape)
        s_norm = np.sqrt(np.mean(score**2))
        if s_norm == 0.0:
            continue
        z_norm = np.sqrt(np.mean(z**2))
        eta = 2.0 * (snr * z_norm / s_norm) ** 2
        x = x + eta * score + np.sqrt(2.0 * eta) * z
    return x


def sample_ancestral(
    eps_fn: EpsFn,
    schedule: DiffusionSchedule,
    dim: int,
    count: int,
    rng: RngStream,
    corrector_steps: int = 0,
    corrector_snr: float = 0.1,
    x0_clamp: tuple | None = None,
) -> np.ndarray:
    """Full-schedule stochastic reverse walk from x_T ~ N(0, I).

    ``x0_clamp`` bounds the implied clean-data estimate each step before
    the posterior mean is formed; off-manifold predictors on bounded data
    (images) otherwise compound their own extrapolation error.  Unset, the
    update is the plain noise-prediction form.
    """
    x = rng.normal((count, dim))
    for t in range(schedule.timesteps, 0, -1):
        eps_hat = eps_fn(x, t)
        alpha = schedule.alpha(t)
        beta = schedule.beta(t)
        ab = schedule.alpha_bar(t)
        if x0_clamp is None:
            mean = (x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
        else:
            x0_hat = (x - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
            x0_hat = np.clip(x0_hat, *x0_clamp)
            ab_prev = schedule.alpha_bar(t - 1)
            mean = (
                np.sqrt(ab_prev) * beta * x0_hat
                + np.sqrt(alpha) * (1.0 - ab_prev) * x
            ) / (1.0 - ab)
        if t > 1:
            x = mean + schedule.sigma(t) * rng.normal((count, dim))
        else:
            x = mean  # final step is deterministic
        if corrector_steps > 0:
            x = _langevin_round(
                x, t - 1, eps_fn, schedule, rng, corrector_steps, corrector_snr
            )
    return x


def sample_ddim(
    eps_fn: EpsFn,
    schedule: DiffusionSchedule,
    dim: int,
    count: int,
    rng: RngStream,
    steps: int = 50,
    corrector_steps: int = 0,
    corrector_snr: float = 0.1,
    x0_clamp: tuple | None = None,
) -> np.ndarray:
    """Deterministic coarse-grid sampler (eta = 0) on an even level stride.

    ``x0_clamp`` bounds the predicted clean data each step, as in
    sample_ancestral.
    """
    t_total = schedule.timesteps
    if steps < 1 or t_total % steps != 0:
        raise ValueError(
            f"steps must evenly divide the schedule: {steps} vs T={t_total}"
        )
    stride = t_total // steps
    x = rng.normal((count, dim))
    for t in range(t_total, 0, -stride):
        if corrector_steps > 0:
            x = _langevin_round(
                x, t, eps_fn, schedule, rng, corrector_steps, corrector_snr
            )
        t_prev = t - stride
        eps_hat = eps_fn(x, t)
        ab = schedule.alpha_bar(t)
        ab_prev = schedule.alpha_bar(t_prev)
        x0_hat = (x - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
        if x0_clamp is not None:
            x0_hat = np.clip(x0_hat, *x0_clamp)
            # keep the step self-consistent: redirect along the noise the
            # clamped clean estimate implies
            eps_hat = (x - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)
        x = np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat
    return x


def conditional_eps_fn(denoiser, embedding, guidance: float) -> EpsFn:
    """Classifier-free-guided prediction under one condition embedding."""

    def eps_fn(x: np.ndarray, t: int) -> np.ndarray:
        cond = denoiser.predict(x, t, embedding)
        if guidance == 1.0:
            return cond.data
        uncond = denoiser.predict(x, t, None)
        return guide(cond, uncond, guidance).data

    return eps_fn


def conjunction_eps_fn(denoiser, embeddings, guidance: float) -> EpsFn:
    """Joint condition over several embeddings, then guidance vs the null."""
    embeddings = list(embeddings)

    def eps_fn(x: np.ndarray, t: int) -> np.ndarray:
        uncond = denoiser.predict(x, t, None)
        conds = [denoiser.predict(x, t, e) for e in embeddings]
        joint = compose_conjunction(ScoreSet(uncond=uncond, conds=conds))
        return guide(joint, uncond, guidance).data

    return eps_fn


def sample_composed(
    denoiser,
    embeddings,
    schedule: DiffusionSchedule,
    config: SamplerConfig,
) -> np.ndarray:
    """Draw samples under the conjunction of the given concept embeddings."""
    eps_fn = conjunction_eps_fn(denoiser, embeddings, config.guidance)
    rng = RngStream(config.seed, stream=101)
    if config.kind == "ancestral":
        return sample_ancestral(
            eps_fn,
            schedule,
            denoiser.data_dim,
            config.count,
            rng,
            config.corrector_steps,
            config.corrector_snr,
            x0_clamp=config.x0_clamp,
        )
    return sample_ddim(
        eps_fn,
        schedule,
        denoiser.data_dim,
        count=config.count,
        rng=rng,
        steps=config.steps,
        corrector_steps=config.corrector_steps,
        corrector_snr=config.corrector_snr,
        x0_clamp=config.x0_clamp,
    )
