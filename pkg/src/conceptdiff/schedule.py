"""Linear-beta diffusion schedule and the closed-form forward process."""

from __future__ import annotations

import numpy as np


class DiffusionSchedule:
    """Precomputed beta/alpha tables; step indices t are 1-based, t in [1, T].

    Index 0 in the cumulative-product accessor denotes the clean-data level,
    i.e. ``alpha_bar(0) == 1``.
    """

    def __init__(self, timesteps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02):
        if timesteps < 1:
            raise ValueError(f"timesteps must be >= 1, got {timesteps}")
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise ValueError(
                f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )
        self.timesteps = int(timesteps)
        self.beta_start = float(beta_start)
        self.beta_end = float(beta_end)
        if timesteps == 1:
            self.betas = np.array([beta_start], dtype=np.float64)
        else:
            self.betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)
        self._alpha_bars_padded = np.concatenate([[1.0], self.alpha_bars])
        for arr in (self.betas, self.alphas, self.alpha_bars, self._alpha_bars_padded):
            arr.setflags(write=False)

    def beta(self, t):
        return self.betas[self._idx(t)]

    def alpha(self, t):
        return self.alphas[self._idx(t)]

    def alpha_bar(self, t):
        """Cumulative product of alphas up to t; alpha_bar(0) = 1."""
        t_arr = np.asarray(t)
        if np.any(t_arr < 0) or np.any(t_arr > self.timesteps):
            raise ValueError(f"t out of range [0, {self.timesteps}]: {t}")
        out = self._alpha_bars_padded[t_arr]
        return out if t_arr.ndim else float(out)

    def sigma(self, t):
        """Posterior std of the reverse transition at step t; sigma(1) == 0."""
        ab_t = self.alpha_bar(t)
        ab_prev = self.alpha_bar(np.asarray(t) - 1)
        var = self.beta(t) * (1.0 - ab_prev) / (1.0 - ab_t)
        return np.sqrt(var)

    def forward_noise(self, x0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
        """Diffuse clean data to level t: sqrt(ab)*x0 + sqrt(1-ab)*eps.

        ``t`` may be a scalar (shared level) or a 1-D array with one level
        per leading row of ``x0``.
        """
        x0 = np.asarray(x0, dtype=np.float64)
        eps = np.asarray(eps, dtype=np.float64)
        if x0.shape != eps.shape:
            raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
        ab = self.alpha_bar(t)
        if np.ndim(ab) > 0:
            ab = np.asarray(ab).reshape((-1,) + (1,) * (x0.ndim - 1))
        return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps

    def _idx(self, t):
        t_arr = np.asarray(t)
        if np.any(t_arr < 1) or np.any(t_arr > self.timesteps):
            raise ValueError(f"t out of range [1, {self.timesteps}]: {t}")
        idx = t_arr - 1
        return idx if t_arr.ndim else int(idx)
