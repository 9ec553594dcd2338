"""Synthetic corpora with known factor structure.

Two domains:

* ``gauss2d`` — K well-separated isotropic clusters on a circle; the
  ground-truth factor is the cluster id.
* ``glyphs`` — 16x16 grayscale images, albedo shape (square / cross /
  disk) times a horizontal lighting gradient (dark / bright), with pixel
  jitter and additive noise.  Ground truth is the (shape, lighting) pair.

Ground-truth labels ride along in ``LabeledDataset.labels`` for the
evaluation layer only; discovery code receives bare item arrays and has
no access path to them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from conceptdiff.denoiser import EMBED_DIM, PretrainCorpus
from conceptdiff.numerics.rng import RngStream


@dataclass
class LabeledDataset:
    items: np.ndarray  # (N, D) float64
    labels: np.ndarray  # (N,) int for gauss2d, (N, 2) int for glyphs
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.items.shape[0] != self.labels.shape[0]:
            raise ValueError("items and labels must align")


# ---------------------------------------------------------------------------
# gauss2d


def circle_means(k: int = 5, radius: float = 4.0) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(k) / k
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def gen_gauss2d(
    seed: int,
    k: int = 5,
    n_per_class: int = 5,
    std: float = 0.3,
    means: np.ndarray | None = None,
) -> LabeledDataset:
    """Balanced draw of n_per_class points from each cluster."""
    if means is None:
        means = circle_means(k)
    means = np.asarray(means, dtype=np.float64)
    if means.shape[0] != k:
        raise ValueError(f"{means.shape[0]} means for k={k}")
    dists = np.linalg.norm(means[:, None] - means[None, :], axis=-1)
    np.fill_diagonal(dists, np.inf)
    if k > 1 and dists.min() < 6.0 * std:
        warnings.warn(
            f"cluster separation {dists.min():.3f} < 6*std = {6*std:.3f}; "
            "discovered concepts may merge",
            stacklevel=2,
        )
    rng = RngStream(seed, stream=21)
    labels = np.repeat(np.arange(k), n_per_class)
    items = means[labels] + std * rng.normal((k * n_per_class, 2))
    manifest = {
        "domain": "gauss2d",
        "k": k,
        "n_per_class": n_per_class,
        "std": std,
        "means": means.tolist(),
        "seed": seed,
    }
    return LabeledDataset(items=items, labels=labels, manifest=manifest)


# ---------------------------------------------------------------------------
# glyphs


@dataclass(frozen=True)
class GlyphSpec:
    size: int = 16
    shapes: tuple = ("square", "cross", "disk")
    lightings: tuple = ("dark", "bright")
    gradients: tuple = ((0.1, 0.4), (0.5, 1.0))  # one (lo, hi) per lighting
    background: float = 0.5  # albedo outside the shape
    foreground: float = 0.7  # lit albedo of the shape body
    emission: float = 0.3  # lighting-independent brightness of the shape body
    jitter_px: int = 1
    noise_std: float = 0.02

    @property
    def n_shapes(self) -> int:
        return len(self.shapes)

    @property
    def n_lightings(self) -> int:
        return len(self.lightings)

    @property
    def n_factors(self) -> int:
        return self.n_shapes + self.n_lightings


def shape_mask(spec: GlyphSpec, shape: str, jitter=(0, 0)) -> np.ndarray:
    """Boolean albedo mask of the given shape at center + jitter.

    The three silhouettes are deliberately spread in covered area and
    spatial extent (disk 32 px / square 64 px / cross 132 px) so that
    shape identity shows up in coarse pooled statistics, not only in
    edge placement.  All masks stay inside the canvas under the full
    jitter range.
    """
    n = spec.size
    cy, cx = n // 2 + jitter[0], n // 2 + jitter[1]
    rows, cols = np.mgrid[0:n, 0:n]
    if shape == "square":
        return (np.abs(rows - cy + 0.5) <= 4) & (np.abs(cols - cx + 0.5) <= 4)
    if shape == "cross":
        horiz = (np.abs(rows - cy + 0.5) <= 2.5) & (np.abs(cols - cx + 0.5) <= 7)
        vert = (np.abs(cols - cx + 0.5) <= 2.5) & (np.abs(rows - cy + 0.5) <= 7)
        return horiz | vert
    if shape == "disk":
        return (rows - cy + 0.5) ** 2 + (cols - cx + 0.5) ** 2 <= 3.0**2
    raise ValueError(f"unknown shape {shape!r}")


def render_glyph(
    spec: GlyphSpec,
    shape_id: int,
    light_id: int,
    jitter=(0, 0),
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """One (size, size) image in [0, 1]: lit albedo plus shape emission.

    The shape body combines a lit component with a lighting-independent
    emissive term, so its contrast against the background stays strong
    under either gradient, and the brightest possible shape pixel caps at
    exactly foreground + emission = 1.0, leaving the lighting factor
    carried by the gradient itself.
    """
    mask = shape_mask(spec, spec.shapes[shape_id], jitter)
    albedo = np.where(mask, spec.foreground, spec.background)
    lo, hi = spec.gradients[light_id]
    lighting = np.linspace(lo, hi, spec.size)[None, :]
    img = albedo * lighting + spec.emission * mask
    if noise is not None:
        img = img + noise
    return np.clip(img, 0.0, 1.0)


def gen_glyphs(
    seed: int,
    n_per_combo: int = 5,
    spec: GlyphSpec = GlyphSpec(),
) -> LabeledDataset:
    """Balanced dataset over all shape x lighting combinations."""
    rng = RngStream(seed, stream=22)
    items = []
    labels = []
    for s in range(spec.n_shapes):
        for l in range(spec.n_lightings):
            for _ in range(n_per_combo):
                jitter = (
                    rng.randint(-spec.jitter_px, spec.jitter_px + 1),
                    rng.randint(-spec.jitter_px, spec.jitter_px + 1),
                )
                noise = spec.noise_std * rng.normal((spec.size, spec.size))
                img = render_glyph(spec, s, l, jitter, noise)
                items.append(img.reshape(-1))
                labels.append((s, l))
    manifest = {
        "domain": "glyphs",
        "n_per_combo": n_per_combo,
        "seed": seed,
        "size": spec.size,
        "shapes": list(spec.shapes),
        "lightings": list(spec.lightings),
    }
    return LabeledDataset(
        items=np.array(items), labels=np.array(labels, dtype=np.int64), manifest=manifest
    )


# ---------------------------------------------------------------------------
# pretraining corpora


VOCAB_STD = 0.1


def gen_pretrain_corpus(
    domain: str,
    size: int,
    seed: int,
    k: int = 5,
    gauss_std: float = 0.3,
    spec: GlyphSpec = GlyphSpec(),
    p_uncond: float = 0.1,
    embed_dim: int = EMBED_DIM,
    vocab_std: float = VOCAB_STD,
) -> PretrainCorpus:
    """Large labeled corpus plus a fixed descriptor-embedding vocabulary.

    Strata are balanced exactly (every class / factor combination appears
    ``size // n_strata`` or one more time), then shuffled.  Vocabulary
    embeddings are i.i.d. N(0, vocab_std^2) rows frozen at generation time;
    the default scale keeps them within reach of concept embeddings that
    start near the origin during discovery.  Glyph items carry two
    descriptors (shape index, then n_shapes + lighting index).
    """
    rng = RngStream(seed, stream=23)
    vocab_rng = rng.fork(1)
    noise_rng = rng.fork(2)

    if domain == "gauss2d":
        means = circle_means(k)
        strata = _balanced_strata(k, size, rng)
        items = means[strata] + gauss_std * noise_rng.normal((size, 2))
        descriptors = [[int(c)] for c in strata]
        vocab = vocab_std * vocab_rng.normal((k, embed_dim))
        manifest = {
            "domain": domain,
            "size": size,
            "seed": seed,
            "k": k,
            "std": gauss_std,
            "means": means.tolist(),
        }
    elif domain == "glyphs":
        n_combo = spec.n_shapes * spec.n_lightings
        strata = _balanced_strata(n_combo, size, rng)
        items = np.empty((size, spec.size * spec.size))
        descriptors = []
        for i, combo in enumerate(strata):
            s, l = divmod(int(combo), spec.n_lightings)
            jitter = (
                noise_rng.randint(-spec.jitter_px, spec.jitter_px + 1),
                noise_rng.randint(-spec.jitter_px, spec.jitter_px + 1),
            )
            noise = spec.noise_std * noise_rng.normal((spec.size, spec.size))
            items[i] = render_glyph(spec, s, l, jitter, noise).reshape(-1)
            descriptors.append([s, spec.n_shapes + l])
        vocab = vocab_std * vocab_rng.normal((spec.n_factors, embed_dim))
        manifest = {
            "domain": domain,
            "size": size,
            "seed": seed,
            "shapes": list(spec.shapes),
            "lightings": list(spec.lightings),
        }
    else:
        raise ValueError(f"unknown domain {domain!r}")

    return PretrainCorpus(
        items=items,
        descriptors=descriptors,
        vocab=vocab,
        p_uncond=p_uncond,
        manifest=manifest,
    )


def _balanced_strata(n_strata: int, size: int, rng: RngStream) -> np.ndarray:
    reps = size // n_strata
    rem = size % n_strata
    strata = np.concatenate([np.repeat(np.arange(n_strata), reps), np.arange(rem)])
    return strata[rng.shuffle(size)]
