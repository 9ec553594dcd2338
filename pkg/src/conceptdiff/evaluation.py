"""Metrics: cluster accuracy, KL-to-uniform, weight-space classification,
pixel-space k-means baseline, and template detectors for glyph samples."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from conceptdiff.synthdata import GlyphSpec, render_glyph


# ---------------------------------------------------------------------------
# clustering metrics


def confusion_matrix(pred, true, n_pred=None, n_true=None) -> np.ndarray:
    """Counts[p, t] of items predicted p with ground truth t."""
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError("pred/true length mismatch")
    n_pred = int(n_pred) if n_pred is not None else int(pred.max()) + 1
    n_true = int(n_true) if n_true is not None else int(true.max()) + 1
    cm = np.zeros((n_pred, n_true), dtype=np.int64)
    np.add.at(cm, (pred, true), 1)
    return cm


def hungarian_accuracy(cm: np.ndarray) -> float:
    """Best one-to-one cluster-to-class matching, matched fraction.

    Stricter than most-frequent-class naming: two clusters can never claim
    the same class.  Exact optimum via linear sum assignment.
    """
    cm = np.asarray(cm)
    if cm.size == 0 or cm.sum() == 0:
        raise ValueError("empty confusion matrix")
    rows, cols = linear_sum_assignment(-cm)
    return float(cm[rows, cols].sum() / cm.sum())


def kl_to_uniform(counts) -> float:
    """KL(empirical class distribution || uniform) in nats."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if counts.size == 0 or total <= 0:
        raise ValueError("counts must be non-empty with positive total")
    p = counts / total
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] * counts.size)))


# ---------------------------------------------------------------------------
# logistic regression on weight representations


@dataclass
class LogregModel:
    w: np.ndarray  # (F, C)
    b: np.ndarray  # (C,)
    classes: np.ndarray  # original label values, index = column


def fit_logreg(
    features: np.ndarray,
    labels,
    steps: int = 500,
    lr: float = 0.5,
    l2: float = 1e-4,
) -> LogregModel:
    """Multinomial logistic regression by full-batch gradient descent."""
    x = np.asarray(features, dtype=np.float64)
    y_raw = np.asarray(labels)
    if x.shape[0] != y_raw.shape[0]:
        raise ValueError("features/labels length mismatch")
    classes = np.unique(y_raw)
    if classes.size < 2:
        raise ValueError("need at least two distinct classes to fit")
    y = np.searchsorted(classes, y_raw)
    n, f = x.shape
    c = classes.size
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0
    w = np.zeros((f, c))
    b = np.zeros(c)
    for _ in range(steps):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        delta = (p - onehot) / n
        w -= lr * (x.T @ delta + l2 * w)
        b -= lr * delta.sum(axis=0)
    return LogregModel(w=w, b=b, classes=classes)


def predict_logreg(model: LogregModel, features: np.ndarray) -> np.ndarray:
    logits = np.asarray(features) @ model.w + model.b
    return model.classes[logits.argmax(axis=1)]


def logreg_accuracy(model: LogregModel, features, labels) -> float:
    pred = predict_logreg(model, np.asarray(features))
    return float(np.mean(pred == np.asarray(labels)))


# ---------------------------------------------------------------------------
# pixel-space k-means baseline


def kmeans_baseline(
    items: np.ndarray,
    k: int,
    seed: int = 0,
    iters: int = 100,
):
    """Lloyd's algorithm with k-means++ seeding.

    Returns (assignments, centroids, sse_trace); the trace logs the
    within-cluster SSE after each assignment step and is non-increasing.
    """
    from conceptdiff.numerics.rng import RngStream

    x = np.asarray(items, dtype=np.float64)
    n = x.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds {n} items")
    rng = RngStream(seed, stream=41)

    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.randint(0, n)]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total == 0.0:
            centroids[j] = x[rng.randint(0, n)]
            continue
        r = rng.uniform() * total
        centroids[j] = x[np.searchsorted(np.cumsum(d2), r)]
        d2 = np.minimum(d2, np.sum((x - centroids[j]) ** 2, axis=1))

    assign = np.zeros(n, dtype=np.int64)
    trace = []
    for _ in range(iters):
        dists = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = dists.argmin(axis=1)
        sse = float(dists[np.arange(n), assign].sum())
        trace.append(sse)
        new_centroids = centroids.copy()
        for j in range(k):
            members = x[assign == j]
            if members.shape[0] > 0:
                new_centroids[j] = members.mean(axis=0)
        if np.array_equal(new_centroids, centroids):
            break
        centroids = new_centroids
    return assign, centroids, trace


# ---------------------------------------------------------------------------
# glyph template detectors


@dataclass
class TemplateDetectors:
    """Noise-free, zero-jitter reference templates plus a firing threshold.

    One template per factor value: shape templates average the centered
    render over lightings, lighting templates average over shapes.  Shape
    is decided by argmax Pearson correlation (mean-subtracted NCC), which
    keys on silhouette structure and ignores overall brightness.  Lighting
    is the opposite problem — its signature IS the brightness level, which
    any mean- or norm-removing correlation destroys — so the lighting
    value is the nearest template in plain L2, gated by unnormalized
    cosine against that template.  Both factors fire only when their
    correlation with the chosen template exceeds the threshold.  Ties
    resolve to the lowest index.
    """

    spec: GlyphSpec
    shape_templates: np.ndarray  # (S, size*size)
    light_templates: np.ndarray  # (L, size*size)
    threshold: float = 0.6


def build_detectors(
    spec: GlyphSpec = GlyphSpec(),
    threshold: float = 0.6,
) -> TemplateDetectors:
    renders = np.array(
        [
            [render_glyph(spec, s, l).reshape(-1) for l in range(spec.n_lightings)]
            for s in range(spec.n_shapes)
        ]
    )  # (S, L, size*size)
    return TemplateDetectors(
        spec=spec,
        shape_templates=renders.mean(axis=1),
        light_templates=renders.mean(axis=0),
        threshold=threshold,
    )


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(a @ b / denom)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(a @ b / denom)


def detect_factors(sample: np.ndarray, detectors: TemplateDetectors):
    """(shape id or None, lighting id or None) for one flat glyph sample."""
    spec = detectors.spec
    flat = np.asarray(sample, dtype=np.float64).reshape(-1)
    if flat.size != spec.size * spec.size:
        raise ValueError(
            f"sample has {flat.size} pixels, expected {spec.size * spec.size}"
        )
    corrs = np.array([_pearson(flat, t) for t in detectors.shape_templates])
    shape_id = int(corrs.argmax())  # argmax takes the lowest index on ties
    shape = shape_id if corrs[shape_id] > detectors.threshold else None

    dists = np.array(
        [np.linalg.norm(flat - t) for t in detectors.light_templates]
    )
    light_id = int(dists.argmin())
    gate = _cosine(flat, detectors.light_templates[light_id])
    light = light_id if gate > detectors.threshold else None
    return shape, light


# ---------------------------------------------------------------------------
# factor recovery from weight rows


def factor_recovery_rate(
    weights: np.ndarray,
    factor_labels: np.ndarray,
    n_shapes: int,
    n_lightings: int,
):
    """Fraction of items whose top-2 weights name their true (shape, lighting).

    Concepts are mapped one-to-one onto the n_shapes + n_lightings factor
    values by brute force over assignments, keeping the best rate.  Returns
    (rate, mapping) where mapping[concept] = factor value index (shapes
    first, then lightings).
    """
    w = np.asarray(weights, dtype=np.float64)
    labels = np.asarray(factor_labels, dtype=np.int64)
    n, k = w.shape
    n_factors = n_shapes + n_lightings
    if k < 2:
        raise ValueError("need at least two concepts for top-2 recovery")
    if k > n_factors:
        raise ValueError(
            f"{k} concepts cannot map one-to-one onto {n_factors} factor values"
        )
    top2 = np.argsort(-w, axis=1, kind="stable")[:, :2]
    targets = [
        {int(s), n_shapes + int(l)} for s, l in labels
    ]  # factor-value ids per item
    best_rate, best_map = -1.0, None
    for perm in permutations(range(n_factors), k):
        hits = 0
        for i in range(n):
            got = {perm[top2[i, 0]], perm[top2[i, 1]]}
            hits += got == targets[i]
        rate = hits / n
        if rate > best_rate:
            best_rate, best_map = rate, perm
    return float(best_rate), dict(enumerate(best_map))
