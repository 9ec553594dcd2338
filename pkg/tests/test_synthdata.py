import numpy as np
import pytest

from conceptdiff.numerics import RngStream
from conceptdiff.synthdata import (
    GlyphSpec,
    circle_means,
    gen_gauss2d,
    gen_glyphs,
    gen_pretrain_corpus,
    render_glyph,
    shape_mask,
)


def test_circle_means_geometry():
    means = circle_means(5, radius=4.0)
    assert means.shape == (5, 2)
    assert np.allclose(np.linalg.norm(means, axis=1), 4.0)
    d = np.linalg.norm(means[:, None] - means[None, :], axis=2)
    off = d[~np.eye(5, dtype=bool)]
    assert off.min() > 4.0  # adjacent points on the circle stay well apart


def test_gauss2d_balance_and_determinism():
    ds = gen_gauss2d(seed=3)
    assert ds.items.shape == (25, 2)
    assert np.array_equal(np.bincount(ds.labels, minlength=5), np.full(5, 5))
    again = gen_gauss2d(seed=3)
    assert np.array_equal(ds.items, again.items)
    assert np.array_equal(ds.labels, again.labels)
    other = gen_gauss2d(seed=4)
    assert not np.array_equal(ds.items, other.items)


def test_gauss2d_points_near_their_means():
    ds = gen_gauss2d(seed=0)
    means = circle_means(5)
    dev = np.linalg.norm(ds.items - means[ds.labels], axis=1)
    assert dev.max() < 6 * 0.3  # matches the spacing the warning protects


def test_gauss2d_warns_when_clusters_overlap():
    with pytest.warns(UserWarning, match="separation"):
        gen_gauss2d(seed=0, std=1.5)


def test_glyph_spec_counts():
    spec = GlyphSpec()
    assert spec.n_shapes == 3
    assert spec.n_lightings == 2
    assert spec.n_factors == 5


def test_shape_masks_pixel_counts():
    spec = GlyphSpec()
    counts = {s: int(shape_mask(spec, s).sum()) for s in spec.shapes}
    # silhouettes deliberately spread in covered area: 32 / 64 / 132 px
    assert counts == {"square": 64, "cross": 132, "disk": 32}
    shifted = shape_mask(spec, "square", jitter=(1, -1))
    assert int(shifted.sum()) == 64  # jitter moves the mask, never clips it


def test_shape_mask_unknown_shape():
    with pytest.raises(ValueError, match="unknown shape"):
        shape_mask(GlyphSpec(), "triangle")


def test_render_ranges_and_lighting_gap():
    spec = GlyphSpec()
    for s in range(3):
        dark = render_glyph(spec, s, 0)
        bright = render_glyph(spec, s, 1)
        for img in (dark, bright):
            assert img.shape == (16, 16)
            assert img.min() >= 0.0 and img.max() <= 1.0
        assert bright.mean() - dark.mean() > 0.25
        # the emissive term keeps the glyph visible even under dark lighting
        mask = shape_mask(spec, spec.shapes[s]).astype(bool)
        assert dark[mask].mean() - dark[~mask].mean() > 0.25


def test_render_lighting_increases_left_to_right():
    img = render_glyph(GlyphSpec(), 0, 1)
    col_means = img.mean(axis=0)
    assert col_means[-1] > col_means[0]


def test_gen_glyphs_labels_and_balance():
    ds = gen_glyphs(seed=1)
    assert ds.items.shape == (30, 256)
    assert ds.labels.shape == (30, 2)
    combos, counts = np.unique(ds.labels, axis=0, return_counts=True)
    assert combos.shape == (6, 2)
    assert np.all(counts == 5)
    assert ds.items.min() >= 0.0 and ds.items.max() <= 1.0
    again = gen_glyphs(seed=1)
    assert np.array_equal(ds.items, again.items)


def test_pretrain_corpus_gauss_balanced_and_described():
    corpus = gen_pretrain_corpus("gauss2d", 603, seed=5)
    strata = np.array([d[0] for d in corpus.descriptors])
    counts = np.bincount(strata, minlength=5)
    assert counts.min() >= 603 // 5
    assert counts.max() <= 603 // 5 + 1
    assert counts.sum() == 603
    # every item sits nearest the mean its descriptor names
    means = np.array(corpus.manifest["means"])
    nearest = np.linalg.norm(
        corpus.items[:, None, :] - means[None], axis=2
    ).argmin(axis=1)
    assert np.mean(nearest == strata) > 0.99
    assert corpus.vocab.shape == (5, 32)
    assert 0.05 < corpus.vocab.std() < 0.2
    assert corpus.p_uncond == 0.1


def test_pretrain_corpus_glyphs_descriptors_match_content():
    corpus = gen_pretrain_corpus("glyphs", 120, seed=6)
    from conceptdiff.evaluation import build_detectors, detect_factors

    det = build_detectors()
    hits = 0
    for item, desc in zip(corpus.items[:60], corpus.descriptors[:60]):
        s, l = detect_factors(item, det)
        if s == desc[0] and l == desc[1] - 3:
            hits += 1
    assert hits >= 58  # noisy renders may rarely miss a threshold
    assert corpus.vocab.shape == (5, 32)


def test_pretrain_corpus_rejects_unknown_domain():
    with pytest.raises(ValueError, match="domain"):
        gen_pretrain_corpus("text", 10, seed=0)


def test_pretrain_corpus_deterministic():
    a = gen_pretrain_corpus("gauss2d", 100, seed=9)
    b = gen_pretrain_corpus("gauss2d", 100, seed=9)
    assert np.array_equal(a.items, b.items)
    assert np.array_equal(a.vocab, b.vocab)
    assert a.descriptors == b.descriptors
