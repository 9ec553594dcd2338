import numpy as np
import pytest

from conceptdiff.composition import (
    ScoreSet,
    SimplexWeights,
    compose_conjunction,
    guide,
    mix_scores,
)
from conceptdiff.numerics import RngStream, Tensor
from conceptdiff.numerics.gradcheck import gradient_check
from conceptdiff.numerics.tensor import reshape, softmax, tmean, tsum


def test_scoreset_validates_shapes():
    with pytest.raises(ValueError, match="shape"):
        ScoreSet(uncond=Tensor(np.zeros(3)), conds=[Tensor(np.zeros(4))])
    with pytest.raises(ValueError, match="at least one"):
        ScoreSet(uncond=Tensor(np.zeros(3)), conds=[])


def test_simplex_weights_validation():
    SimplexWeights([0.25, 0.75])
    with pytest.raises(ValueError):
        SimplexWeights([0.5, 0.6])
    with pytest.raises(ValueError):
        SimplexWeights([-0.1, 1.1])
    with pytest.raises(ValueError):
        SimplexWeights(np.ones((2, 2)) / 2)
    assert SimplexWeights.one_hot(4, 2).as_array()[2] == 1.0
    assert np.allclose(SimplexWeights.uniform(5).as_array(), 0.2)


def test_conjunction_degenerate_equal_conditions():
    v = RngStream(0).normal(6)
    scores = ScoreSet(uncond=Tensor(v), conds=[Tensor(v.copy()), Tensor(v.copy())])
    out = compose_conjunction(scores)
    assert np.array_equal(out.data, v)


def test_conjunction_single_term_is_bitwise_identity():
    rng = RngStream(1)
    for _ in range(1000):
        c = rng.normal(5)
        u = rng.normal(5)
        out = compose_conjunction(ScoreSet(uncond=Tensor(u), conds=[Tensor(c)]))
        assert np.array_equal(out.data, c)


def test_conjunction_formula_two_terms():
    rng = RngStream(2)
    u, c1, c2 = rng.normal(4), rng.normal(4), rng.normal(4)
    out = compose_conjunction(ScoreSet(uncond=Tensor(u), conds=[Tensor(c1), Tensor(c2)]))
    assert np.allclose(out.data, u + (c1 - u) + (c2 - u))


def test_guide_identities_bitwise():
    rng = RngStream(3)
    for _ in range(1000):
        c, u = rng.normal(3), rng.normal(3)
        assert np.array_equal(guide(Tensor(c), Tensor(u), 1.0).data, c)
        assert np.array_equal(guide(Tensor(c), Tensor(u), 0.0).data, u)


def test_guide_linear_formula():
    out = guide(Tensor([1.0]), Tensor([0.0]), 3.0)
    assert np.allclose(out.data, [3.0])


def test_mix_scores_one_hot_collapse_bitwise():
    rng = RngStream(4)
    for _ in range(1000):
        conds = rng.normal((1, 3, 4))
        uncond = rng.normal((1, 4))
        k = rng.randint(0, 3)
        w = np.zeros((1, 3))
        w[0, k] = 1.0
        out = mix_scores(Tensor(conds), Tensor(uncond), Tensor(w))
        assert np.array_equal(out.data[0], conds[0, k])


def test_mix_scores_uniform_two_concepts_matches_hand_formula():
    rng = RngStream(5)
    conds = rng.normal((1, 2, 3))
    uncond = rng.normal((1, 3))
    w = np.full((1, 2), 0.5)
    out = mix_scores(Tensor(conds), Tensor(uncond), Tensor(w))
    expect = uncond[0] + 0.5 * (conds[0, 0] - uncond[0]) + 0.5 * (conds[0, 1] - uncond[0])
    assert np.allclose(out.data[0], expect)


def test_mix_scores_linear_in_weights():
    rng = RngStream(6)
    conds = Tensor(rng.normal((2, 4, 5)))
    uncond = Tensor(rng.normal((2, 5)))
    w1 = np.abs(rng.normal((2, 4)))
    w1 /= w1.sum(axis=1, keepdims=True)
    w2 = np.abs(rng.normal((2, 4)))
    w2 /= w2.sum(axis=1, keepdims=True)
    for alpha in (0.0, 0.3, 1.0):
        blend = alpha * w1 + (1 - alpha) * w2
        lhs = mix_scores(conds, uncond, Tensor(blend)).data
        rhs = (
            alpha * mix_scores(conds, uncond, Tensor(w1)).data
            + (1 - alpha) * mix_scores(conds, uncond, Tensor(w2)).data
        )
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_mixture_loss_gradient_wrt_logits():
    rng = RngStream(7)
    conds = rng.normal((1, 4, 6))
    uncond = rng.normal((1, 6))
    target = rng.normal((1, 6))

    def loss_fn(logits):
        w = softmax(reshape(logits, (1, 4)), axis=-1)
        mixed = mix_scores(Tensor(conds), Tensor(uncond), w)
        return tmean((mixed - Tensor(target)) ** 2.0)

    point = Tensor(rng.normal(4))
    assert gradient_check(loss_fn, point) < 1e-4
