import numpy as np
import pytest

from conceptdiff.oracle import (
    GaussianWorld,
    analytic_eps,
    base_eps,
    compose_params,
    composed_eps_fn,
    verify_composition,
)
from conceptdiff.schedule import DiffusionSchedule


def frozen_world():
    return GaussianWorld(means=np.array([[-1.0], [3.0]]), stds=np.array([1.0, 1.0]), tau=2.0)


def test_world_validation():
    with pytest.raises(ValueError, match="one std per"):
        GaussianWorld(means=np.zeros((2, 1)), stds=np.ones(3))
    with pytest.raises(ValueError, match="dims 1-2"):
        GaussianWorld(means=np.zeros((2, 3)), stds=np.ones(2))
    with pytest.raises(ValueError, match="positive"):
        GaussianWorld(means=np.zeros((1, 1)), stds=np.array([0.0]))
    with pytest.raises(ValueError, match="positive"):
        GaussianWorld(means=np.zeros((1, 1)), stds=np.ones(1), tau=-1.0)


def test_compose_params_frozen_case():
    # product of N(-1,1) and N(3,1) over base N(0, 4): precision
    # 1 + 1 - 1/4 = 7/4, variance 4/7, mean (4/7) * (-1 + 3) = 8/7
    mean, var = compose_params(frozen_world(), [0, 1])
    assert np.allclose(mean, [8.0 / 7.0], atol=1e-12)
    assert abs(var - 4.0 / 7.0) < 1e-12
    assert abs(mean[0] - 1.1428571428571428) < 1e-12
    assert abs(var - 0.5714285714285714) < 1e-12


def test_compose_params_single_component_is_component():
    world = frozen_world()
    mean, var = compose_params(world, [1])
    assert np.allclose(mean, world.means[1])
    assert abs(var - 1.0) < 1e-12


def test_compose_params_improper_raises():
    world = GaussianWorld(means=np.zeros((2, 1)), stds=np.array([3.0, 3.0]), tau=1.0)
    with pytest.raises(ValueError, match="improper"):
        compose_params(world, [0, 1])
    with pytest.raises(ValueError, match="at least one"):
        compose_params(world, [])


def test_analytic_eps_matches_numerical_score():
    # ideal predictor is -sqrt(1 - abar_t) times the score of the diffused
    # component N(sqrt(abar)*mu, abar*s^2 + 1 - abar); check by central
    # differences on the log-density
    world = GaussianWorld(means=np.array([[0.7, -1.2]]), stds=np.array([0.9]), tau=2.0)
    sched = DiffusionSchedule()
    x = np.array([0.3, -0.4])
    for t in (1, 250, 1000):
        ab = sched.alpha_bar(t)
        var = ab * 0.9**2 + (1.0 - ab)
        mu = np.sqrt(ab) * world.means[0]

        def logq(z):
            return -0.5 * np.sum((z - mu) ** 2) / var

        h = 1e-6
        grad = np.array(
            [
                (logq(x + h * e) - logq(x - h * e)) / (2 * h)
                for e in np.eye(2)
            ]
        )
        expect = -np.sqrt(1.0 - ab) * grad
        got = analytic_eps(world, 0, x, t, sched)
        assert np.allclose(got, expect, atol=1e-6)


def test_base_eps_is_component_formula_with_tau():
    world = frozen_world()
    aug = GaussianWorld(
        means=np.array([[-1.0], [3.0], [0.0]]), stds=np.array([1.0, 1.0, 2.0]), tau=2.0
    )
    sched = DiffusionSchedule()
    x = np.array([0.37])
    for t in (1, 500, 1000):
        assert np.allclose(
            base_eps(world, x, t, sched), analytic_eps(aug, 2, x, t, sched)
        )


def test_analytic_eps_index_range():
    with pytest.raises(IndexError):
        analytic_eps(frozen_world(), 2, np.zeros(1), 1, DiffusionSchedule())


def test_composed_eps_single_component_equals_analytic():
    world = frozen_world()
    sched = DiffusionSchedule()
    fn = composed_eps_fn(world, [1], sched)
    x = np.array([[0.5], [-2.0]])
    got = fn(x, 400)
    assert np.array_equal(got, analytic_eps(world, 1, x, 400, sched))


def test_verify_composition_report_and_frozen_case():
    report = verify_composition(
        frozen_world(), [0, 1], DiffusionSchedule(), n_samples=3000, seed=0
    )
    assert report["indices"] == [0, 1]
    assert np.allclose(report["target_mean"], [8.0 / 7.0])
    assert abs(report["target_var"] - 4.0 / 7.0) < 1e-12
    assert set(report["samplers"]) == {"ancestral", "ddim"}
    for stats in report["samplers"].values():
        assert stats["passed"]
        assert stats["mean_error"] < 0.05
        assert 0.9 < stats["var_ratio"] < 1.1
    assert report["passed"]
