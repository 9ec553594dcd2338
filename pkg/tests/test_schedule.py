import numpy as np
import pytest

from conceptdiff.schedule import DiffusionSchedule


@pytest.fixture(scope="module")
def default_schedule():
    return DiffusionSchedule()


def test_two_step_worked_example():
    s = DiffusionSchedule(timesteps=2, beta_start=0.1, beta_end=0.2)
    assert np.allclose(s.alpha_bars, [0.9, 0.72])
    assert s.alpha_bar(0) == 1.0
    assert s.sigma(1) == 0.0
    # sigma_2^2 = beta_2 * (1 - ab_1) / (1 - ab_2)
    assert np.isclose(s.sigma(2) ** 2, 0.2 * (1 - 0.9) / (1 - 0.72))


def test_default_schedule_invariants(default_schedule):
    s = default_schedule
    assert s.timesteps == 1000
    assert np.all(np.diff(s.betas) > 0)
    assert 0 < s.betas[0] and s.betas[-1] < 1
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.isclose(s.alpha_bars[0], 1 - s.betas[0])
    assert s.alpha_bar(s.timesteps) < 1e-4


def test_forward_noise_zero_eps(default_schedule):
    x0 = np.array([[1.0, -2.0]])
    xt = default_schedule.forward_noise(x0, 500, np.zeros_like(x0))
    assert np.allclose(xt, np.sqrt(default_schedule.alpha_bar(500)) * x0)


def test_forward_noise_terminal_level_is_noise(default_schedule):
    s = default_schedule
    x0 = np.array([[1.0, -2.0], [0.5, 3.0]])
    eps = np.array([[0.3, 0.1], [-1.2, 0.7]])
    xt = s.forward_noise(x0, s.timesteps, eps)
    resid = np.abs(xt - eps * np.sqrt(1 - s.alpha_bar(s.timesteps)))
    assert np.all(resid < 0.02 * np.abs(x0))


def test_forward_noise_vector_t(default_schedule):
    s = default_schedule
    x0 = np.ones((3, 2))
    eps = np.zeros((3, 2))
    t = np.array([1, 500, 1000])
    xt = s.forward_noise(x0, t, eps)
    for i, ti in enumerate(t):
        assert np.allclose(xt[i], np.sqrt(s.alpha_bar(int(ti))))


def test_t_out_of_range_rejected(default_schedule):
    x = np.ones((1, 2))
    with pytest.raises(ValueError):
        default_schedule.forward_noise(x, 0, x)
    with pytest.raises(ValueError):
        default_schedule.forward_noise(x, 1001, x)
    with pytest.raises(ValueError):
        default_schedule.alpha_bar(-1)


def test_shape_mismatch_rejected(default_schedule):
    with pytest.raises(ValueError, match="shape"):
        default_schedule.forward_noise(np.ones((2, 2)), 10, np.ones((3, 2)))


def test_invalid_constructor_args():
    with pytest.raises(ValueError):
        DiffusionSchedule(timesteps=0)
    with pytest.raises(ValueError):
        DiffusionSchedule(beta_start=0.0)
    with pytest.raises(ValueError):
        DiffusionSchedule(beta_start=0.5, beta_end=0.4)


def test_tables_are_read_only(default_schedule):
    with pytest.raises(ValueError):
        default_schedule.betas[0] = 0.5
