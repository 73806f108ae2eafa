import math

import numpy as np
import pytest

from trajsim.core.trajectory import Trajectory
from trajsim.errors import ConfigError, ShapeError
from trajsim.model.bridge import BridgeSchedule, bridge_stats, pretrain_loss, pretrain_step, sample_bridge
from trajsim.model.features import TrajectoryFeatures
from trajsim.model.sam import SamConfig, SamModel
from trajsim.nn import tensor as T
from trajsim.nn.gradcheck import numerical_gradient, relative_error
from trajsim.nn.optim import Adam


@pytest.fixture
def schedule():
    return BridgeSchedule()


def _endpoints(n=4, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(size=(n, 2)), rng.uniform(size=(n, 2))


def test_schedule_validation():
    with pytest.raises(ConfigError):
        BridgeSchedule(beta_min=0.0)
    with pytest.raises(ConfigError):
        BridgeSchedule(beta_min=5.0, beta_max=1.0)


def test_alpha_starts_at_one(schedule):
    assert schedule.alpha(0.0) == 1.0
    assert schedule.sigma2(0.0) == 0.0
    assert schedule.snr(0.0) == math.inf


def test_constant_beta_closed_form():
    flat = BridgeSchedule(beta_min=2.0, beta_max=2.0)
    for t in (0.1, 0.5, 0.9):
        assert flat.alpha(t) == pytest.approx(math.exp(-t))
        assert flat.sigma2(t) == pytest.approx(1.0 - math.exp(-2.0 * t))


def test_time_outside_horizon_is_rejected(schedule):
    with pytest.raises(ConfigError) as excinfo:
        schedule.alpha(1.5)
    assert excinfo.value.exit_code == 2
    with pytest.raises(ConfigError):
        schedule.rho(-0.1)


def test_rho_is_pinned_and_monotone(schedule):
    ts = np.linspace(0.0, 1.0, 201)
    rhos = np.array([schedule.rho(t) for t in ts])
    assert rhos[0] == 0.0 and rhos[-1] == 1.0
    assert np.all(np.diff(rhos) >= 0.0)
    assert np.all((rhos >= 0.0) & (rhos <= 1.0))


def test_variance_is_never_negative(schedule):
    e0, eT = _endpoints()
    for t in np.linspace(0.0, 1.0, 101):
        _, sigma_hat = bridge_stats(schedule, e0, eT, t)
        assert sigma_hat >= 0.0


def test_endpoints_are_reproduced_exactly(schedule):
    e0, eT = _endpoints()
    mu, sigma = bridge_stats(schedule, e0, eT, 0.0)
    np.testing.assert_array_equal(mu, e0)
    assert sigma == 0.0
    mu, sigma = bridge_stats(schedule, e0, eT, 1.0)
    np.testing.assert_array_equal(mu, eT)
    assert sigma == 0.0


def test_intermediate_point_matches_closed_form():
    flat = BridgeSchedule(beta_min=2.0, beta_max=2.0)
    e0, eT, t = np.array([0.3]), np.array([0.8]), 0.5
    alpha_t, alpha_T = math.exp(-0.5), math.exp(-1.0)
    snr_t = alpha_t ** 2 / (1.0 - alpha_t ** 2)
    snr_T = alpha_T ** 2 / (1.0 - alpha_T ** 2)
    rho = snr_T / snr_t
    expected_mu = rho * alpha_t / alpha_T * 0.8 + alpha_t * (1.0 - rho) * 0.3
    expected_var = (1.0 - alpha_t ** 2) * (1.0 - rho)
    mu, sigma = bridge_stats(flat, e0, eT, t)
    assert mu[0] == pytest.approx(expected_mu, rel=1e-12)
    assert sigma ** 2 == pytest.approx(expected_var, rel=1e-12)


def test_mismatched_endpoints(schedule):
    with pytest.raises(ShapeError):
        bridge_stats(schedule, np.zeros((3, 2)), np.zeros((4, 2)), 0.5)


def test_sample_at_endpoints_is_the_mean(schedule):
    e0, eT = _endpoints()
    sample = sample_bridge(schedule, e0, eT, 0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(sample.e_gps_t, sample.mu_hat)


def test_sampling_is_reproducible_and_grid_is_deterministic(schedule):
    e0, eT = _endpoints()
    g0, gT = _endpoints(seed=1)
    a = sample_bridge(schedule, e0, eT, 0.4, np.random.default_rng(5), g0, gT)
    b = sample_bridge(schedule, e0, eT, 0.4, np.random.default_rng(5), g0, gT)
    c = sample_bridge(schedule, e0, eT, 0.4, np.random.default_rng(6), g0, gT)
    np.testing.assert_array_equal(a.e_gps_t, b.e_gps_t)
    assert a.e_grid_t.tobytes() == c.e_grid_t.tobytes()
    assert not np.array_equal(a.e_gps_t, c.e_gps_t)


def test_monte_carlo_mean(schedule):
    count = 100_000
    e0 = np.tile([0.2, 0.9], (count, 1))
    eT = np.tile([0.7, 0.1], (count, 1))
    sample = sample_bridge(schedule, e0, eT, 0.3, np.random.default_rng(42))
    tolerance = 4.0 * sample.sigma_hat / math.sqrt(count)
    np.testing.assert_array_less(np.abs(sample.e_gps_t.mean(axis=0) - sample.mu_hat[0]), tolerance)


def test_identical_endpoints_interpolate_to_a_scaled_copy(schedule):
    e = np.full((3, 2), 0.5)
    mu, _ = bridge_stats(schedule, e, e, 0.5)
    assert np.ptp(mu) == 0.0


def _pair_features(n=4, seed=0):
    rng = np.random.default_rng(seed)
    return (TrajectoryFeatures(rng.uniform(size=(n, 2)), rng.uniform(size=(n, 2))),
            TrajectoryFeatures(rng.uniform(size=(n, 2)), rng.uniform(size=(n, 2))))


def test_pretrain_loss_is_non_negative(tiny_model, schedule):
    start, end = _pair_features()
    rng = np.random.default_rng(0)
    for _ in range(10):
        assert pretrain_loss(tiny_model, start, end, schedule, rng).item() >= 0.0


def test_pretrain_gradients_treat_target_as_constant(tiny_model, schedule):
    for name, tensor in tiny_model.params.items():
        if ".lambda_" in name:
            tensor.data = np.random.default_rng(3).normal(scale=0.3, size=tensor.shape)
    start, end = _pair_features()
    t = 0.4
    loss = pretrain_loss(tiny_model, start, end, schedule, np.random.default_rng(1), t=t)
    analytic = {name: g.copy() for name, g in tiny_model.params.backward(loss).items()}

    sample = sample_bridge(schedule, start.gps, end.gps, t, np.random.default_rng(1), start.grid, end.grid)
    target = tiny_model.frozen().pre_encode(sample.mu_hat).data.copy()

    def fixed_target_loss(store):
        model = SamModel(tiny_model.config, params=store)
        return T.squared_error(model.encode_pair(sample.e_gps_t, sample.e_grid_t), target)

    for name in tiny_model.params:
        numeric = numerical_gradient(fixed_target_loss, tiny_model.params, name)
        assert relative_error(analytic[name], numeric) < 1e-4, name


def test_pretrain_step_skips_identical_ids(tiny_model, schedule, porto_grid, corpus, caplog):
    same = corpus[0]
    assert pretrain_step(tiny_model, (same, same), porto_grid, schedule, np.random.default_rng(0)) is None
    assert "degenerate" in caplog.text


def test_pretrain_step_leaves_gradients(tiny_model, schedule, porto_grid, corpus):
    loss = pretrain_step(tiny_model, (corpus[0], corpus[1]), porto_grid, schedule, np.random.default_rng(0), n=16)
    assert loss is not None and loss >= 0.0
    assert set(tiny_model.params.grads) == set(tiny_model.params)


@pytest.mark.slow
def test_pretraining_reduces_loss(schedule, porto_grid, corpus):
    model = SamModel(SamConfig(d=16, d_hid=32, heads=2), seed=0)
    rng = np.random.default_rng(0)
    pairs = [(corpus[k], corpus[k + 1]) for k in range(0, 50)]
    optimizer = Adam(lr=0.003)
    losses = []
    for step in range(500):
        loss = pretrain_step(model, pairs[step % len(pairs)], porto_grid, schedule, rng, n=32)
        optimizer.step(model.params)
        losses.append(loss)
    assert np.mean(losses[-50:]) <= 0.7 * np.mean(losses[:10])


def test_pretrain_step_handles_unequal_lengths(tiny_model, schedule, porto_grid):
    short = Trajectory.from_points("s", [(-8.6, 41.15), (-8.59, 41.16)])
    long = Trajectory.from_points("l", [(-8.5 + 0.001 * k, 41.12) for k in range(30)])
    assert pretrain_step(tiny_model, (short, long), porto_grid, schedule, np.random.default_rng(2), n=8) >= 0.0
