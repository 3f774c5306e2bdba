import numpy as np
import pytest

from rain.baselines import (ForecasterConfig, corr_lstm_scores, corr_path_scores,
                            forecaster_predict, hidden_state_scores,
                            init_forecaster_params, static_forecast,
                            train_forecaster)
from rain.errors import ConfigError
from rain.evaluation import horizon_mse

SMALL = dict(hidden_dim=16, t_enc=8, t_dec=4)


def test_static_forecast_perfect_on_constant_trajectories():
    window = np.ones((3, 8, 2, 4))
    pred = static_forecast(window, 5)
    truth = np.ones((3, 5, 2, 4))
    mse = horizon_mse(pred, truth, horizons=(1, 5))
    assert mse == {1: 0.0, 5: 0.0}


def test_static_forecast_copies_last_state():
    rng = np.random.default_rng(0)
    window = rng.standard_normal((2, 6, 3, 2))
    pred = static_forecast(window, 4)
    assert pred.shape == (2, 4, 3, 2)
    for t in range(4):
        assert np.array_equal(pred[:, t], window[:, -1])


def test_single_forecaster_is_agent_independent():
    # predictions for one agent are identical whether the other agent is
    # present in the batch or not: the architecture shares weights but never
    # mixes information across agents
    cfg = ForecasterConfig(state_dim=2, **SMALL)
    rng = np.random.default_rng(1)
    data = rng.standard_normal((4, 12, 2, 2)).astype(np.float32)
    params = train_forecaster(cfg, data, epochs=1, batch_size=2, seed=0)
    window = data[:2, :8]
    joint = forecaster_predict(params, cfg, window)
    alone0 = forecaster_predict(params, cfg, window[:, :, :1])
    alone1 = forecaster_predict(params, cfg, window[:, :, 1:])
    assert np.array_equal(joint[:, :, 0], alone0[:, :, 0])
    assert np.array_equal(joint[:, :, 1], alone1[:, :, 0])


def test_joint_forecaster_requires_fixed_agent_count():
    cfg = ForecasterConfig(state_dim=2, mode="joint", n_agents=3, **SMALL)
    params = init_forecaster_params(cfg, np.random.default_rng(0))
    window = np.zeros((1, 8, 4, 2), dtype=np.float32)
    with pytest.raises(ConfigError):
        forecaster_predict(params, cfg, window)


def test_joint_forecaster_shapes():
    cfg = ForecasterConfig(state_dim=2, mode="joint", n_agents=3, **SMALL)
    rng = np.random.default_rng(2)
    data = rng.standard_normal((2, 12, 3, 2)).astype(np.float32)
    params = train_forecaster(cfg, data, epochs=1, batch_size=2, seed=1)
    pred = forecaster_predict(params, cfg, data[:, :8])
    assert pred.shape == (2, 4, 3, 2)


def test_training_reduces_forecaster_loss():
    from rain.baselines import forecaster_loss
    cfg = ForecasterConfig(state_dim=2, **SMALL)
    rng = np.random.default_rng(3)
    base = np.linspace(0, 1, 12)[None, :, None, None]
    data = (base + 0.01 * rng.standard_normal((6, 12, 2, 2))).astype(np.float32)
    params0 = init_forecaster_params(cfg, np.random.default_rng(0))
    before = float(forecaster_loss(params0, cfg, data).data)
    params = train_forecaster(cfg, data, epochs=30, batch_size=6, seed=0)
    after = float(forecaster_loss(params, cfg, data).data)
    assert after < before


def test_corr_path_affine_image_scores_one():
    rng = np.random.default_rng(4)
    base = rng.standard_normal((1, 10, 1, 3))
    other = 2.0 * base + 1.0
    windows = np.concatenate([base, other], axis=2)
    scores, skipped = corr_path_scores(windows)
    assert skipped == 0
    assert abs(scores[0, 0, 1] - 1.0) < 1e-12


def test_corr_path_white_noise_null():
    rng = np.random.default_rng(5)
    windows = rng.standard_normal((1, 5000, 4, 1))
    scores, _ = corr_path_scores(windows)
    off = scores[0][~np.eye(4, dtype=bool)]
    assert np.nanmean(np.abs(off)) < 0.05


def test_corr_path_skips_zero_variance():
    windows = np.zeros((1, 10, 2, 2))
    windows[0, :, 0, 0] = np.linspace(0, 1, 10)
    scores, skipped = corr_path_scores(windows)
    assert skipped == 1
    assert np.isnan(scores[0, 0, 1])


def test_corr_lstm_identical_agents_score_one():
    cfg = ForecasterConfig(state_dim=2, **SMALL)
    params = init_forecaster_params(cfg, np.random.default_rng(6))
    rng = np.random.default_rng(7)
    one = rng.standard_normal((1, 8, 1, 2)).astype(np.float32)
    windows = np.repeat(one, 3, axis=2)
    scores, skipped = corr_lstm_scores(params, cfg, windows)
    off = scores[0][~np.eye(3, dtype=bool)]
    assert np.allclose(off, 1.0, atol=1e-6)


def test_hidden_state_scores_orthogonal_construction():
    # zero-mean, exactly uncorrelated hidden patterns score 0
    h1 = np.tile([1.0, -1.0], 8)
    h2 = np.tile([1.0, 1.0, -1.0, -1.0], 4)
    hiddens = np.stack([h1, h2])[None]
    scores, skipped = hidden_state_scores(hiddens)
    assert skipped == 0
    assert abs(scores[0, 0, 1]) < 1e-12
