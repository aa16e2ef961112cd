from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uniskel.errors import CorruptCheckpoint, NonFiniteData, ShapeMismatch
from uniskel.regressor import (
    MLPConfig,
    MLPModel,
    grad_check_mlp,
    init_model,
    load_mlp,
    loss_and_grads,
    predict,
    r2_score,
    save_mlp,
    train_mlp,
)

QUICK = MLPConfig(hidden=(16, 16), epochs=60, patience=10)


def _linear_data(rng, n=500):
    X = rng.uniform(-1, 1, size=(n, 3))
    return X, X @ np.array([2.0, -1.0, 0.5]) + 3.0


def test_fits_linear_function(rng):
    X, y = _linear_data(rng, 2000)
    model, report = train_mlp(X, y, MLPConfig(hidden=(16, 16), epochs=200))
    assert report.val_r2 >= 0.999
    assert r2_score(y, predict(model, X)) >= 0.999


def test_constant_target_is_learned(rng):
    X = rng.uniform(-1, 1, size=(200, 2))
    y = np.full(200, 4.2)
    model, report = train_mlp(X, y, QUICK)
    assert np.allclose(predict(model, X), 4.2, atol=1e-6)


def test_early_stopping_returns_best_epoch(rng):
    X, y = _linear_data(rng, 300)
    _, report = train_mlp(X, y, MLPConfig(hidden=(8,), epochs=200, patience=5))
    assert report.best_epoch <= report.epochs_run
    vals = [v for _, v in report.history]
    assert min(vals) == pytest.approx(vals[report.best_epoch - 1])


def test_grad_check_small_network(rng):
    model = init_model(3, (4, 4), rng)
    X = rng.normal(size=(8, 3))
    y = rng.normal(size=8)
    assert grad_check_mlp(model, X, y) <= 1e-4


def test_linear_model_gradient_closed_form(rng):
    model = init_model(3, (), rng)
    xn = rng.normal(size=(10, 3))
    yn = rng.normal(size=10)
    _, gw, gb = loss_and_grads(model, xn, yn)
    resid = xn @ model.weights[0][:, 0] + model.biases[0][0] - yn
    assert np.allclose(gw[0][:, 0], 2 * xn.T @ resid / 10, atol=1e-8)
    assert np.allclose(gb[0][0], 2 * resid.mean(), atol=1e-8)


def test_zero_input_weight_gradient_vanishes(rng):
    model = init_model(2, (5,), rng)
    xn = np.zeros((6, 2))
    _, gw, gb = loss_and_grads(model, xn, rng.normal(size=6))
    assert np.allclose(gw[0], 0.0)


def test_zero_weights_predict_mean(rng):
    X, y = _linear_data(rng, 100)
    model, _ = train_mlp(X, y, QUICK)
    for w in model.weights:
        w[...] = 0.0
    for b in model.biases:
        b[...] = 0.0
    assert np.allclose(predict(model, X), model.y_mean)


def test_prediction_independent_of_batching(rng):
    X, y = _linear_data(rng, 200)
    model, _ = train_mlp(X, y, QUICK)
    whole = predict(model, X)
    parts = np.concatenate([predict(model, X[i: i + 7]) for i in range(0, 200, 7)])
    assert np.allclose(whole, parts, rtol=0, atol=1e-12)


def test_training_loss_trends_down(rng):
    X, y = _linear_data(rng, 400)
    _, report = train_mlp(X, y, MLPConfig(hidden=(16,), epochs=30, patience=30))
    train = [t for t, _ in report.history]
    for a, b in zip(train[:-5], train[5:]):
        assert b <= a * 1.05 + 1e-6


@given(st.floats(0.01, 100), st.floats(-50, 50))
def test_affine_rescaling_of_inputs_is_invisible(scale, shift):
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(120, 2))
    y = np.sin(3 * X[:, 0]) + X[:, 1]
    cfg = MLPConfig(hidden=(8,), epochs=5, patience=5)
    m1, _ = train_mlp(X, y, cfg)
    m2, _ = train_mlp(X * scale + shift, y, cfg)
    assert np.allclose(predict(m1, X), predict(m2, X * scale + shift), atol=1e-6)


def test_deterministic_for_seed(rng):
    X, y = _linear_data(rng, 150)
    a, _ = train_mlp(X, y, QUICK)
    b, _ = train_mlp(X, y, QUICK)
    assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


def test_save_load_roundtrip(tmp_path, rng):
    X, y = _linear_data(rng, 120)
    model, _ = train_mlp(X, y, QUICK)
    save_mlp(model, tmp_path / "m.bin")
    loaded = load_mlp(tmp_path / "m.bin")
    assert isinstance(loaded, MLPModel)
    assert np.array_equal(predict(model, X), predict(loaded, X))


def test_truncated_checkpoint(tmp_path, rng):
    model = init_model(2, (3,), rng)
    save_mlp(model, tmp_path / "m.bin")
    data = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "m.bin").write_bytes(data[:-8])
    with pytest.raises(CorruptCheckpoint):
        load_mlp(tmp_path / "m.bin")


def test_input_errors(rng):
    X, y = _linear_data(rng, 50)
    with pytest.raises(ShapeMismatch):
        train_mlp(X, y[:-1], QUICK)
    bad = X.copy()
    bad[3, 1] = np.nan
    with pytest.raises(NonFiniteData):
        train_mlp(bad, y, QUICK)
    y_bad = y.copy()
    y_bad[0] = np.inf
    with pytest.raises(NonFiniteData):
        train_mlp(X, y_bad, QUICK)
    model, _ = train_mlp(X, y, QUICK)
    with pytest.raises(ShapeMismatch):
        predict(model, X[:, :2])


def test_config_validation():
    with pytest.raises(ValueError):
        MLPConfig(train_fraction=1.0)
    with pytest.raises(ValueError):
        MLPConfig(hidden=(0,))
