import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from readmit_ta.baseline import (LinearModel, TrainConfig, class_weights, log_to_csv, loss_and_grad, predict,
                                 sigmoid, train)
from readmit_ta.errors import DimensionMismatch, SingleClassValidation
from readmit_ta.evaluation import auprc

from oracles import finite_difference_grad, logistic_loss


def separable(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = X[:, 0] + 0.5 * X[:, 1] > 0.2
    return X, y


def constant_data(n=40):
    X = np.zeros((n, 3))
    y = np.arange(n) % 4 == 0
    return X, y


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(2, 12))
def test_gradient_matches_finite_differences(seed, d, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (rng.random(n) < 0.4).astype(float)
    sw = rng.uniform(0.2, 3.0, n)
    params = rng.normal(size=d + 1)
    loss, g_w, g_b = loss_and_grad(params[:-1], params[-1], X, y, sw)
    f = lambda p: logistic_loss(p, X.tolist(), y.tolist(), sw.tolist())  # noqa: E731
    assert loss == pytest.approx(f(params.tolist()), rel=1e-10)
    analytic = np.append(g_w, g_b)
    numeric = np.array(finite_difference_grad(f, params.tolist()))
    rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    assert rel < 1e-5


def test_separable_set_reaches_perfect_auprc():
    X, y = separable(400, 0)
    Xv, yv = separable(200, 1)
    model, history = train(X, y, Xv, yv, TrainConfig(eval_every=50, max_steps=2000, lr=0.05))
    assert history[-1].step <= 2000
    assert max(e.val_auprc for e in history) == 1.0
    assert auprc(predict(model, Xv), yv) == 1.0


def test_patience_one_stops_at_second_evaluation():
    X, y = constant_data()
    _, history = train(X, y, X, y, TrainConfig(eval_every=5, patience=1))
    assert len(history) == 2
    assert [e.checkpointed for e in history] == [True, False]
    assert history[-1].step == 10


def test_lr_decay_schedule_and_stop():
    X, y = constant_data()
    cfg = TrainConfig(eval_every=3, patience=7, lr=0.01)
    _, history = train(X, y, X, y, cfg)
    assert len(history) == 8
    assert history[0].checkpointed and history[0].lr == 0.01
    for j, e in enumerate(history[1:], start=1):
        assert not e.checkpointed
        assert e.lr == pytest.approx(0.01 * 0.97 ** j, rel=1e-14)


def test_returns_best_checkpoint():
    X, y = separable(300, 2)
    Xv, yv = separable(60, 3)
    yv = yv ^ (np.arange(60) % 7 == 0)  # noisy validation so some evaluations miss
    model, history = train(X, y, Xv, yv, TrainConfig(eval_every=5, patience=3, lr=0.3, batch_size=8))
    best = max(e.val_auprc for e in history)
    assert auprc(predict(model, Xv), yv) == pytest.approx(best, abs=1e-9)
    seen = -1.0
    for e in history:
        assert e.checkpointed == (e.val_auprc > seen)
        seen = max(seen, e.val_auprc)


def test_deterministic():
    X, y = separable(200, 4)
    Xv, yv = separable(50, 5)
    cfg = TrainConfig(eval_every=10, max_steps=300, seed=3)
    a, la = train(X, y, Xv, yv, cfg)
    b, lb = train(X, y, Xv, yv, cfg)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias
    assert log_to_csv(la) == log_to_csv(lb)


def test_sgd_optimizer_learns():
    X, y = separable(300, 6)
    Xv, yv = separable(100, 7)
    model, _ = train(X, y, Xv, yv, TrainConfig(optimizer="sgd", lr=0.5, eval_every=20, max_steps=1000))
    assert auprc(predict(model, Xv), yv) > 0.95


def test_train_errors():
    X, y = separable(50, 8)
    with pytest.raises(DimensionMismatch):
        train(X, y, X[:, :1], y)
    with pytest.raises(SingleClassValidation):
        train(X, y, X, np.zeros(50, dtype=bool))
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


def test_predict_examples():
    m = LinearModel(np.zeros(3), 0.0)
    assert predict(m, np.random.default_rng(0).normal(size=(4, 3))).tolist() == [0.5] * 4
    m = LinearModel(np.array([2.0, 0.0]), -1.0)
    xs = np.array([[x, 7.0] for x in (-2, -1, 0, 1, 2)])
    scores = predict(m, xs)
    assert np.all(np.diff(scores) > 0)
    assert len(scores) == 5
    with pytest.raises(DimensionMismatch):
        predict(m, np.zeros((2, 3)))


def test_model_round_trip(tmp_path):
    m = LinearModel(np.array([0.1, -2.5]), 0.3, {"variant": "x"})
    m.save(tmp_path / "m.json")
    back = LinearModel.load(tmp_path / "m.json")
    assert back.weights.tolist() == m.weights.tolist() and back.bias == m.bias and back.feature_spec == m.feature_spec


def test_class_weights_balance_mass():
    y = np.array([True, False, False, False])
    w = class_weights(y)
    assert w[y].sum() == pytest.approx(w[~y].sum())
    assert sigmoid(0.0) == 0.5
