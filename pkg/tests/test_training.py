import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavedir.datapipe import WindowSet
from wavedir.errors import DimensionError, NonFiniteGradientError
from wavedir.model import ModelConfig, build_model
from wavedir.numerics import SeededRng
from wavedir.training import (
    AdamState, TrainConfig, adam_step, batch_gradient, gradient_check, mse_loss, reference_forward, train,
)


def small_set(count=40, n=4, seed=0):
    rng = SeededRng(seed)
    X = rng.normal((count, n - 1, 26))
    ang = rng.uniform(-math.pi, math.pi, count)
    return WindowSet(X, np.column_stack([np.sin(ang), np.cos(ang)]), n)


def test_mse_examples():
    assert mse_loss([[0.3, 0.4]], [[0.3, 0.4]]) == 0.0
    assert mse_loss([[1, 0]], [[0, 1]]) == 1.0
    p, t = np.array([[0.2, 0.5], [1.0, -1.0]]), np.zeros((2, 2))
    assert mse_loss(2 * p, t) == pytest.approx(4 * mse_loss(p, t), rel=1e-15)
    with pytest.raises(ValueError):
        mse_loss(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(DimensionError):
        mse_loss(np.zeros((1, 2)), np.zeros((2, 2)))


def test_zero_residual_gives_zero_gradient():
    m = build_model("lstm", ModelConfig(4, 3, 2), SeededRng(0))
    X = SeededRng(1).normal((3, 3, 26))
    pred = m.predict(X)
    _, g = batch_gradient(m, X, pred)
    assert all(np.all(v == 0) for v in g.values())


def test_head_bias_gradient_linear_in_residual():
    m = build_model("lstm", ModelConfig(4, 3, 1), SeededRng(0))
    X = SeededRng(1).normal((2, 3, 26))
    pred = m.predict(X)
    _, g1 = batch_gradient(m, X, pred - 0.1)
    _, g2 = batch_gradient(m, X, pred - 0.2)
    np.testing.assert_allclose(g2["head.b"], 2 * g1["head.b"], rtol=1e-12)


@pytest.mark.parametrize("kind", ["lstm", "mlp"])
def test_gradient_check_reference_case(kind):
    m = build_model(kind, ModelConfig(4, 3, 2), SeededRng(12))
    rng = SeededRng(13)
    assert gradient_check(m, rng.normal((3, 26)), rng.normal(2)) < 1e-4


def test_gradient_check_linear_head_bias_exact():
    m = build_model("lstm", ModelConfig(3, 2, 1), SeededRng(0))
    rng = SeededRng(2)
    w, y = rng.normal((2, 26)), rng.normal(2)
    _, g = batch_gradient(m, w[None], y[None])
    only_bias = {k: (v if k == "head.b" else np.zeros_like(v)) for k, v in g.items()}
    err = gradient_check(m, w, y, analytic=only_bias)
    assert err == 1.0  # zeroed entries are fully wrong ...
    # ... while the head bias itself is exact to FD rounding
    saved = {k: p.copy() for k, p in m.params.items()}
    lp = []
    for sgn in (1, -1):
        m.params["head.b"][0] = saved["head.b"][0] + sgn * 1e-5
        lp.append(float(np.mean((reference_forward(m, w) - y) ** 2)))
    m.params["head.b"][0] = saved["head.b"][0]
    assert abs((lp[0] - lp[1]) / 2e-5 - g["head.b"][0]) < 1e-10


def test_gradient_check_detects_corruption():
    m = build_model("lstm", ModelConfig(4, 3, 2), SeededRng(12))
    rng = SeededRng(13)
    w, y = rng.normal((3, 26)), rng.normal(2)
    _, g = batch_gradient(m, w[None], y[None])
    g["layer0.U"].reshape(-1)[int(np.argmax(np.abs(g["layer0.U"])))] *= 1.01
    assert gradient_check(m, w, y, analytic=g) > 1e-3


def test_reference_forward_agrees_with_vectorized():
    m = build_model("lstm", ModelConfig(5, 4, 2), SeededRng(3))
    w = SeededRng(4).normal((4, 26))
    np.testing.assert_allclose(reference_forward(m, w, np.float64), m.predict(w[None])[0], atol=1e-14)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 6))
def test_batch_gradient_is_data_parallel(seed, k):
    m = build_model("lstm", ModelConfig(4, 3, 2), SeededRng(seed))
    ws = small_set(2 * k, seed=seed + 1)
    X, Y = ws.windows, ws.targets
    _, g_all = batch_gradient(m, X, Y)
    _, g_a = batch_gradient(m, X[:k], Y[:k])
    _, g_b = batch_gradient(m, X[k:], Y[k:])
    for name in g_all:
        np.testing.assert_allclose(g_all[name], 0.5 * (g_a[name] + g_b[name]), rtol=0, atol=1e-12)


def test_adam_zero_gradient_is_noop():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState(params)
    adam_step(params, {"w": np.zeros(2)}, state, 0.01)
    assert params["w"].tolist() == [1.0, -2.0] and state.t == 1


def test_adam_first_step_closed_form():
    params = {"a": np.zeros(3), "b": np.zeros(3)}
    g = np.array([0.5, -2.0, 1e-3])
    state = AdamState(params)
    adam_step(params, {"a": g, "b": 10 * g}, state, 1e-3)
    # m_hat = g and v_hat = g^2 after one step, so the update is lr * g / (|g| + eps)
    np.testing.assert_allclose(params["a"], -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    np.testing.assert_allclose(np.abs(params["a"]), np.abs(params["b"]), rtol=1e-4)
    assert np.all(np.abs(np.abs(params["a"][:2]) - 1e-3) < 1e-10)


def test_adam_matches_elementwise_reference():
    rng = SeededRng(5)
    p = {"w": rng.normal(4)}
    ref = p["w"].tolist()
    m_ref, v_ref = [0.0] * 4, [0.0] * 4
    state = AdamState(p)
    for t in range(1, 6):
        g = rng.normal(4)
        adam_step(p, {"w": g}, state, 0.01)
        for j in range(4):
            m_ref[j] = 0.9 * m_ref[j] + 0.1 * g[j]
            v_ref[j] = 0.999 * v_ref[j] + 0.001 * g[j] ** 2
            mh, vh = m_ref[j] / (1 - 0.9 ** t), v_ref[j] / (1 - 0.999 ** t)
            ref[j] -= 0.01 * mh / (math.sqrt(vh) + 1e-8)
    np.testing.assert_allclose(p["w"], ref, rtol=0, atol=1e-15)
    assert state.t == 5 and np.all(state.v["w"] >= 0)


def test_adam_refuses_non_finite_gradient():
    params = {"a": np.ones(2), "b": np.ones(2)}
    state = AdamState(params)
    with pytest.raises(NonFiniteGradientError, match="'b'"):
        adam_step(params, {"a": np.ones(2), "b": np.array([np.nan, 0.0])}, state, 0.1)
    assert params["a"].tolist() == [1.0, 1.0] and state.t == 0 and np.all(state.m["a"] == 0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_single_step_and_step_count():
    ws = small_set(10)
    m = build_model("lstm", ModelConfig(4, 3, 1), SeededRng(0))
    _, rep = train(m, ws, None, TrainConfig(epochs=1, batch_size=10))
    assert rep.steps == 1 and m.adam_state.t == 1
    m = build_model("lstm", ModelConfig(4, 3, 1), SeededRng(0))
    _, rep = train(m, ws, None, TrainConfig(epochs=3, batch_size=4))
    assert rep.steps == 3 * math.ceil(10 / 4) and len(rep.train_mse) == 3 and rep.test_mse == []


def test_training_is_reproducible(tmp_path):
    ws, test = small_set(30), small_set(8, seed=9)
    runs = []
    for _ in range(2):
        m = build_model("lstm", ModelConfig(4, 5, 2), SeededRng(1))
        m, rep = train(m, ws, test, TrainConfig(epochs=3, batch_size=7, seed=4))
        runs.append((m, rep))
    (a, ra), (b, rb) = runs
    assert ra.train_mse == rb.train_mse and ra.test_mse == rb.test_mse
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    ra.write_jsonl(tmp_path / "log.jsonl")
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == 3 and '"epoch": 1' in lines[0]


def test_train_rejects_empty_set():
    m = build_model("lstm", ModelConfig(4, 3, 1), SeededRng(0))
    with pytest.raises(ValueError):
        train(m, WindowSet.empty(4), None, TrainConfig(epochs=1))


def test_clip_norm_bounds_gradient():
    ws = small_set(8)
    m = build_model("lstm", ModelConfig(4, 3, 1), SeededRng(0))
    _, rep = train(m, ws, None, TrainConfig(epochs=2, batch_size=8, clip_norm=1e-6))
    assert all(np.isfinite(rep.train_mse))
