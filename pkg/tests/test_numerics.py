import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavedir.errors import DimensionError
from wavedir.numerics import SeededRng, identity, matmul, sigmoid, tanh, uniform_init


def loop_matmul(a, b):
    out = [[0.0] * len(b[0]) for _ in range(len(a))]
    for i in range(len(a)):
        for j in range(len(b[0])):
            s = 0.0
            for k in range(len(b)):
                s += a[i][k] * b[k][j]
            out[i][j] = s
    return np.array(out)


def test_identity_product_is_exact():
    m = SeededRng(1).normal((3, 3))
    assert np.array_equal(matmul(identity(3), m), m)
    assert np.array_equal(matmul(m, identity(3)), m)


def test_hand_product():
    assert matmul([[1, 2], [3, 4]], [[0], [1]]).tolist() == [[2.0], [4.0]]


def test_random_product_matches_triple_loop():
    rng = SeededRng(7)
    a, b = rng.normal((5, 4)), rng.normal((4, 3))
    np.testing.assert_allclose(matmul(a, b), loop_matmul(a.tolist(), b.tolist()), rtol=0, atol=1e-15)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.ones((2, 3)), np.ones((2, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 12), st.integers(1, 9), st.integers(0, 2**32))
def test_rows_do_not_depend_on_batch(rows, inner, cols, seed):
    rng = SeededRng(seed)
    a, b = rng.normal((rows, inner)), rng.normal((inner, cols))
    full = matmul(a, b)
    for i in range(rows):
        assert np.array_equal(full[i], matmul(a[i:i + 1], b)[0])


def test_activation_fixed_points_and_saturation():
    assert sigmoid(0.0) == 0.5
    assert tanh(0.0) == 0.0
    with np.errstate(all="raise"):
        assert abs(sigmoid(500.0) - 1.0) < 1e-12
        assert sigmoid(-700.0) >= 0.0
        assert sigmoid(-800.0) == 0.0


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=50))
def test_activation_ranges(xs):
    x = np.array(xs)
    s, t = sigmoid(x), tanh(x)
    assert np.all((s >= 0) & (s <= 1))
    assert np.all((t >= -1) & (t <= 1))
    small = np.abs(x) < 30
    assert np.all((s[small] > 0) & (s[small] < 1))
    # the logistic function has the closed form (1 + tanh(x / 2)) / 2
    np.testing.assert_allclose(s, 0.5 * (1 + np.tanh(x / 2)), rtol=0, atol=1e-15)


def test_uniform_init_determinism_and_range():
    a = uniform_init(SeededRng(3), 50, 40, 4)
    b = uniform_init(SeededRng(3), 50, 40, 4)
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 0.5)


def test_uniform_init_mean_within_three_sigma():
    x = uniform_init(SeededRng(11), 100, 100, 4)
    se = (1.0 / np.sqrt(3.0) * 0.5) / np.sqrt(x.size)
    assert abs(x.mean()) < 3 * se


def test_uniform_init_rejects_zero_fan_in():
    with pytest.raises(ValueError):
        uniform_init(SeededRng(0), 2, 2, 0)


def test_fork_ignores_parent_consumption():
    a, b = SeededRng(5), SeededRng(5)
    a.random(1000)
    assert np.array_equal(a.fork("x").random(10), b.fork("x").random(10))
    assert not np.array_equal(b.fork("x").random(10), b.fork("y").random(10))
    assert not np.array_equal(SeededRng(5).random(10), SeededRng(6).random(10))


def test_stream_is_split_invariant():
    a, b = SeededRng(9), SeededRng(9)
    joined = np.concatenate([a.next_uint64(3), a.next_uint64(5)])
    assert np.array_equal(joined, b.next_uint64(8))


def test_random_moments():
    u = SeededRng(2).random(200_000)
    assert u.min() >= 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 3 * np.sqrt(1 / 12 / u.size)
    z = SeededRng(2).normal(200_000, 1.0, 2.0)
    assert abs(z.mean() - 1.0) < 3 * 2.0 / np.sqrt(z.size)
    assert abs(z.std() - 2.0) < 0.02


@given(st.integers(0, 300), st.integers(0, 2**40))
def test_permutation_is_a_permutation(n, seed):
    p = SeededRng(seed).permutation(n)
    assert sorted(p.tolist()) == list(range(n))
