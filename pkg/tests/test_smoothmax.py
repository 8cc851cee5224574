import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from supctrl.smoothmax import (
    BadSharpness,
    EmptyInput,
    EmptyWindow,
    lie_all_windows,
    lie_vector_window,
    lie_window,
    lse,
    window_max_all,
)

finite = st.floats(-50, 50, allow_nan=False)


def test_lse_examples():
    assert lse([0.0, 0.0], 1.0) == pytest.approx(math.log(2.0), abs=1e-15)
    assert lse([0.0, 1.0], 1.0) == pytest.approx(math.log(1.0 + math.e), abs=1e-15)
    assert lse([0.8], 1e6) == 0.8


def test_lse_errors():
    with pytest.raises(BadSharpness):
        lse([1.0], 0.0)
    with pytest.raises(BadSharpness):
        lse([1.0], -2.0)
    with pytest.raises(EmptyInput):
        lse([], 1.0)


def test_lse_randomized_bounds():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        v = rng.uniform(-50, 50, rng.integers(1, 17))
        k = float(rng.choice([1.0, 10.0, 100.0]))
        val = lse(v, k)
        assert v.max() - 1e-12 <= val <= v.max() + math.log(v.size) / k + 1e-12


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(1, 16), elements=finite), st.floats(-100, 100), st.sampled_from([1.0, 10.0, 100.0]))
def test_lse_shift_invariance(v, c, k):
    assert abs(lse(v + c, k) - (lse(v, k) + c)) <= 1e-12 * max(1.0, abs(c) + np.abs(v).max())


def test_lse_no_overflow():
    assert lse([1e3, 1e3 - 1e-3], 1e9) == pytest.approx(1e3, abs=1e-9)


def test_lie_constant_window():
    dt, N, c, k = 0.01, 20, 0.7, 50.0
    r = lie_window(np.full(N, c), dt, k)
    tau = N * dt
    assert r.value == pytest.approx(c + math.log(tau) / k, abs=1e-14)
    np.testing.assert_allclose(r.weights, 1.0 / tau, rtol=1e-13)


def test_lie_zero_window_unit_length():
    for k in (1.0, 10.0, 1e6):
        r = lie_window(np.zeros(10), 0.1, k)
        assert abs(r.value) < 1e-15
        np.testing.assert_allclose(r.weights, 1.0, rtol=1e-13)


def test_lie_peaked_window():
    dt, k = 0.1, 100.0
    r = lie_window([0.0, 1.0, 0.0], dt, k)
    # brute-force quadrature in plain floats
    s = sum(math.exp(k * w) for w in (0.0, 1.0, 0.0))
    assert r.value == pytest.approx(math.log(dt * s) / k, abs=1e-12)
    assert r.weights[1] / r.weights.sum() > 0.999
    assert 1 + math.log(0.1) / 100 <= r.value <= 1 + math.log(0.3) / 100


def test_lie_errors():
    with pytest.raises(EmptyWindow):
        lie_window([], 0.1, 1.0)
    with pytest.raises(BadSharpness):
        lie_window([1.0], 0.1, 0.0)
    with pytest.raises(ValueError):
        lie_window([1.0], 0.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(1, 40), elements=finite), st.sampled_from([1e-3, 1e-2, 0.05]),
       st.sampled_from([1.0, 10.0, 1e3, 1e6]))
def test_lie_result_invariants(w, dt, k):
    r = lie_window(w, dt, k)
    tau = w.size * dt
    assert np.all(r.weights >= 0)
    assert abs(dt * r.weights.sum() - 1.0) < 1e-12
    assert r.value >= w.max() + math.log(dt) / k - 1e-12
    assert r.value <= w.max() + math.log(tau) / k + 1e-12
    assert abs(r.value - w.max()) <= max(abs(math.log(dt)), abs(math.log(tau))) / k + 1e-12


def test_lie_weights_are_the_gradient():
    rng = np.random.default_rng(3)
    dt, k, h = 0.01, 20.0, 1e-6
    for _ in range(20):
        w = rng.uniform(-1, 1, 25)
        r = lie_window(w, dt, k)
        for i in range(w.size):
            e = np.zeros_like(w)
            e[i] = h
            fd = (lie_window(w + e, dt, k).value - lie_window(w - e, dt, k).value) / (2 * h)
            exact = r.weights[i] * dt
            # central differences resolve about 1e-10 absolutely at this h
            if exact > 1e-3:
                assert fd == pytest.approx(exact, rel=1e-6)
            else:
                assert abs(fd - exact) < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(arrays(float, n, elements=finite), arrays(float, n, elements=finite))),
       st.sampled_from([1.0, 100.0, 1e5]))
def test_lie_lipschitz_rank_one(pair, k):
    w1, w2 = pair
    d = abs(lie_window(w1, 0.01, k).value - lie_window(w2, 0.01, k).value)
    assert d <= np.max(np.abs(w1 - w2)) + 1e-12 * (1 + np.abs(w1).max() + np.abs(w2).max())


def test_lie_huge_sharpness_is_finite():
    r = lie_window([1.0, 1.0 - 1e-12, 0.5], 0.01, 1e9)
    assert np.isfinite(r.value) and np.all(np.isfinite(r.weights))
    assert abs(0.01 * r.weights.sum() - 1.0) < 1e-12


def test_lie_l1_convergence():
    # piecewise-linear sample function on [-tau, T]
    tau, T, dt = 0.2, 1.0, 1e-3
    t = np.arange(-tau, T + dt / 2, dt)
    x = np.interp(t, [-0.2, 0.1, 0.4, 0.7, 1.0], [0.0, 0.5, -0.2, 0.3, 0.3])[:, None]
    N = int(round(tau / dt))
    count = x.shape[0] - N
    hard = window_max_all(x, N, count)[0]
    gaps = [dt * np.abs(lie_all_windows(x, N, count, dt, k) - hard).sum() for k in (10.0, 1e2, 1e3, 1e4)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_vector_window_reduces_to_scalar():
    w = np.array([0.0, 1.0, 0.3])
    val, wts = lie_vector_window(w[:, None], 0.1, 7.0)
    r = lie_window(w, 0.1, 7.0)
    assert val[0] == r.value
    np.testing.assert_array_equal(wts[:, 0], r.weights)


def test_vector_window_componentwise():
    col = np.array([0.0, 1.0, 0.0])
    val, wts = lie_vector_window(np.column_stack([col, col]), 0.1, 100.0)
    assert val[0] == val[1]
    np.testing.assert_array_equal(wts[:, 0], wts[:, 1])
    c = 0.4
    val, wts = lie_vector_window(np.column_stack([np.full(3, c), col]), 0.1, 100.0)
    a, b = lie_window(np.full(3, c), 0.1, 100.0), lie_window(col, 0.1, 100.0)
    np.testing.assert_array_equal(val, [a.value, b.value])
    np.testing.assert_array_equal(wts, np.column_stack([a.weights, b.weights]))


def test_all_windows_match_single_windows():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((40, 2))
    N, count = 7, 30
    vals = lie_all_windows(x, N, count, 0.05, 30.0)
    for j in range(count):
        np.testing.assert_allclose(vals[j], lie_vector_window(x[j:j + N], 0.05, 30.0)[0], rtol=0, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(5, 60), elements=st.integers(-5, 5).map(float)), st.integers(1, 5))
def test_window_max_matches_brute_force(x, N):
    count = x.size - N + 1
    vals, args = window_max_all(x, N, count)
    for j in range(count):
        win = x[j:j + N]
        assert vals[j, 0] == win.max()
        assert x[args[j, 0]] == win.max() and j <= args[j, 0] < j + N
        assert args[j, 0] == j + N - 1 - int(np.argmax(win[::-1]))  # latest index on ties
