import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dhtm.oracle import sr_closed_form
from dhtm.sr import SURPRISE_FLOOR, SrMatrix, surprise

TWO_CYCLE = np.array([[0.0, 1.0], [1.0, 0.0]])


def random_chain(seed, n=4):
    rng = np.random.default_rng(seed)
    P = rng.random((n, n)) + 0.1
    return P / P.sum(axis=1, keepdims=True)


def train_tabular(P, gamma, horizon, updates, lr=0.1, seed=0):
    """TD on a fully observable chain with one-hot beliefs and exact model predictions."""
    n = P.shape[0]
    D = np.eye(n)
    sr = SrMatrix(n, n, gamma=gamma, horizon=horizon, learning_rate=lr)
    powers = [np.linalg.matrix_power(P, l) for l in range(horizon + 2)]
    rng = np.random.default_rng(seed)
    s = 0
    for _ in range(updates):
        pred = [powers[l][s] @ D for l in range(horizon + 1)]
        sr.td_update(D[s], pred, powers[horizon + 1][s])
        s = rng.choice(n, p=P[s])
    return sr


def test_sr_of_belief_examples():
    M = np.arange(12.0).reshape(4, 3)
    sr = SrMatrix(4, 3, M=M)
    np.testing.assert_array_equal(sr.sr_of_belief(np.eye(4)[2]), M[2])
    assert not SrMatrix(4, 3).sr_of_belief(np.full(4, 0.25)).any()
    expected = [sum(M[i, j] for i in range(4)) / 4 for j in range(3)]
    np.testing.assert_allclose(sr.sr_of_belief(np.full(4, 0.25)), expected)
    with pytest.raises(ValueError):
        sr.sr_of_belief(np.ones(3))


def test_value_examples():
    sr = SrMatrix(2, 2, gamma=0.5, M=sr_closed_form(TWO_CYCLE, np.eye(2), 0.5))
    assert sr.value([1, 0], [0, 0]) == 0.0
    assert sr.value([1, 0], [1, 0]) == pytest.approx(4 / 3)


@given(arrays(np.float64, 6, elements=st.floats(-10, 10)), arrays(np.float64, 6, elements=st.floats(-10, 10)),
       arrays(np.float64, 5, elements=st.floats(0, 1)), arrays(np.float64, 5, elements=st.floats(0, 1)))
def test_value_is_linear(r1, r2, b1, b2):
    sr = SrMatrix(5, 6, M=np.random.default_rng(0).normal(size=(5, 6)))
    assert sr.value(b1, r1 + r2) == pytest.approx(sr.value(b1, r1) + sr.value(b1, r2), abs=1e-9)
    assert sr.value(b1 + b2, r1) == pytest.approx(sr.value(b1, r1) + sr.value(b2, r1), abs=1e-9)


def test_td_zero_learning_rate_is_noop():
    M = np.random.default_rng(1).random((3, 3))
    sr = SrMatrix(3, 3, horizon=0, learning_rate=0.0, M=M.copy())
    sr.td_update(np.eye(3)[0], [np.eye(3)[1]], np.eye(3)[2])
    np.testing.assert_array_equal(sr.M, M)


def test_td_one_step_gamma_zero_is_ema():
    M = np.random.default_rng(2).random((3, 3))
    sr = SrMatrix(3, 3, gamma=0.0, horizon=0, learning_rate=0.3, M=M.copy())
    sr.td_update(np.eye(3)[1], [np.eye(3)[2]], np.eye(3)[0])
    expected = M.copy()
    expected[1] += 0.3 * (np.eye(3)[2] - M[1])
    np.testing.assert_allclose(sr.M, expected)


def test_td_target_formula():
    rng = np.random.default_rng(3)
    sr = SrMatrix(3, 2, gamma=0.7, horizon=2, M=rng.random((3, 2)))
    preds = [rng.random(2) for _ in range(3)]
    final = np.array([0.2, 0.3, 0.5])
    expected = preds[0] + 0.7 * preds[1] + 0.49 * preds[2] + 0.343 * final @ sr.M
    np.testing.assert_allclose(sr.td_target(preds, final), expected)
    with pytest.raises(ValueError):
        sr.td_target(preds[:2], final)


def test_td_full_step_is_projection():
    sr = SrMatrix(3, 3, gamma=0.5, horizon=1, learning_rate=1.0)
    preds = [np.eye(3)[0], np.eye(3)[1]]
    final = np.eye(3)[2]
    sr.td_update(np.eye(3)[0], preds, final)
    after = sr.M.copy()
    sr.td_update(np.eye(3)[0], preds, final)
    np.testing.assert_allclose(sr.M, after)


@pytest.mark.parametrize("horizon", [0, 5])
def test_td_converges_to_closed_form(horizon):
    P = random_chain(0)
    sr = train_tabular(P, 0.9, horizon, 10_000)
    assert np.abs(sr.M - sr_closed_form(P, np.eye(4), 0.9)).max() < 1e-2


def test_td_fixed_point_satisfies_bellman_identity():
    P = random_chain(5)
    sr = train_tabular(P, 0.8, 0, 5_000)
    assert np.abs(sr.M - (np.eye(4) + 0.8 * P @ sr.M)).max() < 1e-3


def test_surprise_examples():
    c = 8
    assert surprise(np.full((1, c), 1 / c), [[3]])[0] == pytest.approx(math.log(c))
    hit = np.eye(c)[[3]]
    assert surprise(hit, [[3]])[0] == pytest.approx(0.0)
    assert surprise(hit, [[4]])[0] == pytest.approx(-math.log(SURPRISE_FLOOR))


def test_surprise_averages_over_variables_and_offsets():
    q = np.array([[0.5, 0.5], [0.25, 0.75]])
    out = surprise(q, [[0, 1], [1, 0]])
    np.testing.assert_allclose(out, [-(math.log(0.5) + math.log(0.75)) / 2,
                                     -(math.log(0.5) + math.log(0.25)) / 2])


@settings(max_examples=30)
@given(arrays(np.float64, (4, 6), elements=st.floats(-5, 5)), arrays(np.float64, 4, elements=st.floats(0, 1)))
def test_normalized_readout_is_distribution(M, b):
    sr = SrMatrix(4, 6, M=M)
    q = sr.normalized_readout(b, 2)
    assert q.shape == (2, 3)
    assert (q >= 0).all()
    np.testing.assert_allclose(q.sum(axis=1), 1.0)


def test_zero_sr_reads_as_uniform():
    sr = SrMatrix(4, 6)
    np.testing.assert_allclose(sr.normalized_readout(np.full(4, 0.25), 2), 1 / 3)
    assert sr.surprise(np.full(4, 0.25), [[0, 2]], 2)[0] == pytest.approx(math.log(3))


def test_episode_end_stops_the_target():
    sr = SrMatrix(2, 2, gamma=0.5, horizon=3, M=np.ones((2, 2)))
    preds = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    np.testing.assert_allclose(sr.td_target(preds, None), [1.0, 0.5])
    with pytest.raises(ValueError):
        sr.td_target(preds, np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        sr.td_target([], None)


def test_episodic_chain_converges_to_truncated_occupancy():
    # 0 -> 1 -> 2, and the episode ends on entering 2
    gamma = 0.9
    sr = SrMatrix(3, 3, gamma=gamma, horizon=0, learning_rate=0.2)
    D = np.eye(3)
    for _ in range(300):
        sr.td_update(D[0], [D[0]], D[1])
        sr.td_update(D[1], [D[1]], D[2])
        sr.td_update(D[2], [D[2]], None)
    expected = np.array([[1, gamma, gamma ** 2], [0, 1, gamma], [0, 0, 1]])
    np.testing.assert_allclose(sr.M, expected, atol=1e-6)
