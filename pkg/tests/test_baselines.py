import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collective_intent.baselines import InsufficientHistoryError, KalmanTrack, cvm_predict, kalman_step


def run_line(n, speed=1.0, q=1.0, r=0.05):
    tr = KalmanTrack.start((0.0, 0.0), 0.1, q, r)
    for k in range(1, n + 1):
        tr = kalman_step(tr, (speed * 0.1 * k, 0.0))
    return tr


def test_velocity_converges_on_straight_line():
    tr = run_line(12)
    np.testing.assert_allclose(tr.velocity, (1.0, 0.0), atol=1e-3)


def test_predict_only_grows_covariance():
    tr = run_line(5)
    for _ in range(5):
        nxt = kalman_step(tr, None)
        assert np.trace(nxt.P) > np.trace(tr.P)
        tr = nxt


def test_noise_free_prediction_reproduces_trajectory():
    tr = KalmanTrack.start((1.0, 2.0), 0.1, q=0.0, velocity=(0.5, -0.25), pos_var=0.0, vel_var=0.0)
    for k in range(1, 30):
        tr = kalman_step(tr, None)
        np.testing.assert_allclose(tr.position, (1.0 + 0.05 * k, 2.0 - 0.025 * k), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.none(), st.tuples(st.floats(-10, 10), st.floats(-10, 10))), min_size=1, max_size=30),
       st.floats(0.01, 20.0), st.floats(0.01, 1.0))
def test_covariance_stays_symmetric_psd(zs, q, r):
    tr = KalmanTrack.start((0.0, 0.0), 0.1, q, r)
    for z in zs:
        tr = kalman_step(tr, z)
        assert np.array_equal(tr.P, tr.P.T)
        assert np.linalg.eigvalsh(tr.P).min() > -1e-9


def track_at(pos, vel, n=12):
    tr = KalmanTrack.start(pos, velocity=vel)
    tr.history.clear()
    for _ in range(n):
        tr.history.append(np.array([*pos, *vel], dtype=float))
    return tr


def test_forward_ray_picks_station_ahead():
    assert cvm_predict(track_at((0, 0), (1, 0)), [(5, 0), (0, 5)]) == 1


def test_stationary_picks_nearest():
    stations = [(5, 5), (0.3, 0.0), (-4, 2), (9, 9)]
    assert cvm_predict(track_at((0, 0), (0.01, 0.0)), stations) == 2


def test_bisecting_velocity_prefers_nearer_station():
    # both stations are equally far from the ray; station 2 is closer to the walker
    stations = [(6.0, 1.0), (3.0, -1.0)]
    assert cvm_predict(track_at((0, 0), (1, 0)), stations) == 2


def test_stations_behind_are_ignored_when_something_is_ahead():
    stations = [(-3.0, 0.0), (4.0, 3.0)]
    assert cvm_predict(track_at((0, 0), (1, 0)), stations) == 2


def test_insufficient_history():
    with pytest.raises(InsufficientHistoryError):
        cvm_predict(track_at((0, 0), (1, 0), n=5), [(5, 0)] * 4)
    assert cvm_predict(track_at((0, 0), (1, 0), n=2), [(5, 0), (0, 5)], min_history=2) == 1
