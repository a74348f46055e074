import numpy as np
import pytest

from busca.core import BBox
from busca.kalman import (
    bbox_to_measurement,
    kalman_initiate,
    kalman_predict,
    kalman_update,
    measurement_to_bbox,
    state_bbox,
)


def test_measurement_round_trip():
    b = BBox(cx=120.0, cy=80.0, w=30.0, h=60.0)
    z = bbox_to_measurement(b)
    assert np.allclose(z, [120.0, 80.0, 0.5, 60.0])
    back = measurement_to_bbox(z)
    assert (back.cx, back.cy, back.w, back.h) == (b.cx, b.cy, b.w, b.h)


def test_initiate_matches_measurement_with_zero_velocity():
    mean, cov = kalman_initiate(BBox(10.0, 20.0, 30.0, 60.0))
    assert np.allclose(mean[:4], [10.0, 20.0, 0.5, 60.0])
    assert np.allclose(mean[4:], 0.0)
    assert cov.shape == (8, 8)
    assert np.all(np.diag(cov) > 0.0)
    assert np.allclose(cov, cov.T)


def test_predict_advances_by_velocity():
    mean, cov = kalman_initiate(BBox(10.0, 20.0, 30.0, 60.0))
    mean[4] = 3.0  # vx
    mean[5] = -1.0  # vy
    new_mean, new_cov = kalman_predict((mean, cov))
    assert np.allclose(new_mean[:2], [13.0, 19.0])
    assert np.allclose(new_mean[4:6], [3.0, -1.0])
    # uncertainty grows without a measurement
    assert np.trace(new_cov) > np.trace(cov)


def test_predict_without_update_is_linear_in_position():
    state = kalman_initiate(BBox(0.0, 0.0, 10.0, 20.0))
    state[0][4] = 2.0
    for k in range(1, 6):
        state = kalman_predict(state)
        assert np.isclose(state[0][0], 2.0 * k)


def test_update_moves_mean_toward_measurement():
    state = kalman_initiate(BBox(0.0, 0.0, 10.0, 20.0))
    state = kalman_predict(state)
    meas = BBox(4.0, 0.0, 10.0, 20.0)
    new_mean, _ = kalman_update(state, meas)
    assert 0.0 < new_mean[0] < 4.0


def test_update_trusts_measurement_in_low_noise_limit():
    state = kalman_initiate(BBox(0.0, 0.0, 10.0, 20.0))
    state = kalman_predict(state)
    meas = BBox(7.0, -3.0, 12.0, 24.0)
    mean, _ = kalman_update(state, meas, noise_scale=1e-12)
    assert np.allclose(mean[:4], bbox_to_measurement(meas), atol=1e-6)


def test_update_ignores_measurement_in_high_noise_limit():
    state = kalman_initiate(BBox(0.0, 0.0, 10.0, 20.0))
    state = kalman_predict(state)
    before = state[0].copy()
    mean, _ = kalman_update(state, BBox(500.0, 500.0, 50.0, 50.0), noise_scale=1e12)
    assert np.allclose(mean, before, atol=1e-6)


def test_update_covariance_stays_symmetric_and_shrinks():
    state = kalman_initiate(BBox(0.0, 0.0, 10.0, 20.0))
    state = kalman_predict(state)
    _, cov = kalman_update(state, BBox(1.0, 1.0, 10.0, 20.0))
    assert np.array_equal(cov, cov.T)
    assert np.trace(cov) < np.trace(state[1])


def test_repeated_updates_converge_to_stationary_box():
    state = kalman_initiate(BBox(0.0, 0.0, 10.0, 20.0))
    target = BBox(5.0, 5.0, 10.0, 20.0)
    for _ in range(50):
        state = kalman_predict(state)
        state = kalman_update(state, target)
    b = state_bbox(state)
    assert abs(b.cx - 5.0) < 0.5 and abs(b.cy - 5.0) < 0.5


def test_state_bbox_floors_degenerate_extent():
    mean = np.zeros(8)
    mean[2] = -0.3  # aspect driven negative
    mean[3] = -4.0  # height driven negative
    b = state_bbox((mean, np.eye(8)), min_extent=1.0)
    assert b.w >= 1.0 and b.h >= 1.0


def test_state_bbox_reflects_mean():
    mean = np.array([50.0, 60.0, 0.5, 40.0, 0, 0, 0, 0], dtype=np.float64)
    b = state_bbox((mean, np.eye(8)))
    assert (b.cx, b.cy, b.w, b.h) == (50.0, 60.0, 20.0, 40.0)


def test_update_gain_shapes_consistent():
    # regression guard: a transposed gain breaks innovation mixing
    state = kalman_initiate(BBox(3.0, 4.0, 12.0, 24.0))
    state = kalman_predict(state)
    mean, cov = kalman_update(state, BBox(3.5, 4.5, 12.0, 24.0))
    assert mean.shape == (8,)
    assert cov.shape == (8, 8)
    assert np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))
    with pytest.raises(ValueError):
        measurement_to_bbox(np.array([0.0, 0.0, -1.0, 10.0]))
