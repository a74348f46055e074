"""Constant-velocity Kalman filter over box state.

State vector is 8-dimensional: (cx, cy, a, h, vcx, vcy, va, vh) where ``a``
is the aspect ratio w/h. Process and measurement noise scale with the box
height, which keeps behavior consistent across object sizes.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .core import BBox

State = Tuple[np.ndarray, np.ndarray]  # (mean (8,), covariance (8, 8))

# Noise weights relative to box height.
_STD_POS = 1.0 / 20.0
_STD_VEL = 1.0 / 160.0

_DIM = 8

_F = np.eye(_DIM)
for _i in range(4):
    _F[_i, _i + 4] = 1.0  # x += v per frame
_H = np.eye(4, _DIM)


def bbox_to_measurement(bbox: BBox) -> np.ndarray:
    return np.array([bbox.cx, bbox.cy, bbox.w / bbox.h, bbox.h], dtype=np.float64)


def measurement_to_bbox(z: np.ndarray) -> BBox:
    cx, cy, a, h = (float(v) for v in z[:4])
    return BBox(cx=cx, cy=cy, w=a * h, h=h)


def kalman_initiate(bbox: BBox) -> State:
    """State for a newly born track: measured position, zero velocity."""
    mean = np.zeros(_DIM)
    mean[:4] = bbox_to_measurement(bbox)
    h = bbox.h
    std = np.array(
        [
            2 * _STD_POS * h,
            2 * _STD_POS * h,
            1e-2,
            2 * _STD_POS * h,
            10 * _STD_VEL * h,
            10 * _STD_VEL * h,
            1e-5,
            10 * _STD_VEL * h,
        ]
    )
    return mean, np.diag(std**2)


def _process_noise(mean: np.ndarray) -> np.ndarray:
    h = mean[3]
    std = np.array(
        [
            _STD_POS * h,
            _STD_POS * h,
            1e-2,
            _STD_POS * h,
            _STD_VEL * h,
            _STD_VEL * h,
            1e-5,
            _STD_VEL * h,
        ]
    )
    return np.diag(std**2)


def _measurement_noise(mean: np.ndarray, scale: float) -> np.ndarray:
    h = mean[3]
    std = np.array([_STD_POS * h, _STD_POS * h, 1e-1, _STD_POS * h])
    return np.diag(std**2) * scale


def kalman_predict(state: State) -> State:
    """Advance the state one frame under constant velocity."""
    mean, cov = state
    mean = _F @ mean
    cov = _F @ cov @ _F.T + _process_noise(mean)
    return mean, cov


def kalman_update(state: State, bbox: BBox, noise_scale: float = 1.0) -> State:
    """Fold a measured box into the state.

    ``noise_scale`` multiplies the measurement covariance; it exists so the
    filter can be driven toward the trust-the-measurement (scale -> 0) or
    ignore-the-measurement (scale -> inf) limits.
    """
    mean, cov = state
    z = bbox_to_measurement(bbox)
    R = _measurement_noise(mean, noise_scale)
    S = _H @ cov @ _H.T + R
    K = np.linalg.solve(S.T, _H @ cov).T  # K = cov H^T S^-1
    innovation = z - _H @ mean
    new_mean = mean + K @ innovation
    new_cov = (np.eye(_DIM) - K @ _H) @ cov
    new_cov = (new_cov + new_cov.T) / 2.0  # keep symmetric under roundoff
    return new_mean, new_cov


def state_bbox(state: State, min_extent: float = 1.0) -> BBox:
    """Current box implied by the state mean.

    Aspect and height are floored at a small positive extent so a state
    driven degenerate by long prediction-only stretches still yields a
    valid box.
    """
    mean = state[0]
    h = max(float(mean[3]), min_extent)
    a = max(float(mean[2]), min_extent / h)
    return BBox(cx=float(mean[0]), cy=float(mean[1]), w=a * h, h=h)
