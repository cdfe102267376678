"""Constant-velocity Kalman filter over (cx, cy, aspect, height) box measurements."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .geometry import BoundingBox

STD_POSITION = 1.0 / 20
STD_VELOCITY = 1.0 / 160

# 0.95 quantile of chi-square with 4 degrees of freedom
CHI2_GATE_4DOF = 9.4877


class DegenerateBox(ValueError):
    pass


class SingularInnovation(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class KalmanState:
    """mean: (cx, cy, a, h, vcx, vcy, va, vh); covariance: 8x8."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        cov = np.array(self.covariance, dtype=np.float64)
        if mean.shape != (8,) or cov.shape != (8, 8):
            raise ValueError(f"bad state shapes {mean.shape}, {cov.shape}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    def box(self) -> BoundingBox:
        return measurement_to_box(self.mean[:4])


def box_to_measurement(box: BoundingBox) -> np.ndarray:
    if box.h <= 0:
        raise DegenerateBox(f"box {box.as_tuple()} has zero height")
    return np.array([box.x + box.w / 2, box.y + box.h / 2, box.w / box.h, box.h])


def measurement_to_box(z: np.ndarray) -> BoundingBox:
    cx, cy, a, h = (float(v) for v in z)
    h = max(h, 0.0)
    w = max(a * h, 0.0)
    return BoundingBox(cx - w / 2, cy - h / 2, w, h)


def _measurement_noise(h: float) -> np.ndarray:
    std = [STD_POSITION * h, STD_POSITION * h, 1e-1, STD_POSITION * h]
    return np.diag(np.square(std))


def kalman_init(box: BoundingBox) -> KalmanState:
    if box.w <= 0 or box.h <= 0:
        raise DegenerateBox(f"box {box.as_tuple()} has zero area")
    z = box_to_measurement(box)
    h = box.h
    std = [
        2 * STD_POSITION * h, 2 * STD_POSITION * h, 1e-2, 2 * STD_POSITION * h,
        10 * STD_VELOCITY * h, 10 * STD_VELOCITY * h, 1e-5, 10 * STD_VELOCITY * h,
    ]
    return KalmanState(np.r_[z, np.zeros(4)], np.diag(np.square(std)))


def kalman_predict(state: KalmanState) -> KalmanState:
    m = state.mean
    c = state.covariance
    h = m[3]
    q = np.square([
        STD_POSITION * h, STD_POSITION * h, 1e-2, STD_POSITION * h,
        STD_VELOCITY * h, STD_VELOCITY * h, 1e-5, STD_VELOCITY * h,
    ])
    mean = m.copy()
    mean[:4] += m[4:]
    # F C F^T written out in blocks: F = [[I, I], [0, I]]
    pp, pv, vp, vv = c[:4, :4], c[:4, 4:], c[4:, :4], c[4:, 4:]
    cov = np.empty_like(c)
    cov[:4, :4] = pp + pv + vp + vv
    cov[:4, 4:] = pv + vv
    cov[4:, :4] = vp + vv
    cov[4:, 4:] = vv
    cov[np.diag_indices(8)] += q
    return KalmanState(mean, cov)


def _innovation(state: KalmanState, h: float):
    s = state.covariance[:4, :4] + _measurement_noise(h)
    try:
        factor = scipy.linalg.cho_factor(s, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation("innovation covariance is not positive definite") from exc
    return s, factor


def kalman_update(state: KalmanState, z: BoundingBox) -> KalmanState:
    """Correct ``state`` with measurement box ``z``.

    Measurement noise is scaled by the measured height.
    """
    meas = box_to_measurement(z)
    s, factor = _innovation(state, meas[3])
    ph = state.covariance[:, :4]  # C H^T
    gain = scipy.linalg.cho_solve(factor, ph.T, check_finite=False).T
    innov = meas - state.mean[:4]
    mean = state.mean + gain @ innov
    cov = state.covariance - gain @ s @ gain.T
    cov = 0.5 * (cov + cov.T)
    if mean[3] <= 0:
        mean[3] = 1e-3
    return KalmanState(mean, cov)


def mahalanobis_gate(state: KalmanState, candidates: Sequence[BoundingBox]) -> np.ndarray:
    """Squared Mahalanobis distance of each candidate box from the projected state.

    The innovation covariance uses the state's own height for its noise term,
    so it is shared by all candidates.
    """
    if len(candidates) == 0:
        return np.zeros(0)
    _, (low, _) = _innovation(state, state.mean[3])
    y = np.array([box_to_measurement(b) for b in candidates]) - state.mean[:4]
    sol = scipy.linalg.solve_triangular(low, y.T, lower=True, check_finite=False)
    return np.sum(sol * sol, axis=0)
