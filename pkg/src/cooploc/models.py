"""Motion and relative-position measurement models with their Jacobians.

All Jacobians here are the original-coordinate ones; the transformed
counterparts live in :mod:`cooploc.xform`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import Pose2, rot, skew_J, wrap_angle

__all__ = [
    "MotionInput",
    "ProcessNoise",
    "RelPosMeasurement",
    "propagate_pose",
    "motion_jacobians",
    "rel_pos_h",
    "meas_jacobians",
    "range_bearing_to_relpos",
]


@dataclass(frozen=True)
class MotionInput:
    """Body-frame linear velocity (2-vector, m/s) and angular velocity (rad/s)."""

    v: np.ndarray
    omega: float

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.shape != (2,):
            raise ValueError(f"v must be a 2-vector, got shape {v.shape}")
        if not (np.all(np.isfinite(v)) and math.isfinite(self.omega)):
            raise ValueError("motion input must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "v", v)

    def as_vector(self) -> np.ndarray:
        return np.array([self.v[0], self.v[1], self.omega])


@dataclass(frozen=True)
class ProcessNoise:
    """Covariance of the per-step additive odometry noise (3x3, SPD)."""

    Q: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.shape != (3, 3):
            raise ValueError(f"Q must be 3x3, got shape {Q.shape}")
        if np.max(np.abs(Q - Q.T)) > 1e-12:
            raise ValueError("Q must be symmetric")
        if np.min(np.linalg.eigvalsh(Q)) <= 0.0:
            raise ValueError("Q must be positive definite")
        Q = Q.copy()
        Q.flags.writeable = False
        object.__setattr__(self, "Q", Q)


@dataclass(frozen=True)
class RelPosMeasurement:
    """A relative position measurement taken by one robot of another.

    ``y`` is expressed in the observer's body frame; ``R`` is the 2x2
    measurement noise covariance.
    """

    observer_id: int
    target_id: int
    y: np.ndarray
    R: np.ndarray
    time_step: int = 0

    def __post_init__(self):
        if self.observer_id == self.target_id:
            raise ValueError("observer and target must differ")
        y = np.asarray(self.y, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if y.shape != (2,) or R.shape != (2, 2):
            raise ValueError("y must be a 2-vector and R a 2x2 matrix")
        if np.max(np.abs(R - R.T)) > 1e-12 or np.min(np.linalg.eigvalsh(R)) <= 0:
            raise ValueError("R must be symmetric positive definite")
        y = y.copy()
        y.flags.writeable = False
        R = R.copy()
        R.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "R", R)


def propagate_pose(x: Pose2, u: MotionInput, dt: float, eps=None) -> Pose2:
    """One step of the unicycle motion model.

    position += R(theta) (v dt + eps[0:2]); heading += omega dt + eps[2].
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if eps is None:
        eps = np.zeros(3)
    eps = np.asarray(eps, dtype=float)
    if not np.all(np.isfinite(eps)):
        raise ValueError("noise sample must be finite")
    dp = rot(x.heading) @ (u.v * dt + eps[:2])
    return Pose2(
        position=x.position + dp,
        heading=wrap_angle(x.heading + u.omega * dt + eps[2]),
    )


def motion_jacobians(x_prior: Pose2, x_post: Pose2):
    """Propagation Jacobians (F_i, G_i) of the linearized error-state model.

    ``x_prior`` is the predicted pose at k|k-1, ``x_post`` the posterior at
    k-1|k-1; F_i couples heading error into position error through the
    displacement between the two linearization points.
    """
    J = skew_J()
    F = np.eye(3)
    F[:2, 2] = J @ (x_prior.position - x_post.position)
    G = np.eye(3)
    G[:2, :2] = rot(x_post.heading)
    return F, G


def rel_pos_h(x_i: Pose2, x_j: Pose2) -> np.ndarray:
    """Relative position of robot j in robot i's body frame."""
    return rot(x_i.heading).T @ (x_j.position - x_i.position)


def meas_jacobians(x_i_hat: Pose2, x_j_hat: Pose2):
    """Measurement Jacobian blocks (H_i, H_j) for a relative position measurement."""
    J = skew_J()
    Rt = rot(x_i_hat.heading).T
    H_i = np.hstack([-np.eye(2), (-J @ (x_j_hat.position - x_i_hat.position))[:, None]])
    H_j = np.hstack([np.eye(2), np.zeros((2, 1))])
    return Rt @ H_i, Rt @ H_j


def range_bearing_to_relpos(d: float, phi: float, sigma_d: float, sigma_phi: float):
    """Convert a range-bearing reading into a relative position (y, R) pair.

    The noise covariance is linearized at the measured (d, phi).
    Returns ``(y, R)``; caller attaches observer/target ids.
    """
    if d <= 0:
        raise ValueError("range must be positive")
    if sigma_d <= 0 or sigma_phi <= 0:
        raise ValueError("noise sigmas must be positive")
    c, s = math.cos(phi), math.sin(phi)
    y = np.array([d * c, d * s])
    C = np.array([[c, -d * s], [s, d * c]])
    R = C @ np.diag([sigma_d**2, sigma_phi**2]) @ C.T
    return y, R
