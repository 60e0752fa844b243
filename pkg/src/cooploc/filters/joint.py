"""Monolithic joint filters.

These serve both as the centralized baseline (with ground-truth
linearization) and as step-for-step oracles for the distributed filters:
the standard joint EKF mirrors the original server-based pipeline and the
transformed joint EKF mirrors the transformed one.
"""

from __future__ import annotations

import numpy as np

from ..geom import Pose2, rot, wrap_angle
from ..models import (
    MotionInput,
    ProcessNoise,
    RelPosMeasurement,
    meas_jacobians,
    motion_jacobians,
    propagate_pose,
    rel_pos_h,
)
from ..xform import (
    transformed_meas_jacobians,
    transformed_motion_jacobians,
    xform_T_inv,
)
from .beliefs import JointBelief

__all__ = [
    "joint_ekf_propagate",
    "joint_ekf_update",
    "joint_ekf_update_landmark",
    "JointEkf",
    "TransformedJointEkf",
]


def _landmark_jacobian(pose: Pose2, p_L: np.ndarray) -> np.ndarray:
    from ..geom import skew_J

    Rt = rot(pose.heading).T
    col = -skew_J() @ (np.asarray(p_L) - pose.position)
    return Rt @ np.hstack([-np.eye(2), col[:, None]])


def _wrap_headings(x: np.ndarray) -> None:
    for i in range(x.size // 3):
        x[3 * i + 2] = wrap_angle(x[3 * i + 2])


def joint_ekf_propagate(
    jb: JointBelief,
    inputs,
    Qs,
    dt: float,
    truth_prev=None,
    truth_curr=None,
) -> JointBelief:
    """Propagate the joint belief one step.

    Jacobians are linearized at the state estimates unless ground-truth
    poses for steps k-1 (``truth_prev``) and k (``truth_curr``) are given.
    """
    n = jb.robot_count
    if len(inputs) != n or len(Qs) != n:
        raise ValueError("need one motion input and one noise covariance per robot")
    x = jb.x_hat.copy()
    P = jb.P.copy()
    F = np.zeros((3 * n, 3 * n))
    GQG = np.zeros((3 * n, 3 * n))
    for i in range(n):
        post = Pose2.from_vector(x[3 * i : 3 * i + 3])
        prior = propagate_pose(post, inputs[i], dt)
        x[3 * i : 3 * i + 3] = prior.as_vector()
        Q = Qs[i].Q if isinstance(Qs[i], ProcessNoise) else np.asarray(Qs[i])
        if np.min(np.linalg.eigvalsh(Q)) <= 0:
            raise ValueError("process noise must be positive definite")
        if truth_prev is not None:
            Fi, Gi = motion_jacobians(truth_curr[i], truth_prev[i])
        else:
            Fi, Gi = motion_jacobians(prior, post)
        F[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = Fi
        GQG[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = Gi @ Q @ Gi.T
    P = F @ P @ F.T + GQG
    return JointBelief(x_hat=x, P=(P + P.T) / 2)


def _kalman_update(jb: JointBelief, H: np.ndarray, innov: np.ndarray, R) -> JointBelief:
    S = H @ jb.P @ H.T + R
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise ValueError("innovation covariance is singular") from exc
    K = jb.P @ H.T @ S_inv
    x = jb.x_hat + K @ innov
    _wrap_headings(x)
    P = jb.P - K @ S @ K.T
    return JointBelief(x_hat=x, P=(P + P.T) / 2)


def joint_ekf_update(jb: JointBelief, m: RelPosMeasurement, truth=None) -> JointBelief:
    """Standard EKF update with a relative position measurement.

    ``truth`` (list of ground-truth poses), when given, replaces the state
    estimates as the linearization point.
    """
    n = jb.robot_count
    a, b = m.observer_id, m.target_id
    if not (0 <= a < n and 0 <= b < n):
        raise ValueError("measurement robot ids out of range")
    pa, pb = jb.pose(a), jb.pose(b)
    if truth is not None:
        H_a, H_b = meas_jacobians(truth[a], truth[b])
    else:
        H_a, H_b = meas_jacobians(pa, pb)
    H = np.zeros((2, 3 * n))
    H[:, 3 * a : 3 * a + 3] = H_a
    H[:, 3 * b : 3 * b + 3] = H_b
    innov = m.y - rel_pos_h(pa, pb)
    return _kalman_update(jb, H, innov, m.R)


def joint_ekf_update_landmark(jb: JointBelief, robot_id: int, p_L, y, R, truth=None) -> JointBelief:
    """EKF update with a relative position measurement of a known landmark."""
    n = jb.robot_count
    pose = jb.pose(robot_id)
    lin = truth[robot_id] if truth is not None else pose
    H = np.zeros((2, 3 * n))
    H[:, 3 * robot_id : 3 * robot_id + 3] = _landmark_jacobian(lin, p_L)
    innov = np.asarray(y) - rot(pose.heading).T @ (np.asarray(p_L) - pose.position)
    return _kalman_update(jb, H, innov, R)


class JointEkf:
    """Joint EKF over all robot poses, estimate- or ground-truth-linearized."""

    def __init__(self, x0, P0, ground_truth_jacobians: bool = False):
        self.belief = JointBelief(x_hat=np.asarray(x0, dtype=float), P=np.asarray(P0, dtype=float))
        self.ground_truth_jacobians = ground_truth_jacobians

    @property
    def robot_count(self):
        return self.belief.robot_count

    def propagate(self, inputs, Qs, dt, truth_prev=None, truth_curr=None):
        if self.ground_truth_jacobians:
            if truth_prev is None or truth_curr is None:
                raise ValueError("ground-truth linearization needs truth poses")
            self.belief = joint_ekf_propagate(self.belief, inputs, Qs, dt, truth_prev, truth_curr)
        else:
            self.belief = joint_ekf_propagate(self.belief, inputs, Qs, dt)

    def update(self, m: RelPosMeasurement, truth=None):
        truth = truth if self.ground_truth_jacobians else None
        self.belief = joint_ekf_update(self.belief, m, truth)

    def update_landmark(self, robot_id, p_L, y, R, truth=None):
        truth = truth if self.ground_truth_jacobians else None
        self.belief = joint_ekf_update_landmark(self.belief, robot_id, p_L, y, R, truth)


class TransformedJointEkf:
    """Monolithic joint filter run entirely in the transformed coordinates.

    Keeps the state estimate in original coordinates and the joint
    covariance in transformed coordinates; the transformed propagation
    Jacobian is the identity, so propagation only adds the mapped process
    noise to the diagonal blocks.
    """

    def __init__(self, x0, calP0):
        self.x = np.asarray(x0, dtype=float).ravel().copy()
        self.calP = np.asarray(calP0, dtype=float).copy()
        self.n = self.x.size // 3
        if self.calP.shape != (3 * self.n, 3 * self.n):
            raise ValueError("covariance dimension mismatch")

    def pose(self, i: int) -> Pose2:
        return Pose2.from_vector(self.x[3 * i : 3 * i + 3])

    def propagate(self, inputs, Qs, dt):
        for i in range(self.n):
            post = self.pose(i)
            prior = propagate_pose(post, inputs[i], dt)
            self.x[3 * i : 3 * i + 3] = prior.as_vector()
            _, calG = transformed_motion_jacobians(prior, post)
            Q = Qs[i].Q if isinstance(Qs[i], ProcessNoise) else np.asarray(Qs[i])
            self.calP[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] += calG @ Q @ calG.T

    def update(self, m: RelPosMeasurement):
        a, b = m.observer_id, m.target_id
        pa, pb = self.pose(a), self.pose(b)
        calH_a, calH_b = transformed_meas_jacobians(pa, pb)
        H = np.zeros((2, 3 * self.n))
        H[:, 3 * a : 3 * a + 3] = calH_a
        H[:, 3 * b : 3 * b + 3] = calH_b
        innov = m.y - rel_pos_h(pa, pb)
        self._apply(H, innov, m.R)

    def update_landmark(self, robot_id: int, p_L, y, R):
        from ..geom import skew_J

        pose = self.pose(robot_id)
        Rt = rot(pose.heading).T
        col = -skew_J() @ np.asarray(p_L, dtype=float)
        calH = Rt @ np.hstack([-np.eye(2), col[:, None]])
        H = np.zeros((2, 3 * self.n))
        H[:, 3 * robot_id : 3 * robot_id + 3] = calH
        innov = np.asarray(y) - rot(pose.heading).T @ (np.asarray(p_L) - pose.position)
        self._apply(H, innov, R)

    def _apply(self, H, innov, R):
        S = H @ self.calP @ H.T + R
        try:
            S_inv = np.linalg.inv(S)
        except np.linalg.LinAlgError as exc:
            raise ValueError("innovation covariance is singular") from exc
        K = self.calP @ H.T @ S_inv
        r = K @ innov
        for i in range(self.n):
            prior_pos = self.x[3 * i : 3 * i + 2].copy()
            self.x[3 * i : 3 * i + 3] += xform_T_inv(prior_pos) @ r[3 * i : 3 * i + 3]
            self.x[3 * i + 2] = wrap_angle(self.x[3 * i + 2])
        self.calP -= K @ S @ K.T
        self.calP = (self.calP + self.calP.T) / 2

    def joint_original(self) -> JointBelief:
        from ..xform import from_transformed_cov

        anchors = [self.x[3 * i : 3 * i + 2] for i in range(self.n)]
        return JointBelief(x_hat=self.x.copy(), P=from_transformed_cov(self.calP, anchors))
