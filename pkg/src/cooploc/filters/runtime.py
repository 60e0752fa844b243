"""Episode-loop estimator classes.

These wrap the filter math in a common interface used by the simulation
and dataset drivers. The server-based filters keep their blocks in
(N, N, 3, 3) arrays and vectorize the per-robot gain and cross-covariance
updates, which is what makes large Monte Carlo sweeps affordable; the
block-level operations in :mod:`cooploc.filters.server` define the same
update and are checked against these classes in the tests.
"""

from __future__ import annotations

import numpy as np

from ..geom import Pose2, rot, skew_J
from ..models import MotionInput, RelPosMeasurement, meas_jacobians, rel_pos_h
from ..xform import (
    from_transformed_cov,
    to_transformed_cov,
    transformed_meas_jacobians,
    xform_T,
)
from .beliefs import JointBelief
from .joint import JointEkf, TransformedJointEkf
from .naive import naive_landmark_update, naive_update
from .beliefs import FRAME_ORIGINAL, FRAME_TRANSFORMED, RobotBelief
from .server import landmark_jacobian, transformed_landmark_jacobian

__all__ = [
    "TsbFilter",
    "OsbFilter",
    "NaiveFilter",
    "JointRuntime",
    "TransformedJointRuntime",
    "make_filter",
    "ESTIMATOR_KINDS",
]

_J = skew_J()


def _wrap_half_open(theta):
    # (-pi, pi] with the boundary on +pi, matching geom.wrap_angle
    w = theta - 2.0 * np.pi * np.floor((theta + np.pi) / (2.0 * np.pi))
    return np.where(w <= -np.pi, w + 2.0 * np.pi, w)


def _propagate_states(X, inputs, dt):
    """Vectorized unicycle step for (N, 3) pose and (N, 3) input arrays."""
    c, s = np.cos(X[:, 2]), np.sin(X[:, 2])
    vx, vy = inputs[:, 0] * dt, inputs[:, 1] * dt
    out = X.copy()
    out[:, 0] += c * vx - s * vy
    out[:, 1] += s * vx + c * vy
    out[:, 2] = _wrap_half_open(X[:, 2] + inputs[:, 2] * dt)
    return out


def _rot_batch(theta):
    c, s = np.cos(theta), np.sin(theta)
    R = np.zeros((theta.size, 2, 2))
    R[:, 0, 0] = c
    R[:, 0, 1] = -s
    R[:, 1, 0] = s
    R[:, 1, 1] = c
    return R


def _as_Q_blocks(Q, n):
    Q = np.asarray(Q, dtype=float)
    if Q.shape == (3, 3):
        return np.broadcast_to(Q, (n, 3, 3))
    if Q.shape == (n, 3, 3):
        return Q
    raise ValueError("Q must be (3,3) or (N,3,3)")


def _check_diag_psd(P_blocks, floor=-1e-8):
    # cheap guard: negative variances signal an inconsistent update
    d = np.diagonal(P_blocks, axis1=-2, axis2=-1)
    if np.min(d) < floor:
        raise ValueError("posterior covariance has a negative variance")


class _ServerArrayFilter:
    """Shared machinery for the array-backed server filters."""

    def __init__(self, x0, P0_blocks, Q):
        self.X = np.array(x0, dtype=float)
        self.n = self.X.shape[0]
        self.Q = np.array(_as_Q_blocks(Q, self.n))
        self.P = np.zeros((self.n, self.n, 3, 3))
        self._idx = np.arange(self.n)

    def poses(self):
        return self.X.copy()

    def pose(self, i: int) -> Pose2:
        return Pose2(position=self.X[i, :2], heading=self.X[i, 2])

    def _apply_gain(self, C, S, innov, updating, transformed_shift: bool):
        try:
            S_inv = np.linalg.inv(S)
        except np.linalg.LinAlgError as exc:
            raise ValueError("innovation covariance is singular") from exc
        K = C @ S_inv
        full = updating is None or set(updating) == set(range(self.n))
        if not full:
            mask = np.zeros(self.n, dtype=bool)
            mask[list(updating)] = True
            K = K * mask[:, None, None]
        r = K @ innov
        if transformed_shift:
            px, py = self.X[:, 0].copy(), self.X[:, 1].copy()
            self.X[:, 0] += r[:, 0] - py * r[:, 2]
            self.X[:, 1] += r[:, 1] + px * r[:, 2]
        else:
            self.X[:, 0] += r[:, 0]
            self.X[:, 1] += r[:, 1]
        self.X[:, 2] = _wrap_half_open(self.X[:, 2] + r[:, 2])
        KS = K @ S
        if full:
            self.P -= np.einsum("iab,jcb->ijac", KS, K)
        else:
            self.P -= (
                np.einsum("iab,jcb->ijac", K, C)
                + np.einsum("iab,jcb->ijac", C, K)
                - np.einsum("iab,jcb->ijac", KS, K)
            )
        self.P = (self.P + self.P.transpose(1, 0, 3, 2)) / 2
        _check_diag_psd(self.P[self._idx, self._idx])


class TsbFilter(_ServerArrayFilter):
    """Transformed server-based filter over the whole team.

    Own blocks and cross blocks live in transformed coordinates; the cross
    blocks never move during propagation.
    """

    frame = FRAME_TRANSFORMED

    def __init__(self, x0, P0_blocks, Q):
        super().__init__(x0, P0_blocks, Q)
        P0_blocks = np.asarray(P0_blocks, dtype=float)
        for i in range(self.n):
            T = xform_T(self.X[i, :2])
            self.P[i, i] = T @ P0_blocks[i] @ T.T

    def propagate(self, inputs, dt, truth_prev=None, truth_curr=None):
        inputs = np.asarray(inputs, dtype=float)
        X_post = self.X
        X_prior = _propagate_states(X_post, inputs, dt)
        calG = np.zeros((self.n, 3, 3))
        calG[:, :2, :2] = _rot_batch(X_post[:, 2])
        calG[:, 0, 2] = X_prior[:, 1]  # -J p = (p_y, -p_x)
        calG[:, 1, 2] = -X_prior[:, 0]
        calG[:, 2, 2] = 1.0
        self.P[self._idx, self._idx] += np.einsum("nab,nbc,ndc->nad", calG, self.Q, calG)
        self.X = X_prior

    def update_relpos(self, m: RelPosMeasurement, updating_set=None):
        a, b = m.observer_id, m.target_id
        Ha, Hb = transformed_meas_jacobians(self.pose(a), self.pose(b))
        innov = m.y - rel_pos_h(self.pose(a), self.pose(b))
        C = np.einsum("nij,kj->nik", self.P[:, a], Ha) + np.einsum(
            "nij,kj->nik", self.P[:, b], Hb
        )
        S = Ha @ C[a] + Hb @ C[b] + m.R
        self._apply_gain(C, S, innov, updating_set, transformed_shift=True)

    def update_landmark(self, robot_id, p_L, y, R, updating_set=None):
        H = transformed_landmark_jacobian(self.pose(robot_id), p_L)
        innov = np.asarray(y) - rot(self.X[robot_id, 2]).T @ (
            np.asarray(p_L) - self.X[robot_id, :2]
        )
        C = np.einsum("nij,kj->nik", self.P[:, robot_id], H)
        S = H @ C[robot_id] + np.asarray(R)
        self._apply_gain(C, S, innov, updating_set, transformed_shift=True)

    def own_covs_original(self):
        Tinv = np.zeros((self.n, 3, 3))
        Tinv[:, 0, 0] = Tinv[:, 1, 1] = Tinv[:, 2, 2] = 1.0
        Tinv[:, 0, 2] = -self.X[:, 1]  # J p = (-p_y, p_x)
        Tinv[:, 1, 2] = self.X[:, 0]
        diag = self.P[self._idx, self._idx]
        return np.einsum("nab,nbc,ndc->nad", Tinv, diag, Tinv)

    def joint_original(self) -> JointBelief:
        calP = self.P.transpose(0, 2, 1, 3).reshape(3 * self.n, 3 * self.n)
        anchors = [self.X[i, :2] for i in range(self.n)]
        return JointBelief(x_hat=self.X.reshape(-1), P=from_transformed_cov(calP, anchors))


class OsbFilter(_ServerArrayFilter):
    """Original-coordinate server-based filter.

    Each robot eagerly propagates its own block and accumulates its
    propagation matrix; the server's cross blocks are brought to the
    current epoch lazily at update time, which is exact because cross
    blocks carry no process noise.
    """

    frame = FRAME_ORIGINAL

    def __init__(self, x0, P0_blocks, Q):
        super().__init__(x0, P0_blocks, Q)
        P0_blocks = np.asarray(P0_blocks, dtype=float)
        for i in range(self.n):
            self.P[i, i] = P0_blocks[i]
        # third column of the accumulated propagation matrices
        self._phi = np.zeros((self.n, 2))
        self._phi_applied = np.zeros((self.n, 2))

    def propagate(self, inputs, dt, truth_prev=None, truth_curr=None):
        inputs = np.asarray(inputs, dtype=float)
        X_post = self.X
        X_prior = _propagate_states(X_post, inputs, dt)
        dp = X_prior[:, :2] - X_post[:, :2]
        Jdp = np.stack([-dp[:, 1], dp[:, 0]], axis=1)
        F = np.zeros((self.n, 3, 3))
        F[:, 0, 0] = F[:, 1, 1] = F[:, 2, 2] = 1.0
        F[:, :2, 2] = Jdp
        G = np.zeros((self.n, 3, 3))
        G[:, :2, :2] = _rot_batch(X_post[:, 2])
        G[:, 2, 2] = 1.0
        diag = self.P[self._idx, self._idx]
        self.P[self._idx, self._idx] = np.einsum(
            "nab,nbc,ndc->nad", F, diag, F
        ) + np.einsum("nab,nbc,ndc->nad", G, self.Q, G)
        self._phi += Jdp
        self.X = X_prior

    def _align(self):
        d = self._phi - self._phi_applied
        if not np.any(d):
            return
        Phi = np.zeros((self.n, 3, 3))
        Phi[:, 0, 0] = Phi[:, 1, 1] = Phi[:, 2, 2] = 1.0
        Phi[:, :2, 2] = d
        diag = self.P[self._idx, self._idx].copy()
        self.P = np.einsum("iab,ijbc,jdc->ijad", Phi, self.P, Phi)
        self.P[self._idx, self._idx] = diag
        self._phi_applied = self._phi.copy()

    def update_relpos(self, m: RelPosMeasurement, updating_set=None):
        self._align()
        a, b = m.observer_id, m.target_id
        Ha, Hb = meas_jacobians(self.pose(a), self.pose(b))
        innov = m.y - rel_pos_h(self.pose(a), self.pose(b))
        C = np.einsum("nij,kj->nik", self.P[:, a], Ha) + np.einsum(
            "nij,kj->nik", self.P[:, b], Hb
        )
        S = Ha @ C[a] + Hb @ C[b] + m.R
        self._apply_gain(C, S, innov, updating_set, transformed_shift=False)

    def update_landmark(self, robot_id, p_L, y, R, updating_set=None):
        self._align()
        H = landmark_jacobian(self.pose(robot_id), p_L)
        innov = np.asarray(y) - rot(self.X[robot_id, 2]).T @ (
            np.asarray(p_L) - self.X[robot_id, :2]
        )
        C = np.einsum("nij,kj->nik", self.P[:, robot_id], H)
        S = H @ C[robot_id] + np.asarray(R)
        self._apply_gain(C, S, innov, updating_set, transformed_shift=False)

    def own_covs_original(self):
        return self.P[self._idx, self._idx].copy()

    def joint_original(self) -> JointBelief:
        self._align()
        P = self.P.transpose(0, 2, 1, 3).reshape(3 * self.n, 3 * self.n)
        return JointBelief(x_hat=self.X.reshape(-1), P=P.copy())


class NaiveFilter:
    """Independent per-robot EKFs with correlation-blind pairwise updates."""

    frame = FRAME_ORIGINAL

    def __init__(self, x0, P0_blocks, Q):
        self.X = np.array(x0, dtype=float)
        self.n = self.X.shape[0]
        self.Q = np.array(_as_Q_blocks(Q, self.n))
        self.P = np.array(P0_blocks, dtype=float)

    def poses(self):
        return self.X.copy()

    def _belief(self, i) -> RobotBelief:
        return RobotBelief(
            robot_id=i,
            x_hat=Pose2(position=self.X[i, :2], heading=self.X[i, 2]),
            P_own=self.P[i],
            frame_tag=FRAME_ORIGINAL,
        )

    def _store(self, rb: RobotBelief):
        self.X[rb.robot_id] = rb.x_hat.as_vector()
        self.P[rb.robot_id] = rb.P_own

    def propagate(self, inputs, dt, truth_prev=None, truth_curr=None):
        inputs = np.asarray(inputs, dtype=float)
        X_post = self.X
        X_prior = _propagate_states(X_post, inputs, dt)
        dp = X_prior[:, :2] - X_post[:, :2]
        F = np.zeros((self.n, 3, 3))
        F[:, 0, 0] = F[:, 1, 1] = F[:, 2, 2] = 1.0
        F[:, 0, 2] = -dp[:, 1]
        F[:, 1, 2] = dp[:, 0]
        G = np.zeros((self.n, 3, 3))
        G[:, :2, :2] = _rot_batch(X_post[:, 2])
        G[:, 2, 2] = 1.0
        self.P = np.einsum("nab,nbc,ndc->nad", F, self.P, F) + np.einsum(
            "nab,nbc,ndc->nad", G, self.Q, G
        )
        self.X = X_prior

    def update_relpos(self, m: RelPosMeasurement, updating_set=None):
        rb_a, rb_b = naive_update(self._belief(m.observer_id), self._belief(m.target_id), m)
        self._store(rb_a)
        self._store(rb_b)

    def update_landmark(self, robot_id, p_L, y, R, updating_set=None):
        self._store(naive_landmark_update(self._belief(robot_id), p_L, y, R))

    def own_covs_original(self):
        return self.P.copy()

    def joint_original(self) -> JointBelief:
        P = np.zeros((3 * self.n, 3 * self.n))
        for i in range(self.n):
            P[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = self.P[i]
        return JointBelief(x_hat=self.X.reshape(-1), P=P)


class JointRuntime:
    """Episode adapter around the monolithic joint EKF."""

    frame = FRAME_ORIGINAL

    def __init__(self, x0, P0_blocks, Q, ground_truth_jacobians=False):
        x0 = np.asarray(x0, dtype=float)
        self.n = x0.shape[0]
        self.Q = np.array(_as_Q_blocks(Q, self.n))
        P = np.zeros((3 * self.n, 3 * self.n))
        for i in range(self.n):
            P[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = np.asarray(P0_blocks)[i]
        self.ekf = JointEkf(x0.reshape(-1), P, ground_truth_jacobians=ground_truth_jacobians)

    def poses(self):
        return self.ekf.belief.x_hat.reshape(self.n, 3).copy()

    def propagate(self, inputs, dt, truth_prev=None, truth_curr=None):
        inputs = np.asarray(inputs, dtype=float)
        us = [MotionInput(v=inputs[i, :2], omega=inputs[i, 2]) for i in range(self.n)]
        self.ekf.propagate(us, list(self.Q), dt, truth_prev=truth_prev, truth_curr=truth_curr)

    def update_relpos(self, m: RelPosMeasurement, updating_set=None, truth=None):
        self.ekf.update(m, truth=truth)

    def update_landmark(self, robot_id, p_L, y, R, updating_set=None, truth=None):
        self.ekf.update_landmark(robot_id, p_L, y, R, truth=truth)

    def own_covs_original(self):
        P = self.ekf.belief.P
        return np.stack([P[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] for i in range(self.n)])

    def joint_original(self) -> JointBelief:
        return JointBelief(x_hat=self.ekf.belief.x_hat.copy(), P=self.ekf.belief.P.copy())


class TransformedJointRuntime:
    """Episode adapter around the monolithic transformed joint EKF."""

    frame = FRAME_TRANSFORMED

    def __init__(self, x0, P0_blocks, Q):
        x0 = np.asarray(x0, dtype=float)
        self.n = x0.shape[0]
        self.Q = np.array(_as_Q_blocks(Q, self.n))
        P = np.zeros((3 * self.n, 3 * self.n))
        for i in range(self.n):
            P[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = np.asarray(P0_blocks)[i]
        anchors = [x0[i, :2] for i in range(self.n)]
        self.ekf = TransformedJointEkf(x0.reshape(-1), to_transformed_cov(P, anchors))

    def poses(self):
        return self.ekf.x.reshape(self.n, 3).copy()

    def propagate(self, inputs, dt, truth_prev=None, truth_curr=None):
        inputs = np.asarray(inputs, dtype=float)
        us = [MotionInput(v=inputs[i, :2], omega=inputs[i, 2]) for i in range(self.n)]
        self.ekf.propagate(us, list(self.Q), dt)

    def update_relpos(self, m: RelPosMeasurement, updating_set=None):
        self.ekf.update(m)

    def update_landmark(self, robot_id, p_L, y, R, updating_set=None):
        self.ekf.update_landmark(robot_id, p_L, y, R)

    def own_covs_original(self):
        jb = self.ekf.joint_original()
        return np.stack(
            [jb.P[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] for i in range(self.n)]
        )

    def joint_original(self) -> JointBelief:
        return self.ekf.joint_original()


ESTIMATOR_KINDS = ("tsb", "osb", "naive", "central", "joint", "tjoint")


def make_filter(kind: str, x0, P0_blocks, Q):
    """Instantiate an episode filter by name."""
    kind = kind.lower()
    if kind == "tsb":
        return TsbFilter(x0, P0_blocks, Q)
    if kind == "osb":
        return OsbFilter(x0, P0_blocks, Q)
    if kind == "naive":
        return NaiveFilter(x0, P0_blocks, Q)
    if kind == "central":
        return JointRuntime(x0, P0_blocks, Q, ground_truth_jacobians=True)
    if kind == "joint":
        return JointRuntime(x0, P0_blocks, Q, ground_truth_jacobians=False)
    if kind == "tjoint":
        return TransformedJointRuntime(x0, P0_blocks, Q)
    raise ValueError(f"unknown estimator kind {kind!r}; expected one of {ESTIMATOR_KINDS}")
