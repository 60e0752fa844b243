"""Cross-correlation-blind baseline: pairwise updates with assumed-zero cross blocks."""

from __future__ import annotations

import numpy as np

from ..geom import Pose2, rot, skew_J, wrap_angle
from ..models import RelPosMeasurement, meas_jacobians, rel_pos_h
from .beliefs import FRAME_ORIGINAL, RobotBelief

__all__ = ["naive_update", "naive_landmark_update"]


def naive_update(rb_a: RobotBelief, rb_b: RobotBelief, m: RelPosMeasurement):
    """Joint update of the measuring pair treating their cross-covariance as zero."""
    if rb_a.frame_tag != FRAME_ORIGINAL or rb_b.frame_tag != FRAME_ORIGINAL:
        raise ValueError("naive updates operate in original coordinates")
    H_a, H_b = meas_jacobians(rb_a.x_hat, rb_b.x_hat)
    H = np.hstack([H_a, H_b])
    P = np.zeros((6, 6))
    P[:3, :3] = rb_a.P_own
    P[3:, 3:] = rb_b.P_own
    S = H @ P @ H.T + m.R
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise ValueError("innovation covariance is singular") from exc
    K = P @ H.T @ S_inv
    innov = m.y - rel_pos_h(rb_a.x_hat, rb_b.x_hat)
    dx = K @ innov
    P_new = P - K @ S @ K.T
    P_new = (P_new + P_new.T) / 2

    def _bump(rb, delta, block):
        v = rb.x_hat.as_vector() + delta
        return RobotBelief(
            robot_id=rb.robot_id,
            x_hat=Pose2(position=v[:2], heading=wrap_angle(v[2])),
            P_own=block,
            frame_tag=FRAME_ORIGINAL,
        )

    return _bump(rb_a, dx[:3], P_new[:3, :3]), _bump(rb_b, dx[3:], P_new[3:, 3:])


def naive_landmark_update(rb: RobotBelief, landmark_pos, y, R) -> RobotBelief:
    """Single-robot EKF update against a known landmark position."""
    p_L = np.asarray(landmark_pos, dtype=float)
    Rt = rot(rb.x_hat.heading).T
    col = -skew_J() @ (p_L - rb.x_hat.position)
    H = Rt @ np.hstack([-np.eye(2), col[:, None]])
    S = H @ rb.P_own @ H.T + np.asarray(R)
    K = rb.P_own @ H.T @ np.linalg.inv(S)
    innov = np.asarray(y) - Rt @ (p_L - rb.x_hat.position)
    v = rb.x_hat.as_vector() + K @ innov
    P = rb.P_own - K @ S @ K.T
    return RobotBelief(
        robot_id=rb.robot_id,
        x_hat=Pose2(position=v[:2], heading=wrap_angle(v[2])),
        P_own=(P + P.T) / 2,
        frame_tag=FRAME_ORIGINAL,
    )
