"""Server-based distributed filter operations.

Two variants share the same message-passing structure: the transformed
filter (TSB) keeps covariances in the position-anchored transformed
coordinates, where the propagation Jacobian is the identity and the
server's cross blocks never move during propagation; the original filter
(OSB) works in original coordinates and ships accumulated propagation
matrices so the server can bring its stale cross blocks to the current
epoch at update time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geom import Pose2, rot, skew_J, wrap_angle
from ..models import (
    MotionInput,
    ProcessNoise,
    meas_jacobians,
    motion_jacobians,
    propagate_pose,
    rel_pos_h,
)
from ..xform import transformed_meas_jacobians, transformed_motion_jacobians, xform_T_inv
from .beliefs import (
    FRAME_ORIGINAL,
    FRAME_TRANSFORMED,
    CorrectionMessage,
    CrossCovTable,
    RobotBelief,
)

__all__ = [
    "UpdateBundleA",
    "UpdateBundleB",
    "tsb_robot_propagate",
    "tsb_server_corrections",
    "tsb_robot_apply",
    "tsb_server_update_crosscov",
    "schmidt_partial_update",
    "osb_robot_propagate",
    "osb_align_crosscov",
    "osb_server_corrections",
    "osb_robot_apply",
    "osb_server_update_crosscov",
    "landmark_jacobian",
    "transformed_landmark_jacobian",
    "landmark_update",
]

_POSTERIOR_EIG_FLOOR = -1e-8


@dataclass
class UpdateBundleA:
    """Observing robot's message to the server."""

    robot_id: int
    x_hat: Pose2
    P_own: np.ndarray
    y: np.ndarray
    R: np.ndarray
    Phi: np.ndarray | None = None  # OSB only: accumulated propagation matrix


@dataclass
class UpdateBundleB:
    """Observed robot's message to the server."""

    robot_id: int
    x_hat: Pose2
    P_own: np.ndarray
    Phi: np.ndarray | None = None


# ---------------------------------------------------------------------------
# generic server math, shared by both frames and by landmark updates


def _server_gain_core(terms, innov, R, own_blocks, cross, all_robot_ids, updating_set):
    """Compute the innovation covariance, per-robot gain inputs and gains.

    ``terms`` is a list of (robot_id, H_block) pairs with 2x3 blocks; the
    measurement Jacobian is nonzero only there. ``own_blocks`` maps the
    term robots to their own covariance blocks.
    """
    R = np.asarray(R, dtype=float)
    S = R.copy()
    for rid_a, Ha in terms:
        for rid_b, Hb in terms:
            if rid_a == rid_b:
                Pab = own_blocks[rid_a]
            else:
                Pab = cross.get(rid_a, rid_b)
            S = S + Ha @ Pab @ Hb.T
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise ValueError("innovation covariance is singular") from exc

    C = {}
    K = {}
    for i in all_robot_ids:
        Ci = np.zeros((3, 2))
        for rid, Ht in terms:
            Pit = own_blocks[rid] if i == rid else cross.get(i, rid)
            Ci = Ci + Pit @ Ht.T
        C[i] = Ci
        K[i] = Ci @ S_inv if i in updating_set else np.zeros((3, 2))
    return S, C, K


def _messages(K, S, innov, updating_set):
    out = []
    for i in sorted(updating_set):
        out.append(CorrectionMessage(robot_id=i, r=K[i] @ innov, Gamma=K[i] @ S @ K[i].T))
    return out


def _optimal_crosscov_update(cross: CrossCovTable, K, S) -> CrossCovTable:
    new = cross.copy()
    ids = cross.robot_ids
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            new.set(i, j, cross.get(i, j) - K[i] @ S @ K[j].T)
    return new


def _joseph_crosscov_update(cross: CrossCovTable, K, C, S) -> CrossCovTable:
    new = cross.copy()
    ids = cross.robot_ids
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            block = (
                cross.get(i, j)
                - K[i] @ C[j].T
                - C[i] @ K[j].T
                + K[i] @ S @ K[j].T
            )
            new.set(i, j, block)
    return new


def _pair_terms(bundle_a: UpdateBundleA, bundle_b: UpdateBundleB, frame_tag: str):
    if frame_tag == FRAME_TRANSFORMED:
        Ha, Hb = transformed_meas_jacobians(bundle_a.x_hat, bundle_b.x_hat)
    else:
        Ha, Hb = meas_jacobians(bundle_a.x_hat, bundle_b.x_hat)
    innov = np.asarray(bundle_a.y) - rel_pos_h(bundle_a.x_hat, bundle_b.x_hat)
    terms = [(bundle_a.robot_id, Ha), (bundle_b.robot_id, Hb)]
    own = {bundle_a.robot_id: np.asarray(bundle_a.P_own), bundle_b.robot_id: np.asarray(bundle_b.P_own)}
    return terms, own, innov


def _apply_correction(rb: RobotBelief, c: CorrectionMessage, state_shift: np.ndarray) -> RobotBelief:
    P = rb.P_own - c.Gamma
    P = (P + P.T) / 2
    if np.min(np.linalg.eigvalsh(P)) < _POSTERIOR_EIG_FLOOR:
        raise ValueError(
            f"robot {rb.robot_id}: correction message yields an indefinite covariance"
        )
    v = rb.x_hat.as_vector() + state_shift
    return RobotBelief(
        robot_id=rb.robot_id,
        x_hat=Pose2(position=v[:2], heading=wrap_angle(v[2])),
        P_own=P,
        frame_tag=rb.frame_tag,
    )


# ---------------------------------------------------------------------------
# transformed server-based filter (TSB)


def tsb_robot_propagate(rb: RobotBelief, u: MotionInput, Q, dt: float) -> RobotBelief:
    """Robot-side propagation: noise-free state prediction plus transformed noise."""
    if rb.frame_tag != FRAME_TRANSFORMED:
        raise ValueError("tsb_robot_propagate expects a transformed-frame belief")
    Q = Q.Q if isinstance(Q, ProcessNoise) else np.asarray(Q)
    prior = propagate_pose(rb.x_hat, u, dt)
    _, calG = transformed_motion_jacobians(prior, rb.x_hat)
    P = rb.P_own + calG @ Q @ calG.T
    return RobotBelief(rb.robot_id, prior, (P + P.T) / 2, rb.frame_tag)


def tsb_server_corrections(bundle_a: UpdateBundleA, bundle_b: UpdateBundleB, cross: CrossCovTable, all_robot_ids=None):
    """Server-side gain computation for a relative measurement.

    Returns the correction messages (one per robot), the innovation
    covariance S and the per-robot gains the server retains for its own
    cross-covariance update.
    """
    if cross.frame_tag != FRAME_TRANSFORMED:
        raise ValueError("cross-covariance table is not in transformed coordinates")
    ids = list(all_robot_ids) if all_robot_ids is not None else list(cross.robot_ids)
    terms, own, innov = _pair_terms(bundle_a, bundle_b, FRAME_TRANSFORMED)
    S, _, K = _server_gain_core(terms, innov, bundle_a.R, own, cross, ids, set(ids))
    return _messages(K, S, innov, set(ids)), S, K


def tsb_robot_apply(rb: RobotBelief, c: CorrectionMessage) -> RobotBelief:
    """Robot-side application of a correction message.

    The state shift is mapped back to original coordinates with the
    transform anchored at the robot's prior position estimate.
    """
    if rb.frame_tag != FRAME_TRANSFORMED:
        raise ValueError("tsb_robot_apply expects a transformed-frame belief")
    shift = xform_T_inv(rb.x_hat.position) @ c.r
    return _apply_correction(rb, c, shift)


def tsb_server_update_crosscov(cross: CrossCovTable, gains, S) -> CrossCovTable:
    return _optimal_crosscov_update(cross, gains, S)


def schmidt_partial_update(
    bundle_a: UpdateBundleA,
    bundle_b: UpdateBundleB,
    cross: CrossCovTable,
    updating_set,
    all_robot_ids=None,
):
    """Partial update: gains are zeroed outside ``updating_set``.

    All cross blocks (and the updating robots' own blocks, via their
    messages) follow the generalized Joseph form, which keeps the joint
    covariance consistent when some robots miss their correction.
    """
    updating_set = set(updating_set)
    if not updating_set:
        raise ValueError("updating set must be non-empty")
    ids = list(all_robot_ids) if all_robot_ids is not None else list(cross.robot_ids)
    frame = cross.frame_tag
    terms, own, innov = _pair_terms(bundle_a, bundle_b, frame)
    S, C, K = _server_gain_core(terms, innov, bundle_a.R, own, cross, ids, updating_set)
    new_cross = _joseph_crosscov_update(cross, K, C, S)
    return _messages(K, S, innov, updating_set), new_cross


# ---------------------------------------------------------------------------
# original-coordinate server-based filter (OSB)


def osb_robot_propagate(rb: RobotBelief, u: MotionInput, Q, dt: float):
    """Robot-side propagation in original coordinates.

    Returns the new belief together with the per-step propagation Jacobian
    the robot folds into its accumulated matrix for the server.
    """
    if rb.frame_tag != FRAME_ORIGINAL:
        raise ValueError("osb_robot_propagate expects an original-frame belief")
    Q = Q.Q if isinstance(Q, ProcessNoise) else np.asarray(Q)
    prior = propagate_pose(rb.x_hat, u, dt)
    F, G = motion_jacobians(prior, rb.x_hat)
    P = F @ rb.P_own @ F.T + G @ Q @ G.T
    return RobotBelief(rb.robot_id, prior, (P + P.T) / 2, rb.frame_tag), F


def osb_align_crosscov(cross: CrossCovTable, increments) -> CrossCovTable:
    """Bring stale cross blocks to the current epoch.

    ``increments`` maps robot id to the propagation matrix accumulated
    since the block epoch the server last saw for that robot; cross blocks
    carry no process noise, so this lazy propagation is exact.
    """
    new = cross.copy()
    ids = cross.robot_ids
    eye = np.eye(3)
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            Pi = increments.get(i, eye)
            Pj = increments.get(j, eye)
            new.set(i, j, Pi @ cross.get(i, j) @ Pj.T)
    return new


def osb_server_corrections(bundle_a: UpdateBundleA, bundle_b: UpdateBundleB, cross: CrossCovTable, all_robot_ids=None):
    """Original-coordinate twin of :func:`tsb_server_corrections`.

    The caller must have aligned the cross table to the current epoch
    (see :func:`osb_align_crosscov`) before computing gains.
    """
    if cross.frame_tag != FRAME_ORIGINAL:
        raise ValueError("cross-covariance table is not in original coordinates")
    ids = list(all_robot_ids) if all_robot_ids is not None else list(cross.robot_ids)
    terms, own, innov = _pair_terms(bundle_a, bundle_b, FRAME_ORIGINAL)
    S, _, K = _server_gain_core(terms, innov, bundle_a.R, own, cross, ids, set(ids))
    return _messages(K, S, innov, set(ids)), S, K


def osb_robot_apply(rb: RobotBelief, c: CorrectionMessage) -> RobotBelief:
    if rb.frame_tag != FRAME_ORIGINAL:
        raise ValueError("osb_robot_apply expects an original-frame belief")
    return _apply_correction(rb, c, c.r)


osb_server_update_crosscov = tsb_server_update_crosscov


# ---------------------------------------------------------------------------
# landmark measurements


def landmark_jacobian(pose: Pose2, p_L) -> np.ndarray:
    """Original-coordinate Jacobian of a known-landmark relative position measurement."""
    Rt = rot(pose.heading).T
    col = -skew_J() @ (np.asarray(p_L, dtype=float) - pose.position)
    return Rt @ np.hstack([-np.eye(2), col[:, None]])


def transformed_landmark_jacobian(pose: Pose2, p_L) -> np.ndarray:
    """Transformed-coordinate landmark Jacobian; the anchor term cancels the robot position."""
    Rt = rot(pose.heading).T
    col = -skew_J() @ np.asarray(p_L, dtype=float)
    return Rt @ np.hstack([-np.eye(2), col[:, None]])


def landmark_update(beliefs, cross: CrossCovTable, robot_id: int, landmark_pos, y, R, updating_set=None):
    """Server-based update from robot ``robot_id`` observing a known landmark.

    ``beliefs`` maps robot id to RobotBelief; every robot in
    ``updating_set`` (default: all) receives a correction through its
    cross-covariance with the observer. Returns (new beliefs, new cross).
    """
    frame = cross.frame_tag
    rb = beliefs[robot_id]
    if rb.frame_tag != frame:
        raise ValueError("belief/cross frame mismatch")
    p_L = np.asarray(landmark_pos, dtype=float)
    if frame == FRAME_TRANSFORMED:
        H = transformed_landmark_jacobian(rb.x_hat, p_L)
    else:
        H = landmark_jacobian(rb.x_hat, p_L)
    innov = np.asarray(y) - rot(rb.x_hat.heading).T @ (p_L - rb.x_hat.position)
    ids = list(cross.robot_ids)
    updating = set(updating_set) if updating_set is not None else set(ids)
    if not updating:
        raise ValueError("updating set must be non-empty")
    terms = [(robot_id, H)]
    own = {robot_id: rb.P_own}
    S, C, K = _server_gain_core(terms, innov, R, own, cross, ids, updating)
    optimal = updating == set(ids)
    if optimal:
        new_cross = _optimal_crosscov_update(cross, K, S)
    else:
        new_cross = _joseph_crosscov_update(cross, K, C, S)
    new_beliefs = dict(beliefs)
    for msg in _messages(K, S, innov, updating):
        rb_i = beliefs[msg.robot_id]
        if frame == FRAME_TRANSFORMED:
            new_beliefs[msg.robot_id] = tsb_robot_apply(rb_i, msg)
        else:
            new_beliefs[msg.robot_id] = osb_robot_apply(rb_i, msg)
    return new_beliefs, new_cross
