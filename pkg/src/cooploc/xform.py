"""Position-anchored coordinate transformation and transformed Jacobians.

The 3x3 transform T(p) = [[I2, -J p], [0, 1]] decomposes the propagation
Jacobian as F = T(p_prior)^-1 T(p_post), which makes the transformed
propagation Jacobian the identity and keeps the measurement Jacobians free
of estimate-correction terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import Pose2, rot, skew_J

__all__ = [
    "XformMat",
    "xform_matrix",
    "xform_T",
    "xform_T_inv",
    "decompose_F",
    "transformed_motion_jacobians",
    "transformed_meas_jacobians",
    "to_transformed_cov",
    "from_transformed_cov",
]

_J = skew_J()


def xform_T(p_hat) -> np.ndarray:
    """T(p) = [[I2, -J p], [0, 1]] as a plain 3x3 array."""
    p = np.asarray(p_hat, dtype=float)
    T = np.eye(3)
    T[:2, 2] = -_J @ p
    return T


def xform_T_inv(p_hat) -> np.ndarray:
    """Closed-form inverse of T(p): flip the sign of the third-column block."""
    p = np.asarray(p_hat, dtype=float)
    T = np.eye(3)
    T[:2, 2] = _J @ p
    return T


@dataclass(frozen=True)
class XformMat:
    """The transform matrix together with the position that anchors it."""

    T: np.ndarray
    anchor: np.ndarray

    def inverse(self) -> np.ndarray:
        return xform_T_inv(self.anchor)


def xform_matrix(p_hat) -> XformMat:
    p = np.asarray(p_hat, dtype=float)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise ValueError("anchor must be a finite 2-vector")
    return XformMat(T=xform_T(p), anchor=p.copy())


def decompose_F(x_prior: Pose2, x_post: Pose2):
    """Split F_i into T(p_prior)^-1 (left) times T(p_post) (right)."""
    left = xform_T_inv(x_prior.position)
    right = xform_T(x_post.position)
    return left, right


def transformed_motion_jacobians(x_prior: Pose2, x_post: Pose2):
    """Transformed propagation Jacobians (calF_i, calG_i).

    calF_i is the identity by construction; calG_i carries the prior
    position anchor in its third column.
    """
    calF = np.eye(3)
    calG = np.eye(3)
    calG[:2, :2] = rot(x_post.heading)
    calG[:2, 2] = -_J @ x_prior.position
    return calF, calG


def transformed_meas_jacobians(x_i_hat: Pose2, x_j_hat: Pose2):
    """Transformed measurement Jacobian blocks (calH_i, calH_j).

    Both third columns depend only on the observed robot's position, which
    is what restores the correct unobservable subspace.
    """
    Rt = rot(x_i_hat.heading).T
    Jpj = _J @ x_j_hat.position
    calH_i = Rt @ np.hstack([-np.eye(2), -Jpj[:, None]])
    calH_j = Rt @ np.hstack([np.eye(2), Jpj[:, None]])
    return calH_i, calH_j


def _check_blocks(P: np.ndarray, anchors) -> int:
    n = len(anchors)
    if P.shape != (3 * n, 3 * n):
        raise ValueError(f"covariance shape {P.shape} does not match {n} anchors")
    return n


def to_transformed_cov(P, anchors) -> np.ndarray:
    """Congruence-transform each 3x3 block (i, j) of P by (T_i, T_j)."""
    P = np.asarray(P, dtype=float)
    n = _check_blocks(P, anchors)
    Ts = [xform_T(a) for a in anchors]
    out = np.empty_like(P)
    for i in range(n):
        for j in range(n):
            out[3 * i : 3 * i + 3, 3 * j : 3 * j + 3] = (
                Ts[i] @ P[3 * i : 3 * i + 3, 3 * j : 3 * j + 3] @ Ts[j].T
            )
    return out


def from_transformed_cov(calP, anchors) -> np.ndarray:
    """Inverse of :func:`to_transformed_cov` with the same anchors."""
    calP = np.asarray(calP, dtype=float)
    n = _check_blocks(calP, anchors)
    Tinvs = [xform_T_inv(a) for a in anchors]
    out = np.empty_like(calP)
    for i in range(n):
        for j in range(n):
            out[3 * i : 3 * i + 3, 3 * j : 3 * j + 3] = (
                Tinvs[i] @ calP[3 * i : 3 * i + 3, 3 * j : 3 * j + 3] @ Tinvs[j].T
            )
    return out
