"""State containers shared by the estimators.

A RobotBelief is mutated only by its owning robot's operation sequence;
the CrossCovTable only by the server.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geom import Pose2
from ..xform import from_transformed_cov

__all__ = [
    "FRAME_TRANSFORMED",
    "FRAME_ORIGINAL",
    "RobotBelief",
    "CrossCovTable",
    "CorrectionMessage",
    "JointBelief",
    "assemble_joint",
]

FRAME_TRANSFORMED = "transformed"
FRAME_ORIGINAL = "original"


def _check_frame(tag: str) -> str:
    if tag not in (FRAME_TRANSFORMED, FRAME_ORIGINAL):
        raise ValueError(f"unknown frame tag {tag!r}")
    return tag


@dataclass
class RobotBelief:
    """A robot's pose estimate plus its own covariance block.

    The covariance lives in transformed coordinates for the transformed
    server-based filter and in original coordinates otherwise.
    """

    robot_id: int
    x_hat: Pose2
    P_own: np.ndarray
    frame_tag: str

    def __post_init__(self):
        _check_frame(self.frame_tag)
        self.P_own = np.asarray(self.P_own, dtype=float)
        if self.P_own.shape != (3, 3):
            raise ValueError("P_own must be 3x3")

    def check(self, sym_tol=1e-10, eig_tol=-1e-10):
        if np.max(np.abs(self.P_own - self.P_own.T)) > sym_tol:
            raise ValueError(f"robot {self.robot_id}: P_own not symmetric")
        if np.min(np.linalg.eigvalsh(self.P_own)) < eig_tol:
            raise ValueError(f"robot {self.robot_id}: P_own not PSD")


class CrossCovTable:
    """Server-side table of inter-robot cross-covariance blocks.

    Block (i, j) with i < j is stored; (j, i) is its transpose by
    construction. Blocks are dense 3x3 arrays.
    """

    def __init__(self, robot_ids, frame_tag: str):
        self.robot_ids = list(robot_ids)
        self.frame_tag = _check_frame(frame_tag)
        self._blocks: dict[tuple[int, int], np.ndarray] = {}

    def _key(self, i: int, j: int):
        if i == j:
            raise KeyError("cross-covariance table holds off-diagonal blocks only")
        if i not in self.robot_ids or j not in self.robot_ids:
            raise KeyError(f"unknown robot pair ({i}, {j})")
        return (i, j) if i < j else (j, i)

    def get(self, i: int, j: int) -> np.ndarray:
        key = self._key(i, j)
        if key not in self._blocks:
            raise KeyError(f"missing cross-covariance block {key}")
        block = self._blocks[key]
        return block if key == (i, j) else block.T

    def set(self, i: int, j: int, block) -> None:
        key = self._key(i, j)
        block = np.asarray(block, dtype=float)
        if block.shape != (3, 3):
            raise ValueError("cross-covariance block must be 3x3")
        self._blocks[key] = block if key == (i, j) else block.T

    def copy(self) -> "CrossCovTable":
        out = CrossCovTable(self.robot_ids, self.frame_tag)
        out._blocks = {k: v.copy() for k, v in self._blocks.items()}
        return out

    @classmethod
    def zeros(cls, robot_ids, frame_tag: str) -> "CrossCovTable":
        out = cls(robot_ids, frame_tag)
        ids = out.robot_ids
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                out._blocks[(ids[a], ids[b])] = np.zeros((3, 3))
        return out


@dataclass
class CorrectionMessage:
    """Server-to-robot correction: transformed-state shift r and covariance decrement Gamma."""

    robot_id: int
    r: np.ndarray
    Gamma: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float).reshape(3)
        self.Gamma = np.asarray(self.Gamma, dtype=float)
        if self.Gamma.shape != (3, 3):
            raise ValueError("Gamma must be 3x3")


@dataclass
class JointBelief:
    """Stacked poses of the whole team plus the joint covariance."""

    x_hat: np.ndarray  # (3N,)
    P: np.ndarray  # (3N, 3N)

    def __post_init__(self):
        self.x_hat = np.asarray(self.x_hat, dtype=float).ravel()
        self.P = np.asarray(self.P, dtype=float)
        n = self.x_hat.size
        if n % 3 != 0 or self.P.shape != (n, n):
            raise ValueError("joint belief dimensions inconsistent")

    @property
    def robot_count(self) -> int:
        return self.x_hat.size // 3

    def pose(self, i: int) -> Pose2:
        return Pose2.from_vector(self.x_hat[3 * i : 3 * i + 3])


def assemble_joint(beliefs, cross: CrossCovTable) -> JointBelief:
    """Stack per-robot beliefs and the server's cross blocks into a joint belief.

    Transformed-frame inputs are mapped back to original coordinates using
    each robot's current position estimate as the anchor.
    """
    beliefs = sorted(beliefs, key=lambda rb: rb.robot_id)
    n = len(beliefs)
    frames = {rb.frame_tag for rb in beliefs} | {cross.frame_tag}
    if len(frames) != 1:
        raise ValueError(f"inconsistent frame tags: {frames}")
    frame = frames.pop()
    x = np.concatenate([rb.x_hat.as_vector() for rb in beliefs])
    P = np.zeros((3 * n, 3 * n))
    for a, rb in enumerate(beliefs):
        P[3 * a : 3 * a + 3, 3 * a : 3 * a + 3] = rb.P_own
    for a in range(n):
        for b in range(a + 1, n):
            block = cross.get(beliefs[a].robot_id, beliefs[b].robot_id)
            P[3 * a : 3 * a + 3, 3 * b : 3 * b + 3] = block
            P[3 * b : 3 * b + 3, 3 * a : 3 * a + 3] = block.T
    if frame == FRAME_TRANSFORMED:
        anchors = [rb.x_hat.position for rb in beliefs]
        P = from_transformed_cov(P, anchors)
    return JointBelief(x_hat=x, P=P)
