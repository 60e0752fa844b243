"""Observability auditing over recorded Jacobian sequences.

The local observability matrix stacks H_1; H_2 F_1; ...; H_k F_{k-1}...F_1.
For the transformed system the propagation factors are identities, so the
stack collapses to the raw measurement Jacobians and annihilates the
block-stacked identity basis; for the estimate-linearized original system
the accumulated prior-vs-posterior position corrections generically shrink
the unobservable subspace from 3 to 2 dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import skew_J

__all__ = [
    "ObsMatrixSeq",
    "SubspaceBasis",
    "build_obs_matrix",
    "nullspace_residual",
    "numerical_unobs_dim",
    "standard_unobs_basis",
    "transformed_unobs_basis",
    "delta_p_series",
]


@dataclass
class ObsMatrixSeq:
    """Ordered (F, H) pairs recorded from a run.

    Entry k holds the block-diagonal propagation Jacobian that carried the
    error state into step k (ignored for the first entry) and the stacked
    measurement Jacobian observed at step k (possibly None when no
    measurement happened).
    """

    robot_count: int
    frame_tag: str = "original"
    entries: list = field(default_factory=list)  # list of (F | None, H | None)

    def append(self, F, H):
        d = 3 * self.robot_count
        if F is not None:
            F = np.asarray(F, dtype=float)
            if F.shape != (d, d):
                raise ValueError(f"F must be {d}x{d}, got {F.shape}")
        if H is not None:
            H = np.asarray(H, dtype=float)
            if H.ndim != 2 or H.shape[1] != d:
                raise ValueError(f"H must have {d} columns, got {H.shape}")
        self.entries.append((F, H))


def build_obs_matrix(seq: ObsMatrixSeq) -> np.ndarray:
    """Stack H_k times the accumulated propagation product into one matrix."""
    if not seq.entries:
        raise ValueError("sequence must contain at least one entry")
    d = 3 * seq.robot_count
    prod = np.eye(d)
    rows = []
    for idx, (F, H) in enumerate(seq.entries):
        if idx > 0 and F is not None:
            prod = F @ prod
        if H is not None:
            rows.append(H @ prod)
    if not rows:
        raise ValueError("sequence contains no measurement Jacobians")
    return np.vstack(rows)


@dataclass
class SubspaceBasis:
    """Columns spanning a claimed unobservable subspace."""

    B: np.ndarray

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=float)
        if self.B.ndim != 2:
            raise ValueError("basis must be a matrix")
        if self.B.shape[1] and np.linalg.matrix_rank(self.B) != self.B.shape[1]:
            raise ValueError("basis columns must be linearly independent")

    @property
    def dim(self) -> int:
        return self.B.shape[1]


def nullspace_residual(O: np.ndarray, basis: SubspaceBasis) -> float:
    """Relative size of O @ B: max-abs of the product over max(1, max-abs of O)."""
    B = basis.B if isinstance(basis, SubspaceBasis) else np.asarray(basis)
    if B.shape[1] == 0:
        return 0.0
    if O.shape[1] != B.shape[0]:
        raise ValueError("incompatible dimensions")
    return float(np.max(np.abs(O @ B)) / max(1.0, np.max(np.abs(O))))


def numerical_unobs_dim(O: np.ndarray, rel_tol: float = 1e-8, gap: float = 1e4):
    """Dimension of the numerical null space of the observability matrix.

    Rank counts singular values above rel_tol * sigma_max, and the call is
    confident only when the singular spectrum has a clear gap at the cut;
    otherwise returns None (indeterminate).
    """
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    O = np.asarray(O, dtype=float)
    d = O.shape[1]
    sv = np.linalg.svd(O, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return d
    rank = int(np.sum(sv > rel_tol * sv[0]))
    if 0 < rank < sv.size:
        if sv[rank] > 0 and sv[rank - 1] / sv[rank] < gap:
            return None
    return d - rank


def standard_unobs_basis(initial_prior_positions) -> SubspaceBasis:
    """Unobservable basis of the correctly linearized original system.

    One [I2, J p; 0, 1] block per robot, anchored at the first prior
    position estimates.
    """
    J = skew_J()
    blocks = []
    for p in initial_prior_positions:
        p = np.asarray(p, dtype=float)
        blk = np.eye(3)
        blk[:2, 2] = J @ p
        blocks.append(blk)
    return SubspaceBasis(np.vstack(blocks))


def transformed_unobs_basis(robot_count: int) -> SubspaceBasis:
    """Unobservable basis of the transformed system: stacked identities."""
    if robot_count < 1:
        raise ValueError("robot_count must be at least 1")
    return SubspaceBasis(np.vstack([np.eye(3)] * robot_count))


def delta_p_series(prior_positions, post_positions) -> np.ndarray:
    """Cumulative per-robot position corrections over a run.

    Both inputs are (steps, robots, 2) arrays of prior and posterior
    position estimates; the output is the running sum of their differences.
    """
    prior = np.asarray(prior_positions, dtype=float)
    post = np.asarray(post_positions, dtype=float)
    if prior.shape != post.shape:
        raise ValueError("prior and posterior series must have equal shapes")
    return np.cumsum(post - prior, axis=0)
