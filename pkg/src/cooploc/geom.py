"""SE(2) scalar and matrix primitives shared by every other module."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["wrap_angle", "rot", "skew_J", "Pose2"]

_TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi].

    The boundary maps to +pi so that the convention is reproducible:
    wrap_angle(pi) == pi and wrap_angle(-pi) == pi.
    """
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    wrapped = theta - _TWO_PI * math.floor((theta + math.pi) / _TWO_PI)
    # floor arithmetic yields [-pi, pi); remap the lower boundary
    if wrapped <= -math.pi:
        wrapped += _TWO_PI
    return wrapped


def rot(theta: float) -> np.ndarray:
    """2x2 rotation matrix [[cos, -sin], [sin, cos]]."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def skew_J() -> np.ndarray:
    """The 2x2 skew matrix J = [[0, -1], [1, 0]] (equals rot(pi/2))."""
    return np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class Pose2:
    """A planar pose: position (meters) plus heading (radians, wrapped)."""

    position: np.ndarray
    heading: float

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        if p.shape != (2,):
            raise ValueError(f"position must be a 2-vector, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("position components must be finite")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    def as_vector(self) -> np.ndarray:
        return np.array([self.position[0], self.position[1], self.heading])

    @classmethod
    def from_vector(cls, v) -> "Pose2":
        v = np.asarray(v, dtype=float)
        return cls(position=v[:2], heading=float(v[2]))
