"""SE(2) pose algebra: composition, inversion, wrapped angles.

Positions are millimetres, angles radians, wrapped to [-pi, pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap a finite angle to [-pi, pi).  Non-finite input is a contract violation."""
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    return (theta + math.pi) % _TWO_PI - math.pi


def wrap_angles(theta) -> np.ndarray:
    """Vectorised wrap to [-pi, pi); skips the finiteness guard."""
    return (np.asarray(theta, dtype=float) + math.pi) % _TWO_PI - math.pi


def angle_diff(a: float, b: float) -> float:
    """Shortest signed difference a - b, continuous across the +-pi seam."""
    return wrap_angle(a - b)


@dataclass(frozen=True)
class Pose2:
    """Rigid 2D pose.  theta is always stored wrapped."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @staticmethod
    def identity() -> "Pose2":
        return Pose2(0.0, 0.0, 0.0)

    @property
    def p(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def compose(self, other: "Pose2") -> "Pose2":
        """self followed by other expressed in self's frame (group product)."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), -self.theta)

    def transform_point(self, pt) -> np.ndarray:
        """Map a point from this pose's frame into the parent frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        pt = np.asarray(pt, dtype=float)
        return np.array([self.x + c * pt[0] - s * pt[1], self.y + s * pt[0] + c * pt[1]])

    def as_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @staticmethod
    def from_vector(v) -> "Pose2":
        return Pose2(float(v[0]), float(v[1]), float(v[2]))


def compose_many(a, b) -> np.ndarray:
    """Broadcasting group product on (..., 3) pose arrays [x, y, theta]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    x = a[..., 0] + c * b[..., 0] - s * b[..., 1]
    y = a[..., 1] + s * b[..., 0] + c * b[..., 1]
    th = wrap_angles(a[..., 2] + b[..., 2])
    return np.stack([x, y, th], axis=-1)


def inverse_many(a) -> np.ndarray:
    """Broadcasting inverse on (..., 3) pose arrays."""
    a = np.asarray(a, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    x = -(c * a[..., 0] + s * a[..., 1])
    y = -(-s * a[..., 0] + c * a[..., 1])
    return np.stack([x, y, wrap_angles(-a[..., 2])], axis=-1)


def rotate_many(theta, vx, vy):
    """Rotate vectors (vx, vy) by angles theta; returns (x, y) arrays."""
    c, s = np.cos(theta), np.sin(theta)
    return c * vx - s * vy, s * vx + c * vy
