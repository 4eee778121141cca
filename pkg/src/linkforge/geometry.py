"""Planar rotations, rigid transforms and a central-difference Jacobian."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError


@dataclass(frozen=True)
class Rot2:
    angle: float

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def __matmul__(self, other: "Rot2") -> "Rot2":
        return Rot2(self.angle + other.angle)

    def inverse(self) -> "Rot2":
        return Rot2(-self.angle)


@dataclass(frozen=True)
class PlanarPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("PlanarPoint coordinates must be finite")


@dataclass(frozen=True)
class Transform3:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Transform3":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "Transform3":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, p) -> np.ndarray:
        return self.rotation @ np.asarray(p, dtype=float) + self.translation

    def compose(self, other: "Transform3") -> "Transform3":
        """``self * other``: apply ``other`` first."""
        return Transform3(self.rotation @ other.rotation,
                          self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Transform3":
        rt = self.rotation.T
        return Transform3(rt, -rt @ self.translation)

    def is_planar(self, tol: float = 1e-12) -> bool:
        """True when the transform keeps the z = 0 plane in place."""
        r = self.rotation
        return (abs(r[2, 0]) < tol and abs(r[2, 1]) < tol and abs(r[0, 2]) < tol
                and abs(r[1, 2]) < tol and abs(self.translation[2]) < tol)


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot2_apply(r: Rot2 | float, v) -> np.ndarray:
    angle = r.angle if isinstance(r, Rot2) else float(r)
    c, s = math.cos(angle), math.sin(angle)
    x, y = float(v[0]), float(v[1])
    return np.array([c * x - s * y, s * x + c * y])


def lift_to_3d(T: Transform3, p) -> np.ndarray:
    """Embed a planar point at z = 0 and map it through ``T``."""
    if isinstance(p, PlanarPoint):
        x, y = p.x, p.y
    else:
        x, y = float(p[0]), float(p[1])
    return T.rotation[:, 0] * x + T.rotation[:, 1] * y + T.translation


def finite_diff_jacobian(f, x, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x``; shape (m, n)."""
    if not h > 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    if not np.all(np.isfinite(f0)):
        raise EvaluationError(f"non-finite function value at x={x}")
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        fp = np.atleast_1d(np.asarray(f(xp), dtype=float)).reshape(-1)
        fm = np.atleast_1d(np.asarray(f(xm), dtype=float)).reshape(-1)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise EvaluationError(f"non-finite function value near x={x} (coordinate {j})")
        jac[:, j] = (fp - fm) / (2.0 * h)
    return jac


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi
