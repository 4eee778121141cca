"""Five-bar leg linkage.

Two serial chains share the endpoint: chain A-B-C with links l1 (actuated,
angle theta1) and l2 (passive, theta2), chain F-E-D with links l4 (actuated,
theta4) and l3 (passive, theta3). All angles are absolute in their base
frame. The loop is closed when C and D coincide in 3D.

Internally the closure is solved in the plane of base A; the F frame must lie
in that plane (checked on construction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .closure import DEFAULT_MAX_ITER, DEFAULT_TOL, newton2
from .errors import NoConvergence, SingularJacobian, ValidationError
from .geometry import Transform3, lift_to_3d, rot2_apply

SINGULAR_THRESHOLD = 1e-6  # relative to l2 * l3


@dataclass(frozen=True)
class FiveBarParams:
    l1: float
    l2: float
    l3: float
    l4: float
    l0: float = 0.0
    T_A: Transform3 = field(default_factory=Transform3.identity)
    T_F: Transform3 | None = None

    def __post_init__(self):
        for name in ("l1", "l2", "l3", "l4"):
            if not getattr(self, name) > 0:
                raise ValidationError(name, f"link length must be > 0, got {getattr(self, name)}")
        if not self.l0 >= 0:
            raise ValidationError("l0", f"base separation must be >= 0, got {self.l0}")
        if self.T_F is None:
            shift = Transform3(np.eye(3), np.array([self.l0, 0.0, 0.0]))
            object.__setattr__(self, "T_F", self.T_A.compose(shift))
        rel = self.T_A.inverse().compose(self.T_F)
        if not rel.is_planar(1e-9):
            raise ValidationError("T_F", "base F must lie in the plane of base A")
        sep = float(np.hypot(rel.translation[0], rel.translation[1]))
        if abs(sep - self.l0) > 1e-9:
            raise ValidationError("l0", f"base separation {sep:.6g} disagrees with l0={self.l0}")
        object.__setattr__(self, "_phi", math.atan2(rel.rotation[1, 0], rel.rotation[0, 0]))
        object.__setattr__(self, "_off", (float(rel.translation[0]), float(rel.translation[1])))

    @property
    def frame_angle(self) -> float:
        """Rotation of F relative to A about the shared normal."""
        return self._phi

    @property
    def frame_offset(self) -> tuple[float, float]:
        return self._off


@dataclass(frozen=True)
class FiveBarConfig:
    theta1: float
    theta2: float
    theta3: float
    theta4: float

    @property
    def actuated(self):
        return (self.theta1, self.theta4)

    @property
    def passive(self):
        return (self.theta2, self.theta3)


def _planar_C(p, t1, t2):
    return (p.l1 * math.cos(t1) + p.l2 * math.cos(t2),
            p.l1 * math.sin(t1) + p.l2 * math.sin(t2))


def _planar_D_in_A(p, t4, t3):
    phi = p._phi
    ox, oy = p._off
    return (ox + p.l4 * math.cos(t4 + phi) + p.l3 * math.cos(t3 + phi),
            oy + p.l4 * math.sin(t4 + phi) + p.l3 * math.sin(t3 + phi))


def chain_endpoint_C(p: FiveBarParams, theta1, theta2) -> np.ndarray:
    pc = rot2_apply(theta1, (p.l1, 0.0)) + rot2_apply(theta2, (p.l2, 0.0))
    return lift_to_3d(p.T_A, pc)


def chain_endpoint_D(p: FiveBarParams, theta4, theta3) -> np.ndarray:
    pd = rot2_apply(theta4, (p.l4, 0.0)) + rot2_apply(theta3, (p.l3, 0.0))
    return lift_to_3d(p.T_F, pd)


def closure_residual(p: FiveBarParams, c: FiveBarConfig) -> np.ndarray:
    """p_C - p_D in the base frame."""
    return chain_endpoint_C(p, c.theta1, c.theta2) - chain_endpoint_D(p, c.theta4, c.theta3)


def planar_residual(p: FiveBarParams, c: FiveBarConfig) -> tuple[float, float]:
    cx, cy = _planar_C(p, c.theta1, c.theta2)
    dx, dy = _planar_D_in_A(p, c.theta4, c.theta3)
    return cx - dx, cy - dy


def _passive_fun(p, t1, t4):
    phi = p._phi
    ox, oy = p._off
    l1c, l1s = p.l1 * math.cos(t1), p.l1 * math.sin(t1)
    l4c, l4s = p.l4 * math.cos(t4 + phi), p.l4 * math.sin(t4 + phi)
    bx, by = l1c - ox - l4c, l1s - oy - l4s

    def fun(t2, t3):
        c2, s2 = math.cos(t2), math.sin(t2)
        c3, s3 = math.cos(t3 + phi), math.sin(t3 + phi)
        r0 = bx + p.l2 * c2 - p.l3 * c3
        r1 = by + p.l2 * s2 - p.l3 * s3
        return r0, r1, -p.l2 * s2, p.l3 * s3, p.l2 * c2, -p.l3 * c3

    return fun, (bx, by)


def solve_passive(p: FiveBarParams, theta1, theta4, guess, tol=DEFAULT_TOL,
                  max_iter=DEFAULT_MAX_ITER) -> FiveBarConfig:
    """Close the loop for given actuated angles, starting from ``guess``.

    The branch is whichever one Newton's method reaches from the guess, so
    warm-starting from the previous configuration keeps the assembly mode.
    """
    fun, (bx, by) = _passive_fun(p, theta1, theta4)
    # distance between joints B and E must be bridgeable by l2 and l3
    d = math.hypot(bx, by)
    if d > p.l2 + p.l3 + 1e-12 or d < abs(p.l2 - p.l3) - 1e-12:
        raise NoConvergence(
            f"actuated pair ({theta1:.6g}, {theta4:.6g}) unreachable: joint gap {d:.6g} "
            f"outside [{abs(p.l2 - p.l3):.6g}, {p.l2 + p.l3:.6g}]", "five_bar")
    t2, t3, _, _ = newton2(fun, guess, tol=tol, max_iter=max_iter, mechanism="five_bar")
    return FiveBarConfig(float(theta1), t2, t3, float(theta4))


def _jacobians(p, c):
    phi = p._phi
    e1 = (-p.l1 * math.sin(c.theta1), p.l1 * math.cos(c.theta1))
    e2 = (-p.l2 * math.sin(c.theta2), p.l2 * math.cos(c.theta2))
    e3 = (-p.l3 * math.sin(c.theta3 + phi), p.l3 * math.cos(c.theta3 + phi))
    e4 = (-p.l4 * math.sin(c.theta4 + phi), p.l4 * math.cos(c.theta4 + phi))
    # residual = C - D, columns are d/d(theta)
    j_act = np.array([[e1[0], -e4[0]], [e1[1], -e4[1]]])  # (theta1, theta4)
    j_pas = np.array([[e2[0], -e3[0]], [e2[1], -e3[1]]])  # (theta2, theta3)
    return j_act, j_pas, np.array(e1), np.array(e2)


def singularity_metric(p: FiveBarParams, c: FiveBarConfig) -> float:
    """|det| of the closure Jacobian with respect to the passive angles."""
    return abs(p.l2 * p.l3 * math.sin(c.theta2 - c.theta3 - p._phi))


def is_near_singular(p: FiveBarParams, c: FiveBarConfig, rel=SINGULAR_THRESHOLD) -> bool:
    return singularity_metric(p, c) < rel * p.l2 * p.l3


def passive_sensitivity(p: FiveBarParams, c: FiveBarConfig) -> np.ndarray:
    """d(theta2, theta3)/d(theta1, theta4) on the closure manifold."""
    j_act, j_pas, _, _ = _jacobians(p, c)
    if singularity_metric(p, c) < 1e-14 * p.l2 * p.l3:
        raise SingularJacobian("passive closure Jacobian is singular", "five_bar")
    return -np.linalg.solve(j_pas, j_act)


def endpoint_jacobian(p: FiveBarParams, c: FiveBarConfig) -> np.ndarray:
    """d(p_C)/d(theta1, theta4) in the base frame, shape (3, 2)."""
    sens = passive_sensitivity(p, c)
    _, _, e1, e2 = _jacobians(p, c)
    planar = np.column_stack([e1 + e2 * sens[0, 0], e2 * sens[0, 1]])
    return p.T_A.rotation[:, :2] @ planar


def endpoint(p: FiveBarParams, c: FiveBarConfig) -> np.ndarray:
    return chain_endpoint_C(p, c.theta1, c.theta2)


def parallelogram_config(theta1, theta4) -> FiveBarConfig:
    """Closed configuration of the l1 = l3, l2 = l4, l0 = 0 parallelogram."""
    return FiveBarConfig(float(theta1), float(theta4), float(theta1), float(theta4))


def sweep(p: FiveBarParams, actuated_path, start: FiveBarConfig):
    """Warm-started solves along a sequence of (theta1, theta4) pairs."""
    out = []
    guess = start.passive
    for t1, t4 in actuated_path:
        c = solve_passive(p, t1, t4, guess)
        out.append(c)
        guess = c.passive
    return out


def with_frames(p: FiveBarParams, T: Transform3) -> FiveBarParams:
    """Same linkage with both bases moved by ``T``."""
    return replace(p, T_A=T.compose(p.T_A), T_F=T.compose(p.T_F))
