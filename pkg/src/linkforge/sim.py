"""Batched joint-space simulator built from a MechanismModel and a variant.

Active closed chains keep all their bodies as coordinates and add soft loop
constraints. Serialized chains keep only their output joint: passive joints
are frozen at nominal and the actuator acts through the chain's linearized
ratio at the nominal configuration, with the dropped inertias reflected onto
the output.

Actuators are position-controlled: ``tau = kp (q_target - q_act) - kd qd_act``
in actuator space, clipped to the torque limit and mapped to coordinate
forces by the transpose of the actuator map ``S`` (``q_act = a0 + S (q - q0)``).
The robot base is supported, so joint dynamics carry no gravity load.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import (MechanismModel, VariantSpec, five_bar_linearization,
                       four_bar_nominal_ratio)
from .dynamics import (ConstraintSet, FusedConstraints, LinearConstraint, LoopTerm,
                       PlanarLoopConstraint, PolynomialConstraint, _raise_nonfinite,
                       constrained_acceleration)


@dataclass
class RobotPhysics:
    model: MechanismModel
    variant: VariantSpec
    coords: list
    q0: np.ndarray
    inertia: np.ndarray
    S: np.ndarray           # (n_act, n)
    a0: np.ndarray          # (n_act,)
    cset: ConstraintSet
    fused: FusedConstraints
    kp: float
    kd: float
    torque_limit: float
    _layout: object = None

    @property
    def n(self) -> int:
        return len(self.coords)

    def index(self, name) -> int:
        return self.coords.index(name)

    def actuator_positions(self, q):
        return self.a0 + (q - self.q0) @ self.S.T

    def actuator_velocities(self, qd):
        return qd @ self.S.T

    def kinematic(self, q):
        """Full kinematic joint vector (frozen joints at nominal), batched."""
        q = np.atleast_2d(q)
        out = np.broadcast_to(self.model.q_nom, (q.shape[0], len(self.model.joint_names))).copy()
        cols = [self.model.joint_index(c) for c in self.coords]
        out[:, cols] = q
        return out

    def drive_forces(self, q, qd, target, kp):
        qa = self.a0 + (q - self.q0) @ self.S.T
        va = qd @ self.S.T
        tau = kp * (target - qa) - self.kd * va
        np.clip(tau, -self.torque_limit, self.torque_limit, out=tau)
        return tau @ self.S, tau

    @property
    def layout(self):
        if self._layout is None:
            from .kernels import KernelLayout
            self._layout = KernelLayout(self)
        return self._layout

    def step(self, q, qd, target, kp, minv, dt, n_sub=1, step_index=None, compiled=True):
        """``n_sub`` semi-implicit Euler substeps with a held actuator target.

        Returns new (q, qd, tau) arrays, tau being the actuator torque of the
        last substep. ``kp`` and ``minv`` may be per-environment (B, .) arrays.
        ``compiled=False`` runs the reference array implementation.
        """
        if compiled:
            from .kernels import _step_kernel
            q = np.atleast_2d(np.asarray(q, dtype=float))
            B = q.shape[0]
            qT = np.ascontiguousarray(q.T)
            qdT = np.ascontiguousarray(np.atleast_2d(np.asarray(qd, dtype=float)).T)
            na = self.S.shape[0]
            tT = np.ascontiguousarray(np.broadcast_to(target, (B, na)).T, dtype=float)
            kT = np.ascontiguousarray(np.broadcast_to(kp, (B, na)).T, dtype=float)
            mT = np.ascontiguousarray(np.broadcast_to(minv, (B, self.n)).T, dtype=float)
            tau = np.empty_like(tT)
            _step_kernel(qT, qdT, tT, kT, float(self.kd), float(self.torque_limit), mT,
                         float(dt), int(n_sub), tau, *self.layout.args())
            q, qd = qT.T.copy(), qdT.T.copy()
            if not (np.isfinite(q).all() and np.isfinite(qd).all()):
                _raise_nonfinite(q, qd, self.fused, step_index)
            return q, qd, tau.T.copy()
        tau = None
        for _ in range(n_sub):
            forces, tau = self.drive_forces(q, qd, target, kp)
            qdd, _ = constrained_acceleration(q, qd, minv, forces, self.fused)
            qd = qd + dt * qdd
            q = q + dt * qd
        if not (np.isfinite(q).all() and np.isfinite(qd).all()):
            _raise_nonfinite(q, qd, self.fused, step_index)
        return q, qd, tau


def build_physics(model: MechanismModel, variant: VariantSpec | None = None) -> RobotPhysics:
    variant = variant or model.variant
    model = model.with_variant(variant)
    coords, inertia = [], []
    extra = {}

    def add(name, reflected=0.0):
        coords.append(name)
        inertia.append(model.inertia[name] + reflected)

    for m in model.mechanisms:
        if m.kind == "serial":
            add(m.joint)
        elif m.kind == "differential":
            if model.is_active(m):
                for j in m.rotors + m.outputs:
                    add(j)
            else:
                minv = m.params.inverse_matrix()
                rot = np.array([model.inertia[j] for j in m.rotors])
                refl = np.diag(minv.T @ np.diag(rot) @ minv)
                for j, r in zip(m.outputs, refl):
                    add(j, r)
        elif m.kind == "five_bar":
            if model.is_active(m):
                for j in [m.crank] + m.passive:
                    add(j)
            else:
                G = five_bar_linearization(model, m)
                extra[m.name] = G
                add(m.passive[0], model.inertia[m.crank] / G[0, 1] ** 2)
        elif m.kind == "four_bar":
            if model.is_active(m):
                names = [m.crank, m.output] if m.representation == "polynomial" else m.joints
                for j in names:
                    add(j)
            else:
                rho = four_bar_nominal_ratio(model, m)
                extra[m.name] = rho
                add(m.output, model.inertia[m.crank] / rho ** 2)

    n = len(coords)
    ix = {c: i for i, c in enumerate(coords)}
    q0 = np.array([model.q_nom[model.joint_index(c)] for c in coords])
    n_act = len(model.actuator_names)
    S = np.zeros((n_act, n))
    a0 = model.q_nom_act.copy()
    act = model.act_index
    cons = []

    for m in model.mechanisms:
        imp = getattr(m, "impedance", None)
        if m.kind == "serial":
            S[act(m.actuator), ix[m.joint]] = 1.0
        elif m.kind == "differential":
            M = m.params.matrix()
            if model.is_active(m):
                for a, r in zip(m.actuators, m.rotors):
                    S[act(a), ix[r]] = 1.0
                C = np.zeros((2, n))
                for i, o in enumerate(m.outputs):
                    C[i, ix[o]] = 1.0
                    for j, r in enumerate(m.rotors):
                        C[i, ix[r]] = -M[i, j]
                cons.append(LinearConstraint(m.name, C, [0.0, 0.0], imp))
            else:
                minv = m.params.inverse_matrix()
                for i, a in enumerate(m.actuators):
                    for j, o in enumerate(m.outputs):
                        S[act(a), ix[o]] = minv[i, j]
        elif m.kind == "five_bar":
            p = m.params
            if model.is_active(m):
                S[act(m.actuator), ix[m.crank]] = 1.0
                phi = p.frame_angle
                ox, oy = p.frame_offset
                terms = [LoopTerm(ix[m.theta1_joint], p.l1, 1.0, m.theta1_offset),
                         LoopTerm(ix[m.passive[0]], p.l2, 1.0, 0.0),
                         LoopTerm(ix[m.crank], p.l4, -1.0, m.theta4_offset + phi),
                         LoopTerm(ix[m.passive[1]], p.l3, -1.0, phi)]
                cons.append(PlanarLoopConstraint(m.name, terms, (-ox, -oy), imp))
            else:
                G = extra[m.name]
                S[act(m.actuator), ix[m.passive[0]]] = 1.0 / G[0, 1]
                S[act(m.actuator), ix[m.theta1_joint]] = -G[0, 0] / G[0, 1]
        elif m.kind == "four_bar":
            p = m.params
            if model.is_active(m):
                S[act(m.actuator), ix[m.crank]] = 1.0
                if m.representation == "polynomial":
                    cons.append(PolynomialConstraint(
                        m.name, ix[m.crank], ix[m.output], m.poly.a,
                        m.poly.x0 - m.input_offset, m.poly.y0 - m.output_offset, imp))
                else:
                    terms = [LoopTerm(ix[m.crank], p.L1, 1.0, m.input_offset),
                             LoopTerm(ix[m.coupler], p.L2, 1.0, 0.0),
                             LoopTerm(ix[m.output], p.L3, -1.0, m.output_offset)]
                    cons.append(PlanarLoopConstraint(m.name, terms, (-p.L0, 0.0), imp))
            else:
                S[act(m.actuator), ix[m.output]] = 1.0 / extra[m.name]

    cset = ConstraintSet(cons)
    return RobotPhysics(model, variant, coords, q0, np.array(inertia), S, a0, cset,
                        FusedConstraints(cset, n), model.kp, model.kd, model.torque_limit)


def foot_positions(phys: RobotPhysics, q):
    """Foot points in the base frame for each leg, shape (B, n_legs, 3).

    The foot hangs ``foot_length`` along the five-bar output link from the
    knee; hip roll (about x) and yaw (about z) rotate the leg plane.
    """
    model = phys.model
    q = np.atleast_2d(q)
    kin = None
    out = []
    for spec in model.legs.values():
        m = model.mechanism(spec["five_bar"])
        p = m.params

        def col(name):
            nonlocal kin
            if name in phys.coords:
                return q[:, phys.index(name)]
            if kin is None:
                kin = phys.kinematic(q)
            return kin[:, model.joint_index(name)]

        t1 = col(m.theta1_joint) + m.theta1_offset
        t2 = col(m.passive[0])
        px = p.l1 * np.cos(t1) + m.foot_length * np.cos(t2)
        py = p.l1 * np.sin(t1) + m.foot_length * np.sin(t2)
        R = p.T_A.rotation
        v = px[:, None] * R[:, 0] + py[:, None] * R[:, 1] + p.T_A.translation
        roll, yaw = col(spec["hip_roll"]), col(spec["hip_yaw"])
        cr, sr, cy, sy = np.cos(roll), np.sin(roll), np.cos(yaw), np.sin(yaw)
        # R_z(yaw) R_x(roll) v
        x1, y1, z1 = v[:, 0], cr * v[:, 1] - sr * v[:, 2], sr * v[:, 1] + cr * v[:, 2]
        foot = np.stack([cy * x1 - sy * y1, sy * x1 + cy * y1, z1], axis=1)
        out.append(foot + np.asarray(spec.get("hip_offset_m", [0.0, 0.0, 0.0])))
    return np.stack(out, axis=1)


def five_bar_singularity(phys: RobotPhysics, q):
    """Per-leg relative singularity metric of the active five-bars, (B, n_legs)."""
    model = phys.model
    q = np.atleast_2d(q)
    cols = []
    for spec in model.legs.values():
        m = model.mechanism(spec["five_bar"])
        if not model.with_variant(phys.variant).is_active(m):
            cols.append(np.ones(q.shape[0]))
            continue
        t2 = q[:, phys.index(m.passive[0])]
        t3 = q[:, phys.index(m.passive[1])]
        cols.append(np.abs(np.sin(t2 - t3 - m.params.frame_angle)))
    return np.stack(cols, axis=1) if cols else np.ones((q.shape[0], 0))

