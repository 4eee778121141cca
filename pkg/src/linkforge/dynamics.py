"""Soft equality-constraint dynamics with an impedance deadband.

Every constraint row with violation ``r`` and velocity ``v`` is driven to the
constraint-space acceleration

    a_c1 = (1 - D(r)) a_c0 - D(r) (b_v v + k_v r)

where ``a_c0`` is the acceleration the row would see without any constraint
force. The constraint forces that realise ``a_c1`` exactly are found through
the constraint-space inverse inertia ``A = J M^-1 J^T`` and applied through
``M^-1 J^T``. Integration is semi-implicit Euler.

All arrays carry a leading batch axis ``(B, ...)``; unbatched inputs are
promoted.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFinite, ValidationError


@dataclass(frozen=True)
class ImpedanceParams:
    k_v: float = 1e4
    b_v: float = 200.0
    deadband: float = 0.0
    d_min: float = 0.9
    d_max: float = 0.95
    width: float = 1e-3
    midpoint: float = 5e-4

    def __post_init__(self):
        if not 0.0 <= self.d_min <= self.d_max <= 1.0:
            raise ValidationError("impedance", f"need 0 <= d_min <= d_max <= 1, got "
                                  f"({self.d_min}, {self.d_max})")
        if self.k_v < 0 or self.b_v < 0:
            raise ValidationError("impedance", "k_v and b_v must be >= 0")
        if self.deadband < 0:
            raise ValidationError("impedance.deadband", "must be >= 0")
        if not self.width > 0:
            raise ValidationError("impedance.width", "must be > 0")
        if self.midpoint < self.deadband:
            raise ValidationError("impedance.midpoint", "must be >= deadband")

    @property
    def transition(self) -> tuple[float, float]:
        """|r| interval over which D rises from d_min to d_max."""
        return max(self.deadband, self.midpoint - self.width), self.midpoint + self.width

    @classmethod
    def from_dict(cls, d) -> "ImpedanceParams":
        keys = {"k_v": "k_v", "b_v": "b_v", "deadband": "deadband", "d_min": "d_min",
                "d_max": "d_max", "width": "width", "midpoint": "midpoint"}
        return cls(**{keys[k]: float(v) for k, v in d.items() if k in keys})


def backlash_impedance(deadband, k_v=1e4, b_v=200.0, d_max=0.95) -> ImpedanceParams:
    """Impedance that is transparent inside +-deadband and saturates by 1.5x it.

    A zero deadband degenerates continuously to an ordinary stiff constraint.
    """
    width = max(0.25 * deadband, 1e-9)
    return ImpedanceParams(k_v=k_v, b_v=b_v, deadband=deadband, d_min=0.0, d_max=d_max,
                           width=width, midpoint=deadband + width)


def _smoothstep5(s):
    # Horner rounding can overshoot 1 just below s = 1
    return np.minimum(s * s * s * (10.0 + s * (-15.0 + 6.0 * s)), 1.0)


def impedance(params: ImpedanceParams, r):
    """D(r): d_min on the deadband plateau, quintic rise, d_max beyond."""
    lo, hi = params.transition
    s = np.clip((np.abs(r) - lo) / (hi - lo), 0.0, 1.0)
    out = params.d_min + (params.d_max - params.d_min) * _smoothstep5(s)
    return float(out) if np.ndim(out) == 0 else out


def constraint_accel(params: ImpedanceParams, r, v, a_c0, D=None):
    if D is None:
        D = impedance(params, r)
    return (1.0 - D) * a_c0 - D * (params.b_v * v + params.k_v * r)


# --------------------------------------------------------------------------
# constraints


class Constraint:
    """A block of residual rows over the generalized coordinates.

    Subclasses provide ``residual``, ``jacobian`` and ``bias`` (J-dot times
    qdot), all batched.
    """

    name: str = "constraint"
    rows: int = 0
    impedance: ImpedanceParams

    def residual(self, q):
        raise NotImplementedError

    def jacobian(self, q):
        raise NotImplementedError

    def bias(self, q, qd):
        raise NotImplementedError


class LinearConstraint(Constraint):
    """r = C q - offset."""

    def __init__(self, name, C, offset, impedance: ImpedanceParams):
        self.name = name
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.offset = np.asarray(offset, dtype=float).reshape(-1)
        self.rows = self.C.shape[0]
        self.impedance = impedance

    def residual(self, q):
        return np.atleast_2d(q) @ self.C.T - self.offset

    def jacobian(self, q):
        q = np.atleast_2d(q)
        return np.broadcast_to(self.C, (q.shape[0],) + self.C.shape).copy()

    def bias(self, q, qd):
        return np.zeros((np.atleast_2d(q).shape[0], self.rows))


@dataclass(frozen=True)
class LoopTerm:
    """One link vector ``sign * length * e(q[index] + offset)``."""

    index: int
    length: float
    sign: float = 1.0
    offset: float = 0.0


class PlanarLoopConstraint(Constraint):
    """Two rows: the planar sum of link vectors plus a constant must vanish."""

    def __init__(self, name, terms, constant, impedance: ImpedanceParams):
        self.name = name
        self.terms = list(terms)
        self.constant = np.asarray(constant, dtype=float).reshape(2)
        self.rows = 2
        self.impedance = impedance
        self._idx = np.array([t.index for t in self.terms])
        if len(set(self._idx.tolist())) != len(self._idx):
            raise ValueError(f"{name}: a coordinate appears in two loop terms")
        self._len = np.array([t.sign * t.length for t in self.terms])
        self._off = np.array([t.offset for t in self.terms])

    def _trig(self, q):
        ang = np.atleast_2d(q)[:, self._idx] + self._off
        return np.cos(ang) * self._len, np.sin(ang) * self._len

    def residual(self, q):
        lc, ls = self._trig(q)
        return np.stack([lc.sum(1), ls.sum(1)], axis=1) + self.constant

    def jacobian(self, q):
        q = np.atleast_2d(q)
        lc, ls = self._trig(q)
        J = np.zeros((q.shape[0], 2, q.shape[1]))
        J[:, 0, self._idx] = -ls
        J[:, 1, self._idx] = lc
        return J

    def bias(self, q, qd):
        lc, ls = self._trig(q)
        w2 = np.atleast_2d(qd)[:, self._idx] ** 2
        return -np.stack([(lc * w2).sum(1), (ls * w2).sum(1)], axis=1)


class PolynomialConstraint(Constraint):
    """One row: q_out - y0 - sum_k a_k (q_in - x0)^k."""

    def __init__(self, name, index_in, index_out, a, x0, y0, impedance: ImpedanceParams):
        self.name = name
        self.i_in, self.i_out = int(index_in), int(index_out)
        self.a = np.asarray(a, dtype=float)
        self.x0, self.y0 = float(x0), float(y0)
        self.rows = 1
        self.impedance = impedance
        k = np.arange(len(self.a))
        self._d1 = (self.a * k)[1:]
        self._d2 = (self.a * k * (k - 1))[2:]

    def _poly(self, coefs, dx):
        acc = np.zeros_like(dx)
        for c in coefs[::-1]:
            acc = acc * dx + c
        return acc

    def residual(self, q):
        q = np.atleast_2d(q)
        dx = q[:, self.i_in] - self.x0
        return (q[:, self.i_out] - self.y0 - self._poly(self.a, dx))[:, None]

    def jacobian(self, q):
        q = np.atleast_2d(q)
        dx = q[:, self.i_in] - self.x0
        J = np.zeros((q.shape[0], 1, q.shape[1]))
        J[:, 0, self.i_in] = -self._poly(self._d1, dx)
        J[:, 0, self.i_out] = 1.0
        return J

    def bias(self, q, qd):
        q, qd = np.atleast_2d(q), np.atleast_2d(qd)
        dx = q[:, self.i_in] - self.x0
        return (-self._poly(self._d2, dx) * qd[:, self.i_in] ** 2)[:, None]


class ConstraintSet:
    """Stacked constraint blocks with per-row impedance parameters."""

    def __init__(self, constraints=()):
        self.constraints = list(constraints)
        self._refresh()

    def _refresh(self):
        self.rows = sum(c.rows for c in self.constraints)
        imps = [c.impedance for c in self.constraints for _ in range(c.rows)]
        self.row_names = [f"{c.name}[{i}]" for c in self.constraints for i in range(c.rows)]
        self.k = np.array([p.k_v for p in imps])
        self.b = np.array([p.b_v for p in imps])
        self.d_min = np.array([p.d_min for p in imps])
        self.d_max = np.array([p.d_max for p in imps])
        lo_hi = np.array([p.transition for p in imps]).reshape(-1, 2)
        self.lo, self.hi = lo_hi[:, 0], lo_hi[:, 1]

    def add(self, c: Constraint):
        self.constraints.append(c)
        self._refresh()

    def __len__(self):
        return len(self.constraints)

    def impedance(self, r):
        s = np.clip((np.abs(r) - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        return self.d_min + (self.d_max - self.d_min) * _smoothstep5(s)

    def residual(self, q):
        q = np.atleast_2d(q)
        if not self.constraints:
            return np.zeros((q.shape[0], 0))
        return np.concatenate([c.residual(q) for c in self.constraints], axis=1)

    def jacobian(self, q):
        q = np.atleast_2d(q)
        if not self.constraints:
            return np.zeros((q.shape[0], 0, q.shape[1]))
        return np.concatenate([c.jacobian(q) for c in self.constraints], axis=1)

    def bias(self, q, qd):
        q = np.atleast_2d(q)
        if not self.constraints:
            return np.zeros((q.shape[0], 0))
        return np.concatenate([c.bias(q, qd) for c in self.constraints], axis=1)

    def evaluate(self, q, qd):
        return self.residual(q), self.jacobian(q), self.bias(q, qd)


# --------------------------------------------------------------------------
# state and integration


@dataclass
class DynState:
    q: np.ndarray
    qdot: np.ndarray
    mass: np.ndarray
    forces: np.ndarray | None = None
    t: float = 0.0

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.qdot = np.atleast_2d(np.asarray(self.qdot, dtype=float))
        self.mass = np.asarray(self.mass, dtype=float)
        if self.forces is None:
            self.forces = np.zeros_like(self.q)
        self.forces = np.broadcast_to(np.asarray(self.forces, dtype=float), self.q.shape)
        n = self.q.shape[1]
        if self.mass.ndim == 1:
            if self.mass.shape != (n,) or np.any(self.mass <= 0):
                raise ValidationError("mass", "diagonal mass must be positive with one entry per coordinate")
        elif self.mass.shape == (n, n):
            if not np.allclose(self.mass, self.mass.T) or np.any(np.linalg.eigvalsh(self.mass) <= 0):
                raise ValidationError("mass", "dense mass matrix must be symmetric positive definite")
        else:
            raise ValidationError("mass", f"bad shape {self.mass.shape} for {n} coordinates")

    def inverse_mass(self):
        if self.mass.ndim == 1:
            return 1.0 / self.mass
        return np.linalg.inv(self.mass)


def kinetic_energy(state: DynState) -> np.ndarray:
    qd = state.qdot
    if state.mass.ndim == 1:
        return 0.5 * np.sum(state.mass * qd * qd, axis=1)
    return 0.5 * np.einsum("bi,ij,bj->b", qd, state.mass, qd)


def constrained_acceleration(q, qd, minv, forces, cset: ConstraintSet, check=False,
                             dense=False):
    """Joint accelerations under the soft constraints; also returns row data.

    ``minv`` is the diagonal of M^-1 (shape (n,) or (B, n)), or with
    ``dense=True`` a full (n, n) inverse.
    """
    a_free = forces @ minv.T if dense else forces * minv
    if cset.rows == 0:
        return a_free, None
    r, J, bias = cset.evaluate(q, qd)
    v = np.einsum("bmn,bn->bm", J, qd)
    a_c0 = np.einsum("bmn,bn->bm", J, a_free) + bias
    D = cset.impedance(r)
    a_c1 = (1.0 - D) * a_c0 - D * (cset.b * v + cset.k * r)
    MJt = np.einsum("nk,bmk->bnm", minv, J) if dense else minv[..., :, None] * np.swapaxes(J, 1, 2)
    A = J @ MJt
    lam = np.linalg.solve(A, (a_c1 - a_c0)[..., None])[..., 0]
    qdd = a_free + np.einsum("bnm,bm->bn", MJt, lam)
    if check:
        got = np.einsum("bmn,bn->bm", J, qdd) + bias
        ident = got + D * (cset.b * v + cset.k * r) - (1.0 - D) * a_c0
        scale = 1.0 + np.abs(a_c0) + np.abs(cset.k * r) + np.abs(cset.b * v)
        assert np.all(np.abs(ident) <= 1e-8 * scale), "constraint acceleration identity violated"
    return qdd, (r, v, D, a_c0, a_c1)


def _raise_nonfinite(q, qd, cset, step_index=None):
    name = None
    if cset.rows:
        with np.errstate(all="ignore"):
            r = cset.residual(np.nan_to_num(q))
        bad = np.argmax(np.max(np.abs(np.nan_to_num(r, nan=np.inf)), axis=0))
        name = cset.row_names[bad]
    raise NonFinite(
        f"non-finite state after integration"
        + (f" at step {step_index}" if step_index is not None else "")
        + (f"; worst constraint {name}" if name else "")
        + "; reduce dt or constraint stiffness", step=step_index, constraint=name)


def step(state: DynState, constraints: ConstraintSet, dt: float, check=False,
         step_index=None) -> DynState:
    """One semi-implicit Euler step: velocities first, then positions."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    minv = state.inverse_mass()
    # overflow is caught by the finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        qdd, _ = constrained_acceleration(state.q, state.qdot, minv, state.forces, constraints,
                                          check, dense=state.mass.ndim == 2)
        qd = state.qdot + dt * qdd
        q = state.q + dt * qd
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        _raise_nonfinite(q, qd, constraints, step_index)
    return replace(state, q=q, qdot=qd, t=state.t + dt)


def rollout(state: DynState, constraints: ConstraintSet, dt: float, n_steps: int,
            force_fn=None, record=True):
    """Repeated ``step``; ``force_fn(state, k)`` may set the applied forces."""
    traj = [state] if record else None
    for k in range(n_steps):
        if force_fn is not None:
            state = replace(state, forces=force_fn(state, k))
        state = step(state, constraints, dt, step_index=k)
        if record:
            traj.append(state)
    return traj if record else state


def write_trace_csv(path, times, q, qdot, residuals):
    """Rows (t, q..., qdot..., residual...) for an unbatched rollout."""
    import csv

    q, qdot, residuals = np.asarray(q), np.asarray(qdot), np.asarray(residuals)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"q{i}" for i in range(q.shape[1])]
                   + [f"qdot{i}" for i in range(qdot.shape[1])]
                   + [f"r{i}" for i in range(residuals.shape[1])])
        for row in zip(times, q, qdot, residuals):
            w.writerow([repr(float(row[0]))] + [repr(float(v)) for part in row[1:] for v in part])


# --------------------------------------------------------------------------
# backlash


@dataclass
class BacklashReport:
    free_play: float
    deadband: float
    t: np.ndarray = field(repr=False)
    actuator: np.ndarray = field(repr=False)
    passive: np.ndarray = field(repr=False)


def backlash_probe(impedance: ImpedanceParams, amplitude: float, ratio=1.0,
                   frequency_hz=0.02, periods=1.25, dt=1e-3, passive_inertia=1e-3):
    """Drive an actuator sinusoidally through a geared soft coupling.

    The passive joint carries only its own inertia, so inside the deadband it
    coasts freely. Free play is half the peak-to-peak coupling violation
    ``q_p - ratio * q_a`` over the final full period. The default drive is
    slow enough that the elastic tracking lag (about ``A w^2 / k_v``) stays
    well below the gaps of interest.
    """
    if not amplitude > 0:
        raise ValueError("amplitude must be > 0")
    cset = ConstraintSet([LinearConstraint("coupling", [[-ratio, 1.0]], [0.0], impedance)])
    n = int(round(periods / frequency_hz / dt))
    w = 2.0 * np.pi * frequency_hz
    mass = np.array([1e6, passive_inertia])
    state = DynState(np.zeros((1, 2)), np.array([[amplitude * w, ratio * amplitude * w]]), mass)
    minv = state.inverse_mass()
    q, qd, f = state.q.copy(), state.qdot.copy(), state.forces
    t = np.arange(n + 1) * dt
    qa = amplitude * np.sin(w * t)
    va = amplitude * w * np.cos(w * t)
    qp = np.empty(n + 1)
    qp[0] = 0.0
    for k in range(n):
        # same update as step(), without rebuilding the state each time
        qdd, _ = constrained_acceleration(q, qd, minv, f, cset)
        qd = qd + dt * qdd
        q = q + dt * qd
        if not np.all(np.isfinite(q)):
            _raise_nonfinite(q, qd, cset, k)
        # the actuator follows its prescribed trajectory exactly
        q[0, 0], qd[0, 0] = qa[k + 1], va[k + 1]
        qp[k + 1] = q[0, 1]
    tail = t >= t[-1] - 1.0 / frequency_hz
    viol = qp[tail] - ratio * qa[tail]
    return BacklashReport(0.5 * float(viol.max() - viol.min()), impedance.deadband, t, qa, qp)


# --------------------------------------------------------------------------
# fused evaluation


class FusedConstraints:
    """Same rows as a ConstraintSet, evaluated with a fixed number of array ops.

    Rows are regrouped as linear, trigonometric (planar loops) and polynomial
    blocks; ``row_names`` and the per-row impedance arrays follow that order.
    The cost of an evaluation grows with the batch size but barely with the
    number of constraints, which is what keeps large batches cheap.
    """

    def __init__(self, cset: ConstraintSet, n: int):
        self.n = n
        lin, loops, polys = [], [], []
        for c in cset.constraints:
            {LinearConstraint: lin, PlanarLoopConstraint: loops,
             PolynomialConstraint: polys}[type(c)].append(c)
        order = lin + loops + polys
        self.source = ConstraintSet(order)
        self.rows = self.source.rows
        self.row_names = self.source.row_names
        for attr in ("k", "b", "d_min", "d_max", "lo", "hi"):
            setattr(self, attr, getattr(self.source, attr))
        self._span = self.hi - self.lo
        self._drange = self.d_max - self.d_min

        self.m_lin = sum(c.rows for c in lin)
        self.C = (np.concatenate([c.C for c in lin]) if lin else np.zeros((0, n)))
        self.C_off = (np.concatenate([c.offset for c in lin]) if lin else np.zeros(0))

        self.m_trig = 2 * len(loops)
        idx, off, wc, ws, const = [], [], [], [], []
        for k, c in enumerate(loops):
            for t in c.terms:
                idx.append(t.index)
                off.append(t.offset)
                rc = np.zeros(self.m_trig)
                rs = np.zeros(self.m_trig)
                rc[2 * k] = t.sign * t.length
                rs[2 * k + 1] = t.sign * t.length
                wc.append(rc)
                ws.append(rs)
            const.extend(c.constant)
        self.t_idx = np.array(idx, dtype=int)
        self.t_off = np.array(off)
        self.Wc = np.array(wc) if wc else np.zeros((0, self.m_trig))
        self.Ws = np.array(ws) if ws else np.zeros((0, self.m_trig))
        self.t_const = np.array(const)
        # selection matrix from term slots to coordinates
        self.P = np.zeros((len(idx), n))
        self.P[np.arange(len(idx)), self.t_idx] = 1.0
        self.polys = polys
        self.m_poly = len(polys)

    def impedance(self, r):
        s = np.clip((np.abs(r) - self.lo) / self._span, 0.0, 1.0)
        return self.d_min + self._drange * (s * s * s * (10.0 + s * (-15.0 + 6.0 * s)))

    def residual(self, q):
        return self.evaluate(np.atleast_2d(q), None)[0]

    def jacobian(self, q):
        return self.evaluate(np.atleast_2d(q), None)[1]

    def evaluate(self, q, qd):
        """(r, J, bias); with ``qd=None`` the bias is omitted."""
        q = np.atleast_2d(q)
        B = q.shape[0]
        parts_r, parts_J, parts_b = [], [], []
        if self.m_lin:
            parts_r.append(q @ self.C.T - self.C_off)
            parts_J.append(np.broadcast_to(self.C, (B,) + self.C.shape))
            if qd is not None:
                parts_b.append(np.zeros((B, self.m_lin)))
        if self.m_trig:
            ang = q[:, self.t_idx] + self.t_off
            c, s = np.cos(ang), np.sin(ang)
            parts_r.append(c @ self.Wc + s @ self.Ws + self.t_const)
            # G[b, t, m] = d r_m / d angle_t
            G = c[:, :, None] * self.Ws - s[:, :, None] * self.Wc
            parts_J.append(np.swapaxes(G, 1, 2) @ self.P)
            if qd is not None:
                w2 = qd[:, self.t_idx] ** 2
                parts_b.append(-((c * w2) @ self.Wc + (s * w2) @ self.Ws))
        for p in self.polys:
            parts_r.append(p.residual(q))
            parts_J.append(p.jacobian(q))
            if qd is not None:
                parts_b.append(p.bias(q, qd))
        if not parts_r:
            z = np.zeros((B, 0))
            return z, np.zeros((B, 0, self.n)), (z if qd is not None else None)
        r = np.concatenate(parts_r, axis=1) if len(parts_r) > 1 else parts_r[0]
        J = np.concatenate(parts_J, axis=1) if len(parts_J) > 1 else np.array(parts_J[0])
        b = None
        if qd is not None:
            b = np.concatenate(parts_b, axis=1) if len(parts_b) > 1 else parts_b[0]
        return r, J, b
