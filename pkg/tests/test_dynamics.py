import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from linkforge import dynamics as dyn
from linkforge import five_bar as fb
from linkforge.errors import NonFinite, ValidationError

IMP = dyn.ImpedanceParams()
GENERIC = fb.FiveBarParams(l1=0.2, l2=0.16, l3=0.14, l4=0.06, l0=0.03)


def five_bar_constraint(p, imp=IMP):
    """Closure rows over q = (theta1, theta2, theta3, theta4)."""
    ox, oy = p.frame_offset
    phi = p.frame_angle
    terms = [dyn.LoopTerm(0, p.l1, 1.0, 0.0), dyn.LoopTerm(1, p.l2, 1.0, 0.0),
             dyn.LoopTerm(3, p.l4, -1.0, phi), dyn.LoopTerm(2, p.l3, -1.0, phi)]
    return dyn.PlanarLoopConstraint("five_bar", terms, (-ox, -oy), imp)


def start_five_bar():
    c = fb.solve_passive(GENERIC, -1.5, -0.9, (0.3, -0.8))
    return np.array([c.theta1, c.theta2, c.theta3, c.theta4])


# impedance -----------------------------------------------------------------

def test_impedance_plateau_and_saturation():
    p = dyn.ImpedanceParams(deadband=0.01, d_min=0.1, d_max=0.9, width=0.002, midpoint=0.012)
    assert dyn.impedance(p, 0.0) == p.d_min
    assert dyn.impedance(p, 0.0099) == p.d_min
    assert abs(dyn.impedance(p, 10 * (p.midpoint + p.width)) - p.d_max) <= 1e-6


def test_impedance_symmetric(rng):
    r = rng.normal(scale=2e-3, size=1000)
    assert np.all(dyn.impedance(IMP, r) - dyn.impedance(IMP, -r) == 0.0)


@given(st.floats(0.0, 0.05), st.floats(0.0, 0.05))
def test_impedance_monotone_and_bounded(a, b):
    p = dyn.backlash_impedance(0.01)
    lo, hi = sorted((a, b))
    assert p.d_min <= dyn.impedance(p, lo) <= dyn.impedance(p, hi) <= p.d_max


def test_impedance_c1_continuity():
    p = dyn.backlash_impedance(0.01)
    lo, hi = p.transition
    for edge in (lo, hi):
        h = 1e-9
        left = (dyn.impedance(p, edge) - dyn.impedance(p, edge - h)) / h
        right = (dyn.impedance(p, edge + h) - dyn.impedance(p, edge)) / h
        assert abs(left) < 1e-3 and abs(right) < 1e-3


def test_impedance_validation():
    with pytest.raises(ValidationError):
        dyn.ImpedanceParams(d_min=0.9, d_max=0.5)
    with pytest.raises(ValidationError):
        dyn.ImpedanceParams(deadband=0.01, midpoint=0.005)
    with pytest.raises(ValidationError):
        dyn.ImpedanceParams(width=0.0)


# constraint acceleration ----------------------------------------------------

def test_constraint_accel_limits():
    p = dyn.ImpedanceParams(d_min=0.0, d_max=1.0)
    assert dyn.constraint_accel(p, 0.3, 0.2, 1.7, D=0.0) == 1.7
    assert dyn.constraint_accel(p, 0.3, 0.2, 1.7, D=1.0) == -(p.b_v * 0.2 + p.k_v * 0.3)


def test_constraint_accel_identity(rng):
    p = dyn.ImpedanceParams(d_min=0.0, d_max=1.0)
    r, v, a0 = rng.normal(size=(3, 10000)) * [[1e-3], [1e-2], [10.0]]
    D = rng.uniform(size=10000)
    a1 = dyn.constraint_accel(p, r, v, a0, D=D)
    ident = a1 + D * (p.b_v * v + p.k_v * r) - (1 - D) * a0
    assert np.max(np.abs(ident)) <= 1e-14 * max(1.0, np.max(np.abs(a0)), p.k_v * 1e-3 * 5)


# constraint jacobians ----------------------------------------------------------

def fd_jacobian(c, q, h=1e-7):
    cols = []
    for i in range(q.size):
        e = np.zeros_like(q)
        e[i] = h
        cols.append((c.residual(q + e)[0] - c.residual(q - e)[0]) / (2 * h))
    return np.stack(cols, axis=1)


@pytest.mark.parametrize("make", [
    lambda: five_bar_constraint(GENERIC),
    lambda: dyn.PolynomialConstraint("poly", 0, 2, [0.0, 1.2, 0.1, -0.3], 0.4, 0.1, IMP),
    lambda: dyn.LinearConstraint("lin", [[1.0, -2.0, 0.5, 0.0]], [0.1], IMP),
])
def test_constraint_jacobian_and_bias_match_fd(make, rng):
    c = make()
    for _ in range(50):
        q = rng.uniform(-1.5, 1.5, size=4)
        qd = rng.normal(size=4)
        assert np.max(np.abs(c.jacobian(q)[0] - fd_jacobian(c, q))) <= 1e-6
        h = 1e-6
        jdot_qd = (c.jacobian(q + h * qd)[0] @ qd - c.jacobian(q - h * qd)[0] @ qd) / (2 * h)
        assert np.max(np.abs(c.bias(q, qd)[0] - jdot_qd)) <= 1e-5


def test_five_bar_rows_match_closure_residual(rng):
    c = five_bar_constraint(GENERIC)
    for q in rng.uniform(-2, 2, size=(20, 4)):
        want = fb.planar_residual(GENERIC, fb.FiveBarConfig(*q))
        assert c.residual(q)[0] == pytest.approx(want, abs=1e-15)


# integration --------------------------------------------------------------------

def test_equilibrium_is_fixed_point():
    q0 = start_five_bar()
    state = dyn.DynState(q0, np.zeros(4), np.array([2e-3, 1e-3, 1e-3, 2e-3]))
    cset = dyn.ConstraintSet([five_bar_constraint(GENERIC)])
    out = dyn.rollout(state, cset, 1e-3, 200, record=False)
    assert np.max(np.abs(out.q - q0)) <= 1e-12
    assert np.max(np.abs(out.qdot)) <= 1e-12


def pendulum_force(m, g, l):
    def force(state, k):
        f = np.zeros_like(state.q)
        f[:, 0] = -m * g * l * np.sin(state.q[:, 0])
        return f
    return force


def test_pendulum_matches_unconstrained_oracle():
    m, g, l, dt = 0.5, 9.81, 0.3, 1e-3
    inertia = m * l * l
    state = dyn.DynState([0.7, 0.0], [0.0, 0.0], np.array([inertia, 1.0]))
    cset = dyn.ConstraintSet([dyn.LinearConstraint("pin", [[0.0, 1.0]], [0.0], IMP)])
    traj = dyn.rollout(state, cset, dt, 2000, force_fn=pendulum_force(m, g, l))
    th, w = 0.7, 0.0
    for k in range(2000):
        w += dt * (-g / l * math.sin(th))
        th += dt * w
        assert abs(traj[k + 1].q[0, 0] - th) <= 1e-12
        assert abs(traj[k + 1].qdot[0, 0] - w) <= 1e-12
    assert np.all(np.array([s.q[0, 1] for s in traj]) == 0.0)


def test_five_bar_stiff_rollout_closure(rng):
    q0 = start_five_bar()
    cset = dyn.ConstraintSet([five_bar_constraint(GENERIC)])
    mass = np.array([2e-3, 1e-3, 1e-3, 2e-3])
    for _ in range(3):
        tau = np.zeros(4)
        tau[[0, 3]] = rng.uniform(-0.02, 0.02, size=2)

        def force(state, k, tau=tau):
            # a little viscous friction keeps the free linkage from running away
            return np.broadcast_to(tau - 0.02 * state.qdot[0], state.q.shape)

        traj = dyn.rollout(dyn.DynState(q0, np.zeros(4), mass), cset, 1e-3, 2000, force_fn=force)
        worst = max(float(np.linalg.norm(cset.residual(s.q)[0])) for s in traj)
        assert worst < 1e-3


def test_energy_non_increasing_without_load():
    q0 = start_five_bar()
    cset = dyn.ConstraintSet([five_bar_constraint(GENERIC)])
    mass = np.array([2e-3, 1e-3, 1e-3, 2e-3])
    J = cset.jacobian(q0)[0]
    # initial velocity inside the constraint tangent space
    _, _, vt = np.linalg.svd(J)
    qd0 = vt[-1] * 2.0
    traj = dyn.rollout(dyn.DynState(q0, qd0, mass), cset, 1e-3, 1000)
    ke = np.array([dyn.kinetic_energy(s)[0] for s in traj])
    assert np.all(np.diff(ke) <= 1e-6)
    assert ke[-1] > 0.0


def steady_violation(k_v):
    imp = dyn.ImpedanceParams(k_v=k_v, b_v=2 * math.sqrt(k_v), d_min=0.9, d_max=0.9)
    cset = dyn.ConstraintSet([dyn.LinearConstraint("weld", [[1.0, -1.0]], [0.0], imp)])
    state = dyn.DynState([0.0, 0.0], [0.0, 0.0], np.array([1.0, 1.0]), forces=[[2.0, 0.0]])
    out = dyn.rollout(state, cset, 1e-3, 3000, record=False)
    return float(cset.residual(out.q)[0, 0])


def test_violation_scales_inversely_with_stiffness():
    r1, r2 = steady_violation(2e3), steady_violation(4e3)
    assert r1 > 0 and r2 > 0
    assert abs(r1 / r2 - 2.0) <= 0.2 * 2.0


def test_identity_hook_holds_every_step():
    q0 = start_five_bar()
    cset = dyn.ConstraintSet([five_bar_constraint(GENERIC)])
    state = dyn.DynState(q0, [0.3, -0.1, 0.2, 0.5], np.array([2e-3, 1e-3, 1e-3, 2e-3]),
                         forces=[[0.01, 0.0, 0.0, -0.01]])
    for k in range(200):
        state = dyn.step(state, cset, 1e-3, check=True)


def test_rollout_deterministic():
    q0 = start_five_bar()
    cset = dyn.ConstraintSet([five_bar_constraint(GENERIC)])
    mass = np.array([2e-3, 1e-3, 1e-3, 2e-3])

    def run():
        s = dyn.DynState(q0, [0.4, 0.0, 0.0, -0.2], mass, forces=[[0.01, 0, 0, 0.005]])
        return dyn.rollout(s, cset, 1e-3, 500, record=False)

    a, b = run(), run()
    assert a.q.tobytes() == b.q.tobytes() and a.qdot.tobytes() == b.qdot.tobytes()


def test_blow_up_reports_constraint():
    imp = dyn.ImpedanceParams(k_v=1e12, b_v=0.0, d_min=1.0, d_max=1.0)
    cset = dyn.ConstraintSet([dyn.LinearConstraint("stiff", [[1.0, -1.0]], [0.0], imp)])
    state = dyn.DynState([0.1, 0.0], [0.0, 0.0], np.array([1.0, 1.0]))
    with pytest.raises(NonFinite) as err:
        dyn.rollout(state, cset, 0.1, 1000, record=False)
    assert "stiff" in str(err.value)


def test_mass_must_be_spd():
    with pytest.raises(ValidationError):
        dyn.DynState([0.0, 0.0], [0.0, 0.0], np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValidationError):
        dyn.DynState([0.0, 0.0], [0.0, 0.0], np.array([1.0, 0.0]))


def test_trace_csv(tmp_path):
    cset = dyn.ConstraintSet([dyn.LinearConstraint("pin", [[0.0, 1.0]], [0.0], IMP)])
    traj = dyn.rollout(dyn.DynState([0.1, 0.0], [0.0, 0.0], np.array([1.0, 1.0])), cset, 1e-3, 5)
    dyn.write_trace_csv(tmp_path / "t.csv", [s.t for s in traj], np.concatenate([s.q for s in traj]),
                        np.concatenate([s.qdot for s in traj]),
                        np.concatenate([cset.residual(s.q) for s in traj]))
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,q0,q1,qdot0,qdot1,r0"
    assert len(lines) == 7


# backlash -------------------------------------------------------------------------

def test_backlash_without_deadband():
    rep = dyn.backlash_probe(dyn.backlash_impedance(0.0), amplitude=0.2)
    assert rep.free_play < 1e-6


def test_backlash_band_and_monotone():
    plays = [dyn.backlash_probe(dyn.backlash_impedance(e), amplitude=0.2).free_play
             for e in (0.005, 0.01, 0.02)]
    assert 0.005 <= plays[1] <= 0.02
    assert plays[0] < plays[1] < plays[2]
