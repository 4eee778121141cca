import copy
import json
import math

import numpy as np
import pytest

from linkforge import assembly as asm
from linkforge import sim
from linkforge.errors import ParseError, SolverError, Unreachable, ValidationError


@pytest.fixture(scope="module")
def doc():
    return json.loads(asm.default_model_path().read_text())


def test_shipped_model_loads_closed(bruce):
    assert len(bruce.actuator_names) == 16
    assert bruce.full_robot
    for m in bruce.mechanisms:
        assert asm.mechanism_residual(bruce, m, bruce.q_nom) < 1e-8


def test_every_joint_driven_once(bruce):
    joints = [j for m in bruce.mechanisms for j in m.joints]
    assert len(joints) == len(set(joints)) == len(bruce.joint_names)
    acts = [a for m in bruce.mechanisms for a in m.actuators]
    assert sorted(acts) == sorted(bruce.actuator_names)


def test_zero_link_rejected_with_field(doc):
    bad = copy.deepcopy(doc)
    knee = next(m for m in bad["mechanisms"] if m["type"] == "five_bar")
    knee["links_m"]["l2"] = 0.0
    with pytest.raises(ValidationError) as err:
        asm.model_from_dict(bad)
    assert "l2" in str(err.value)


def test_fifteen_actuators_rejected(doc):
    bad = copy.deepcopy(doc)
    drop = bad["actuator_order"].pop()
    bad["mechanisms"] = [m for m in bad["mechanisms"] if m.get("actuator") != drop]
    with pytest.raises(ValidationError) as err:
        asm.model_from_dict(bad)
    assert "16" in str(err.value)


def test_duplicate_actuator_rejected(doc):
    bad = copy.deepcopy(doc)
    serials = [m for m in bad["mechanisms"] if m["type"] == "serial"]
    serials[1]["actuator"] = serials[0]["actuator"]
    with pytest.raises(ValidationError):
        asm.model_from_dict(bad)


def test_infeasible_nominal_rejected(doc):
    bad = copy.deepcopy(doc)
    knee = next(m for m in bad["mechanisms"] if m["type"] == "five_bar")
    knee["nominal_passive_rad"][0] += 0.1
    with pytest.raises(ValidationError):
        asm.model_from_dict(bad)


def test_parse_errors(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        asm.load_model(p)
    with pytest.raises(ParseError):
        asm.load_model(tmp_path / "missing.json")
    with pytest.raises(ValidationError):
        asm.model_from_dict({"format_version": 99, "mechanisms": []})


def test_nominal_fixed_point(bruce):
    kin = asm.actuator_to_kinematic(bruce, bruce.q_nom_act)
    assert np.max(np.abs(kin - bruce.q_nom)) <= 1e-10
    act = asm.kinematic_to_actuator(bruce, bruce.q_nom)
    assert np.max(np.abs(act - bruce.q_nom_act)) <= 1e-12


def test_round_trip_random_states(bruce, rng):
    worst = 0.0
    for _ in range(500):
        q_act = bruce.q_nom_act + rng.uniform(-0.25, 0.25, size=16)
        kin = asm.actuator_to_kinematic(bruce, q_act)
        for m in bruce.mechanisms:
            assert asm.mechanism_residual(bruce, m, kin) <= 1e-10
        worst = max(worst, float(np.max(np.abs(asm.kinematic_to_actuator(bruce, kin) - q_act))))
    assert worst <= 1e-9


def differential_only():
    return asm.model_from_dict({
        "format_version": 1, "name": "hip", "mechanisms": [{
            "type": "differential", "name": "hip", "rho_left": 1.0, "rho_right": 1.0,
            "actuators": ["a", "b"], "rotors": ["ra", "rb"], "outputs": ["roll", "pitch"]}]})


@pytest.mark.parametrize("w", [0.0, 0.05, -0.3])
def test_differential_only_common_mode_is_roll(w):
    m = differential_only()
    kin = asm.actuator_to_kinematic(m, [w, w])
    assert kin[m.joint_index("roll")] == pytest.approx(w, abs=1e-15)
    assert kin[m.joint_index("pitch")] == pytest.approx(0.0, abs=1e-15)
    assert asm.kinematic_to_actuator(m, kin) == pytest.approx([w, w], abs=1e-15)


def test_unreachable_kinematic_vector(bruce):
    kin = bruce.q_nom.copy()
    kin[bruce.joint_index("shank_l")] += 0.2
    with pytest.raises(Unreachable) as err:
        asm.kinematic_to_actuator(bruce, kin)
    assert err.value.mechanism == "knee_l"


def test_unreachable_actuator_names_mechanism(bruce):
    q_act = bruce.q_nom_act.copy()
    # swings the ankle crank to where the coupler and rocker cannot span the gap
    q_act[bruce.act_index("ankle_l")] = 1.0
    with pytest.raises(SolverError) as err:
        asm.actuator_to_kinematic(bruce, q_act)
    assert err.value.mechanism == "ankle_l"


def test_variant_names():
    assert [v.name for v in asm.VARIANTS.values()] == list(asm.VARIANTS)
    assert asm.VariantSpec(True, True, False).name == "4bar+5bar"


@pytest.mark.parametrize("variant", list(asm.VARIANTS))
def test_serial_approximation_matches_linearization(bruce, variant):
    phys = sim.build_physics(bruce, asm.VARIANTS[variant])
    # the nominal state maps onto the nominal actuator vector in every variant
    assert np.max(np.abs(phys.actuator_positions(phys.q0) - bruce.q_nom_act)) <= 1e-12
    assert np.max(np.abs(phys.cset.residual(phys.q0))) <= 1e-8 if phys.cset.rows else True
    if variant == "Simplified":
        assert phys.cset.rows == 0
        assert phys.n == 16


@pytest.mark.parametrize("variant", ["Simplified", "All"])
def test_compiled_step_matches_reference(bruce, variant, rng):
    phys = sim.build_physics(bruce, asm.VARIANTS[variant])
    B = 8
    q = phys.q0 + np.zeros((B, phys.n))
    qd = np.zeros((B, phys.n))
    target = bruce.q_nom_act + rng.uniform(-0.1, 0.1, size=(B, 16))
    minv = 1.0 / phys.inertia
    qc, qdc, tc = phys.step(q, qd, target, phys.kp, minv, 1e-3, n_sub=20, compiled=True)
    qr, qdr, tr = phys.step(q, qd, target, phys.kp, minv, 1e-3, n_sub=20, compiled=False)
    assert np.max(np.abs(qc - qr)) <= 1e-9
    assert np.max(np.abs(qdc - qdr)) <= 1e-7
    assert np.max(np.abs(tc - tr)) <= 1e-7
