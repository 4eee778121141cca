"""Mechanism description files and actuator/kinematic space maps.

A model file is a JSON document (``format_version`` 1) listing mechanisms in
evaluation order. Each mechanism binds actuator names to kinematic joints:

* ``serial``: one actuator drives one joint directly.
* ``differential``: two rotors drive roll and pitch outputs.
* ``five_bar``: theta1 is an existing joint (the hip pitch), theta4 is an
  actuated crank, theta2/theta3 are passive; the first passive joint is the
  output the rest of the leg hangs from.
* ``four_bar``: an actuated crank, a coupler and an output joint, modeled
  either by the loop (``representation: loop``) or by a fitted polynomial.

Angles carry an ``_rad`` suffix and lengths ``_m``. Joint angles relate to the
mechanism's absolute angles through per-joint offsets. The full schema is
described in ``MODEL_FORMAT.md`` at the repository root.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import differential as diff
from . import five_bar as fb
from . import four_bar as fourb
from .dynamics import ImpedanceParams
from .errors import ParseError, SolverError, Unreachable, ValidationError
from .geometry import Transform3, rot_x, rot_y, rot_z

FORMAT_VERSION = 1
FULL_ROBOT_ACTUATORS = 16
NOMINAL_CLOSURE_TOL = 1e-8


@dataclass(frozen=True)
class VariantSpec:
    enable_fourbar: bool = True
    enable_fivebar: bool = True
    enable_differential: bool = True

    @property
    def name(self) -> str:
        flags = (self.enable_fourbar, self.enable_fivebar, self.enable_differential)
        return {(False, False, False): "Simplified", (True, False, False): "4-Bar",
                (False, True, False): "5-Bar", (False, False, True): "Differential",
                (True, True, True): "All"}.get(flags, "+".join(
                    n for n, f in zip(("4bar", "5bar", "diff"), flags) if f) or "Simplified")

    def enabled(self, kind: str) -> bool:
        return {"four_bar": self.enable_fourbar, "five_bar": self.enable_fivebar,
                "differential": self.enable_differential}.get(kind, False)


VARIANTS = {
    "Simplified": VariantSpec(False, False, False),
    "4-Bar": VariantSpec(True, False, False),
    "5-Bar": VariantSpec(False, True, False),
    "Differential": VariantSpec(False, False, True),
    "All": VariantSpec(True, True, True),
}


# --------------------------------------------------------------------------
# mechanism records


@dataclass
class SerialMech:
    name: str
    actuator: str
    joint: str
    kind: str = "serial"

    @property
    def actuators(self):
        return [self.actuator]

    @property
    def joints(self):
        return [self.joint]


@dataclass
class DifferentialMech:
    name: str
    params: diff.DifferentialParams
    actuators: list
    rotors: list
    outputs: list
    impedance: ImpedanceParams
    kind: str = "differential"

    @property
    def joints(self):
        return list(self.rotors) + list(self.outputs)


@dataclass
class FiveBarMech:
    name: str
    params: fb.FiveBarParams
    theta1_joint: str
    theta1_offset: float
    actuator: str
    crank: str
    theta4_offset: float
    passive: list          # [theta2 joint, theta3 joint], absolute angles
    nominal_passive: tuple
    impedance: ImpedanceParams
    foot_length: float = 0.0
    kind: str = "five_bar"

    @property
    def actuators(self):
        return [self.actuator]

    @property
    def joints(self):
        return [self.crank] + list(self.passive)

    @property
    def output(self):
        return self.passive[0]


@dataclass
class FourBarMech:
    name: str
    params: fourb.FourBarParams
    actuator: str
    crank: str
    coupler: str
    output: str
    input_offset: float
    output_offset: float
    representation: str
    impedance: ImpedanceParams
    poly_degree: int = 5
    poly: fourb.PolyRatioModel | None = None
    kind: str = "four_bar"

    @property
    def actuators(self):
        return [self.actuator]

    @property
    def joints(self):
        return [self.crank, self.coupler, self.output]


@dataclass
class MechanismModel:
    name: str
    mechanisms: list
    actuator_names: list
    joint_names: list
    q_nom_act: np.ndarray
    q_nom: np.ndarray
    joint_limits: dict
    inertia: dict
    kp: float
    kd: float
    full_robot: bool
    variant: VariantSpec = field(default_factory=VariantSpec)
    legs: dict = field(default_factory=dict)
    source: str | None = None
    torque_limit: float = 10.0

    def act_index(self, name) -> int:
        return self.actuator_names.index(name)

    def joint_index(self, name) -> int:
        return self.joint_names.index(name)

    def mechanism(self, name):
        for m in self.mechanisms:
            if m.name == name:
                return m
        raise KeyError(name)

    def with_variant(self, variant: VariantSpec) -> "MechanismModel":
        from dataclasses import replace
        return replace(self, variant=variant)

    def is_active(self, mech) -> bool:
        return self.variant.enabled(mech.kind)


# --------------------------------------------------------------------------
# parsing


def _req(d, key, path):
    if key not in d:
        raise ValidationError(f"{path}.{key}", "missing required field")
    return d[key]


def _num(d, key, path, default=None):
    if key not in d:
        if default is None:
            raise ValidationError(f"{path}.{key}", "missing required field")
        return float(default)
    v = d[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
        raise ValidationError(f"{path}.{key}", f"expected a finite number, got {v!r}")
    return float(v)


def _transform(d, path) -> Transform3:
    if d is None:
        return Transform3.identity()
    t = np.asarray(d.get("translation_m", [0.0, 0.0, 0.0]), dtype=float)
    if "rotation" in d:
        r = np.asarray(d["rotation"], dtype=float)
        if r.shape != (3, 3) or not np.allclose(r.T @ r, np.eye(3), atol=1e-10):
            raise ValidationError(f"{path}.rotation", "must be a 3x3 orthonormal matrix")
    else:
        roll, pitch, yaw = d.get("rpy_rad", [0.0, 0.0, 0.0])
        r = rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)
    return Transform3(r, t)


def _impedance(d, path, default=None) -> ImpedanceParams:
    try:
        if d is None:
            return default or ImpedanceParams()
        return ImpedanceParams.from_dict(d)
    except ValidationError as exc:
        raise ValidationError(f"{path}.impedance", str(exc)) from exc


def _wrap(path, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ValidationError as exc:
        raise ValidationError(f"{path}.{exc.field}", str(exc).split(": ", 1)[-1]) from exc


def _parse_mechanism(d, path, default_imp):
    kind = _req(d, "type", path)
    name = _req(d, "name", path)
    if kind == "serial":
        return SerialMech(name, _req(d, "actuator", path), _req(d, "joint", path))
    imp = _impedance(d.get("impedance"), path, default_imp)
    if kind == "differential":
        params = _wrap(path, diff.DifferentialParams,
                       _num(d, "rho_left", path, 1.0), _num(d, "rho_right", path, 1.0))
        acts = list(_req(d, "actuators", path))
        rotors = list(d.get("rotors", acts))
        outs = list(_req(d, "outputs", path))
        if len(acts) != 2 or len(outs) != 2 or len(rotors) != 2:
            raise ValidationError(f"{path}", "differential needs two actuators and two outputs")
        return DifferentialMech(name, params, acts, rotors, outs, imp)
    if kind == "five_bar":
        links = _req(d, "links_m", path)
        lp = f"{path}.links_m"
        params = _wrap(lp, fb.FiveBarParams, _num(links, "l1", lp), _num(links, "l2", lp),
                       _num(links, "l3", lp), _num(links, "l4", lp), _num(links, "l0", lp, 0.0),
                       _transform(d.get("base_A"), f"{path}.base_A"),
                       _transform(d["base_F"], f"{path}.base_F") if "base_F" in d else None)
        nominal = d.get("nominal_passive_rad")
        if nominal is None or len(nominal) != 2:
            raise ValidationError(f"{path}.nominal_passive_rad",
                                  "a feasible initial passive configuration is required")
        return FiveBarMech(name, params, _req(d, "theta1_joint", path),
                           _num(d, "theta1_offset_rad", path, 0.0), _req(d, "actuator", path),
                           _req(d, "crank", path), _num(d, "theta4_offset_rad", path, 0.0),
                           list(_req(d, "passive", path)), tuple(float(v) for v in nominal), imp,
                           _num(d, "foot_length_m", path, 0.0))
    if kind == "four_bar":
        links = _req(d, "links_m", path)
        lp = f"{path}.links_m"
        rep = d.get("representation", "loop")
        if rep not in ("loop", "polynomial"):
            raise ValidationError(f"{path}.representation", f"unknown representation {rep!r}")
        if rep == "polynomial" and "input_limits_rad" not in d:
            raise ValidationError(f"{path}.input_limits_rad",
                                  "joint limits are mandatory for the polynomial representation")
        lim = tuple(d.get("input_limits_rad", (-math.pi, math.pi)))
        params = _wrap(lp, fourb.FourBarParams, _num(links, "L0", lp), _num(links, "L1", lp),
                       _num(links, "L2", lp), _num(links, "L3", lp), lim, int(d.get("branch", 1)))
        return FourBarMech(name, params, _req(d, "actuator", path), _req(d, "crank", path),
                           _req(d, "coupler", path), _req(d, "output", path),
                           _num(d, "input_offset_rad", path, 0.0),
                           _num(d, "output_offset_rad", path, 0.0), rep, imp,
                           int(d.get("poly_degree", 5)))
    raise ValidationError(f"{path}.type", f"unknown mechanism type {kind!r}")


def model_from_dict(doc, source=None, variant: VariantSpec | None = None) -> MechanismModel:
    if not isinstance(doc, dict):
        raise ParseError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError("format_version", f"expected {FORMAT_VERSION}, got {version!r}")
    default_imp = _impedance(doc.get("default_impedance"), "default_impedance")
    mechs = [_parse_mechanism(m, f"mechanisms[{i}]", default_imp)
             for i, m in enumerate(_req(doc, "mechanisms", "model"))]

    seen_act, seen_joint = {}, {}
    for i, m in enumerate(mechs):
        for a in m.actuators:
            if a in seen_act:
                raise ValidationError(f"mechanisms[{i}].actuators",
                                      f"actuator {a!r} already bound by {seen_act[a]}")
            seen_act[a] = m.name
        for j in m.joints:
            if j in seen_joint:
                raise ValidationError(f"mechanisms[{i}]",
                                      f"joint {j!r} already driven by {seen_joint[j]}")
            seen_joint[j] = m.name
    for i, m in enumerate(mechs):
        if m.kind == "five_bar" and m.theta1_joint not in seen_joint:
            raise ValidationError(f"mechanisms[{i}].theta1_joint",
                                  f"joint {m.theta1_joint!r} is not driven by any mechanism")

    order = list(doc.get("actuator_order", list(seen_act)))
    if sorted(order) != sorted(seen_act):
        raise ValidationError("actuator_order", "must list every bound actuator exactly once")
    full = bool(doc.get("full_robot", False))
    if full and len(order) != FULL_ROBOT_ACTUATORS:
        raise ValidationError("actuator_order",
                              f"full-robot model needs {FULL_ROBOT_ACTUATORS} actuators, "
                              f"found {len(order)}")
    joints = [j for m in mechs for j in m.joints]

    nom = doc.get("q_nom_rad", {})
    for k in nom:
        if k not in seen_act:
            raise ValidationError(f"q_nom_rad.{k}", "not an actuator")
    q_nom_act = np.array([float(nom.get(a, 0.0)) for a in order])

    inertia_doc = doc.get("inertia_kgm2", {})
    default_inertia = float(inertia_doc.get("default", 0.01))
    inertia = {j: float(inertia_doc.get(j, default_inertia)) for j in joints}
    for j, v in inertia.items():
        if not v > 0:
            raise ValidationError(f"inertia_kgm2.{j}", "must be > 0")
    gains = doc.get("actuator_gains", {})
    limits = {j: tuple(v) for j, v in doc.get("joint_limits_rad", {}).items()}

    model = MechanismModel(str(doc.get("name", "model")), mechs, order, joints, q_nom_act,
                           np.zeros(len(joints)), limits, inertia, float(gains.get("kp", 40.0)),
                           float(gains.get("kd", 1.0)), full, variant or VariantSpec(),
                           dict(doc.get("legs", {})), source,
                           float(gains.get("torque_limit_nm", 10.0)))

    for i, m in enumerate(mechs):
        if m.kind == "four_bar":
            for lim in m.params.input_limits:
                try:
                    fourb.assemble(m.params, lim)
                except SolverError as exc:
                    raise ValidationError(f"mechanisms[{i}].input_limits_rad",
                                          f"no closed assembly at {lim:.6g}") from exc
            if m.representation == "polynomial":
                try:
                    m.poly = fourb.fit_poly_ratio(m.params, m.poly_degree, m.params.input_limits,
                                                  n_samples=120, holdout_factor=2)
                except SolverError as exc:
                    raise ValidationError(f"mechanisms[{i}].input_limits_rad", str(exc)) from exc

    # nominal kinematic configuration from the supplied passive angles
    kin = _nominal_kinematics(model)
    model.q_nom = kin
    for i, m in enumerate(mechs):
        res = mechanism_residual(model, m, kin)
        if res > NOMINAL_CLOSURE_TOL:
            raise ValidationError(f"mechanisms[{i}]",
                                  f"nominal configuration violates closure by {res:.3e}")
        if m.kind == "five_bar":
            cfg = _five_bar_config(model, m, kin)
            if fb.is_near_singular(m.params, cfg):
                raise ValidationError(f"mechanisms[{i}].nominal_passive_rad",
                                      "nominal configuration is singular")
    return model


def load_model(path, variant: VariantSpec | None = None) -> MechanismModel:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return model_from_dict(doc, str(path), variant)


def data_path(name: str) -> Path:
    return Path(__file__).parent / "data" / name


def default_model_path() -> Path:
    return data_path("bruce_leg.json")


# --------------------------------------------------------------------------
# kinematics


def _five_bar_config(model, m: FiveBarMech, kin) -> fb.FiveBarConfig:
    j = model.joint_index
    return fb.FiveBarConfig(kin[j(m.theta1_joint)] + m.theta1_offset, kin[j(m.passive[0])],
                            kin[j(m.passive[1])], kin[j(m.crank)] + m.theta4_offset)


def _four_bar_config(model, m: FourBarMech, kin) -> fourb.FourBarConfig:
    j = model.joint_index
    return fourb.FourBarConfig(kin[j(m.crank)] + m.input_offset, kin[j(m.coupler)],
                               kin[j(m.output)] + m.output_offset)


def mechanism_residual(model, m, kin) -> float:
    """Closure violation of one mechanism at kinematic vector ``kin``."""
    j = model.joint_index
    if m.kind == "serial":
        return 0.0
    if m.kind == "differential":
        rot = np.array([kin[j(n)] for n in m.rotors])
        out = np.array([kin[j(n)] for n in m.outputs])
        a0 = _nominal_act(model, m.actuators)
        o0 = _diff_nominal_outputs(model, m)
        return float(np.max(np.abs(out - o0 - m.params.matrix() @ (rot - a0))))
    if m.kind == "five_bar":
        return float(np.linalg.norm(fb.closure_residual(m.params, _five_bar_config(model, m, kin))))
    if m.kind == "four_bar":
        return float(np.hypot(*fourb.loop_residual(m.params, _four_bar_config(model, m, kin))))
    raise TypeError(m.kind)


def _nominal_act(model, names):
    return np.array([model.q_nom_act[model.act_index(a)] for a in names])


def _diff_nominal_outputs(model, m: DifferentialMech):
    return m.params.matrix() @ _nominal_act(model, m.actuators)


def _nominal_kinematics(model) -> np.ndarray:
    kin = np.zeros(len(model.joint_names))
    j = model.joint_index
    for m in model.mechanisms:
        if m.kind == "serial":
            kin[j(m.joint)] = model.q_nom_act[model.act_index(m.actuator)]
        elif m.kind == "differential":
            a = _nominal_act(model, m.actuators)
            for n, v in zip(m.rotors, a):
                kin[j(n)] = v
            for n, v in zip(m.outputs, m.params.matrix() @ a):
                kin[j(n)] = v
        elif m.kind == "five_bar":
            kin[j(m.crank)] = model.q_nom_act[model.act_index(m.actuator)]
            kin[j(m.passive[0])], kin[j(m.passive[1])] = m.nominal_passive
        elif m.kind == "four_bar":
            x = model.q_nom_act[model.act_index(m.actuator)] + m.input_offset
            cfg = fourb.fourbar_solve_output(m.params, x, fourb.assemble(m.params, x))
            kin[j(m.crank)] = x - m.input_offset
            kin[j(m.coupler)] = cfg.theta_c
            kin[j(m.output)] = cfg.theta_out - m.output_offset
    return kin


def five_bar_linearization(model, m: FiveBarMech) -> np.ndarray:
    """d(theta2, theta3)/d(theta1, theta4) at the nominal configuration."""
    return fb.passive_sensitivity(m.params, _five_bar_config(model, m, model.q_nom))


def four_bar_nominal_ratio(model, m: FourBarMech) -> float:
    return fourb.transmission_ratio(m.params, _four_bar_config(model, m, model.q_nom))


def actuator_to_kinematic(model: MechanismModel, q_act, guess=None) -> np.ndarray:
    """Kinematic joint vector for actuator positions ``q_act``.

    Passive joints of active closed chains are solved from ``guess`` (a
    kinematic vector; defaults to the nominal one). Serialized mechanisms use
    their linearized map at the nominal configuration with frozen passives.
    """
    q_act = np.asarray(q_act, dtype=float)
    if q_act.shape != (len(model.actuator_names),):
        raise ValueError(f"expected {len(model.actuator_names)} actuator values")
    guess = model.q_nom if guess is None else np.asarray(guess, dtype=float)
    kin = model.q_nom.copy()
    j, a = model.joint_index, model.act_index
    nom = model.q_nom
    for m in model.mechanisms:
        if m.kind == "serial":
            kin[j(m.joint)] = q_act[a(m.actuator)]
        elif m.kind == "differential":
            qa = np.array([q_act[a(n)] for n in m.actuators])
            out = _diff_nominal_outputs(model, m) + m.params.matrix() @ (qa - _nominal_act(model, m.actuators))
            for n, v in zip(m.rotors, qa):
                kin[j(n)] = v
            for n, v in zip(m.outputs, out):
                kin[j(n)] = v
        elif m.kind == "five_bar":
            kin[j(m.crank)] = q_act[a(m.actuator)]
            t1 = kin[j(m.theta1_joint)] + m.theta1_offset
            t4 = kin[j(m.crank)] + m.theta4_offset
            if model.is_active(m):
                g = (guess[j(m.passive[0])], guess[j(m.passive[1])])
                try:
                    cfg = fb.solve_passive(m.params, t1, t4, g)
                except SolverError as exc:
                    raise type(exc)(str(exc), m.name) from exc
                kin[j(m.passive[0])], kin[j(m.passive[1])] = cfg.theta2, cfg.theta3
            else:
                G = five_bar_linearization(model, m)
                d1 = kin[j(m.theta1_joint)] - nom[j(m.theta1_joint)]
                d4 = kin[j(m.crank)] - nom[j(m.crank)]
                kin[j(m.passive[0])] = nom[j(m.passive[0])] + G[0, 0] * d1 + G[0, 1] * d4
        elif m.kind == "four_bar":
            kin[j(m.crank)] = q_act[a(m.actuator)]
            x = kin[j(m.crank)] + m.input_offset
            if model.is_active(m) and m.representation == "loop":
                g = (guess[j(m.coupler)], guess[j(m.output)] + m.output_offset)
                try:
                    cfg = fourb.fourbar_solve_output(m.params, x, g)
                except SolverError as exc:
                    raise type(exc)(str(exc), m.name) from exc
                kin[j(m.coupler)] = cfg.theta_c
                kin[j(m.output)] = cfg.theta_out - m.output_offset
            elif model.is_active(m):
                kin[j(m.output)] = fourb.eval_poly_ratio(m.poly, x) - m.output_offset
            else:
                rho = four_bar_nominal_ratio(model, m)
                kin[j(m.output)] = nom[j(m.output)] + rho * (kin[j(m.crank)] - nom[j(m.crank)])
    return kin


def kinematic_to_actuator(model: MechanismModel, q_kin, tol=1e-8) -> np.ndarray:
    """Actuator positions for a kinematic vector; checks each active closure."""
    q_kin = np.asarray(q_kin, dtype=float)
    out = np.zeros(len(model.actuator_names))
    j, a = model.joint_index, model.act_index
    for m in model.mechanisms:
        if m.kind == "serial":
            out[a(m.actuator)] = q_kin[j(m.joint)]
        elif m.kind == "differential":
            o = np.array([q_kin[j(n)] for n in m.outputs]) - _diff_nominal_outputs(model, m)
            qa = _nominal_act(model, m.actuators) + m.params.inverse_matrix() @ o
            for n, v in zip(m.actuators, qa):
                out[a(n)] = v
        elif m.kind in ("five_bar", "four_bar"):
            if model.is_active(m) and not (m.kind == "four_bar" and m.representation == "polynomial"):
                res = mechanism_residual(model, m, q_kin)
                if res > tol:
                    raise Unreachable(f"closure violated by {res:.3e}", m.name)
            out[a(m.actuator)] = q_kin[j(m.crank)]
    return out
