"""Generate the shipped model and environment files under src/linkforge/data.

Link lengths, inertias and gains below are plausible kid-size values picked
for this package. They are not measured hardware data.
"""

import argparse
import json
import math
from pathlib import Path

from linkforge import four_bar as fourb

DATA = Path(__file__).resolve().parents[1] / "src" / "linkforge" / "data"

ANKLE = dict(L0=0.17, L1=0.035, L2=0.165, L3=0.03)
ANKLE_LIMITS = (math.pi / 2 - 0.6, math.pi / 2 + 0.6)
HIP_PITCH_NOM, KNEE_NOM = 0.35, -0.45
IMPEDANCE = {"k_v": 1e4, "b_v": 200.0, "deadband": 0.0, "d_min": 0.9, "d_max": 0.95,
             "width": 1e-3, "midpoint": 5e-4}
PLANE = {"rpy_rad": [math.pi / 2, 0.0, 0.0], "translation_m": [0.0, 0.0, 0.0]}


def ankle_output_offset():
    p = fourb.FourBarParams(**ANKLE, input_limits=ANKLE_LIMITS)
    return fourb.assemble(p, math.pi / 2).theta_out


def leg(side, y):
    out_off = ankle_output_offset()
    mechs = [
        {"type": "serial", "name": f"hip_yaw_{side}", "actuator": f"hip_yaw_{side}",
         "joint": f"hip_yaw_{side}"},
        {"type": "differential", "name": f"hip_diff_{side}", "rho_left": 1.0, "rho_right": 1.0,
         "actuators": [f"hip_diff_a_{side}", f"hip_diff_b_{side}"],
         "rotors": [f"hip_rotor_a_{side}", f"hip_rotor_b_{side}"],
         "outputs": [f"hip_roll_{side}", f"hip_pitch_{side}"]},
        {"type": "five_bar", "name": f"knee_{side}",
         "links_m": {"l0": 0.0, "l1": 0.2, "l2": 0.05, "l3": 0.2, "l4": 0.05},
         "base_A": PLANE, "theta1_joint": f"hip_pitch_{side}", "theta1_offset_rad": -math.pi / 2,
         "actuator": f"knee_{side}", "crank": f"knee_crank_{side}",
         "theta4_offset_rad": -math.pi / 2,
         "passive": [f"shank_{side}", f"knee_link_{side}"],
         # parallelogram closure: theta2 = theta4, theta3 = theta1
         "nominal_passive_rad": [KNEE_NOM - math.pi / 2, HIP_PITCH_NOM - math.pi / 2],
         "foot_length_m": 0.2},
        {"type": "four_bar", "name": f"ankle_{side}",
         "links_m": ANKLE, "input_limits_rad": list(ANKLE_LIMITS), "branch": 1,
         "representation": "loop", "poly_degree": 5,
         "actuator": f"ankle_{side}", "crank": f"ankle_crank_{side}",
         "coupler": f"ankle_coupler_{side}", "output": f"ankle_pitch_{side}",
         "input_offset_rad": math.pi / 2, "output_offset_rad": out_off},
    ]
    legspec = {"hip_yaw": f"hip_yaw_{side}", "hip_roll": f"hip_roll_{side}",
               "hip_pitch": f"hip_pitch_{side}", "five_bar": f"knee_{side}",
               "four_bar": f"ankle_{side}", "hip_offset_m": [0.0, y, -0.05]}
    return mechs, legspec


def arm(side):
    return [{"type": "serial", "name": f"{j}_{side}", "actuator": f"{j}_{side}", "joint": f"{j}_{side}"}
            for j in ("shoulder_pitch", "shoulder_roll", "elbow")]


def bruce():
    mechs, legs = [], {}
    for side, y in (("l", 0.075), ("r", -0.075)):
        m, spec = leg(side, y)
        mechs += m
        legs[side] = spec
    mechs += arm("l") + arm("r")
    order = []
    for side in ("l", "r"):
        order += [f"hip_yaw_{side}", f"hip_diff_a_{side}", f"hip_diff_b_{side}",
                  f"knee_{side}", f"ankle_{side}"]
    for side in ("l", "r"):
        order += [f"shoulder_pitch_{side}", f"shoulder_roll_{side}", f"elbow_{side}"]
    q_nom = {}
    for side in ("l", "r"):
        # differential: roll = (a + b)/2, pitch = (a - b)/2
        q_nom[f"hip_diff_a_{side}"] = HIP_PITCH_NOM
        q_nom[f"hip_diff_b_{side}"] = -HIP_PITCH_NOM
        q_nom[f"knee_{side}"] = KNEE_NOM
        q_nom[f"shoulder_roll_{side}"] = 0.1 if side == "l" else -0.1
        q_nom[f"elbow_{side}"] = -0.3
    inertia = {"default": 0.02}
    for side in ("l", "r"):
        inertia.update({f"hip_rotor_a_{side}": 0.01, f"hip_rotor_b_{side}": 0.01,
                        f"knee_crank_{side}": 0.005, f"knee_link_{side}": 0.002,
                        f"ankle_crank_{side}": 0.002, f"ankle_coupler_{side}": 0.001,
                        f"ankle_pitch_{side}": 0.005})
        for j in ("shoulder_pitch", "shoulder_roll", "elbow"):
            inertia[f"{j}_{side}"] = 0.01
    return {
        "format_version": 1,
        "name": "bruce_leg",
        "note": "kid-size humanoid with differential hips, five-bar knees and four-bar ankles; "
                "numeric values are illustrative, not hardware measurements",
        "full_robot": True,
        "default_impedance": IMPEDANCE,
        "mechanisms": mechs,
        "actuator_order": order,
        "q_nom_rad": q_nom,
        "inertia_kgm2": inertia,
        "actuator_gains": {"kp": 40.0, "kd": 1.0, "torque_limit_nm": 10.0},
        "legs": legs,
    }


def parallelogram():
    return {
        "format_version": 1,
        "name": "parallelogram_fourbar",
        "full_robot": False,
        "mechanisms": [
            {"type": "four_bar", "name": "ankle", "links_m": {"L0": 0.1, "L1": 0.04, "L2": 0.1, "L3": 0.04},
             "input_limits_rad": [0.6, 2.4], "branch": 1, "representation": "loop",
             "actuator": "ankle", "crank": "ankle_crank", "coupler": "ankle_coupler",
             "output": "ankle_pitch", "input_offset_rad": math.pi / 2, "output_offset_rad": math.pi / 2},
        ],
    }


def env_default():
    return {
        "format_version": 1,
        "note": "reward weights and sigmas are tuning choices, not published values",
        "ctrl_dt_s": 0.02,
        "sim_dt_s": 0.004,
        "history": 3,
        "stage": 4,
        "randomization": {
            "mass_scale": [0.8, 1.2],
            "kp_offset": [-20.0, 20.0],
            "foot_contact_offset_m": {"x": [-0.006, 0.006], "y": [-0.003, 0.003], "z": [-0.003, 0.003]},
            "com_offset_m": [-0.015, 0.015],
            "imu_displacement_m": [-0.006, 0.006],
            "imu_tilt_rad": [-0.06, 0.06],
            "terrain_height_m": [0.0, 0.02],
        },
        "disturbance": {
            "kick_interval": 50, "kick_velocity_mps": [0.2, 0.45],
            "small_kick_interval": 10, "small_kick_velocity_mps": [0.05, 0.1],
            "obs_noise": 0.03,
        },
        "latency": {"obs_sigma_s": 0.01, "action_delays": [0, 1, 2]},
        "filters": {"action_cutoff_hz": 8.0, "obs_cutoff_hz": 10.0, "deadband_rad": 0.0},
        "rewards": {
            "weights": {"tracking_lin_vel": 1.0, "tracking_ang_vel": 0.5, "ang_vel_xy": 0.05,
                        "orientation": 1.0, "torques": 2e-4, "action_rate": 0.01,
                        "feet_air_time": 2.0, "foot_slip": 0.1, "feet_phase": 1.0,
                        "stand_still": -1.0, "termination": 1.0},
            "sigma_lin": 0.25, "sigma_ang": 0.25, "sigma_phase": 0.03,
            "t_thresh_s": 0.2, "cmd_eps": 0.05, "gait_hz": 1.9, "swing_height_m": 0.04,
            "t_max_s": 20.0,
        },
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, doc in (("bruce_leg.json", bruce()), ("parallelogram_fourbar.json", parallelogram()),
                      ("env_default.json", env_default())):
        (args.out / name).write_text(json.dumps(doc, indent=2) + "\n")
        print(f"wrote {args.out / name}")


if __name__ == "__main__":
    main()
