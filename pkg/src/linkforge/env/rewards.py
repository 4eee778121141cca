"""Locomotion reward terms, batched over environments.

Every term returns the raw value ``r`` (penalties carry their own minus sign);
the total is the weighted sum over the terms active for the curriculum stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TERMS, RewardWeights


@dataclass
class RewardInputs:
    command: np.ndarray        # (B, 3) vx, vy, yaw rate
    v_local: np.ndarray        # (B, 2) base linear velocity in the heading frame
    w_base: np.ndarray         # (B,)  base yaw rate
    omega_xy: np.ndarray       # (B, 2) base roll/pitch rates
    rot_up_xy: np.ndarray      # (B, 2) xy of the body up axis in the world (tilt)
    tau: np.ndarray            # (B, n_act)
    action: np.ndarray         # (B, n_act)
    prev_action: np.ndarray    # (B, n_act)
    t_air: np.ndarray          # (B, F) air time ending at this step
    first_contact: np.ndarray  # (B, F) bool, touchdown this step
    contact: np.ndarray        # (B, F) bool
    v_foot: np.ndarray         # (B, F, 3)
    w_foot: np.ndarray         # (B, F, 3)
    z_foot: np.ndarray         # (B, F) foot clearance above terrain
    r_z: np.ndarray            # (B, F) phase height reference
    q_joint: np.ndarray        # (B, n_act)
    q_default: np.ndarray      # (B, n_act) or (n_act,)
    done: np.ndarray           # (B,) bool
    t: np.ndarray              # (B,) episode time in seconds


def phase_reference(t, gait_hz, swing_height, n_feet=2):
    """Half-rectified sine swing profile; foot k is offset by k * 2 pi / n_feet."""
    t = np.asarray(t, dtype=float)
    offs = 2.0 * np.pi * np.arange(n_feet) / n_feet
    ph = 2.0 * np.pi * gait_hz * t[..., None] + offs
    return swing_height * np.maximum(np.sin(ph), 0.0)


def _cmd_norm(x: RewardInputs):
    c = x.command
    return np.sqrt(c[:, 0] * c[:, 0] + c[:, 1] * c[:, 1] + c[:, 2] * c[:, 2])


def term_values(x: RewardInputs, w: RewardWeights) -> dict:
    cn = _cmd_norm(x)
    moving = (cn > w.cmd_eps).astype(float)
    idle = (cn < w.cmd_eps).astype(float)
    contact = x.contact.astype(float)

    dv = x.command[:, :2] - x.v_local
    dw = x.command[:, 2] - x.w_base
    da = x.action - x.prev_action
    dz = x.z_foot - x.r_z
    v_slip = np.sqrt(np.sum(x.v_foot * x.v_foot, axis=-1))
    w_slip = np.sqrt(np.sum(x.w_foot * x.w_foot, axis=-1))
    air = (x.t_air - w.t_thresh) * x.first_contact.astype(float)

    return {
        "tracking_lin_vel": np.exp(-np.sum(dv * dv, axis=1) / (2.0 * w.sigma_lin ** 2)),
        "tracking_ang_vel": np.exp(-(dw * dw) / (2.0 * w.sigma_ang ** 2)),
        "ang_vel_xy": -np.sum(x.omega_xy * x.omega_xy, axis=1),
        "orientation": -np.sum(x.rot_up_xy * x.rot_up_xy, axis=1),
        "torques": -(np.sqrt(np.sum(x.tau * x.tau, axis=1)) + np.sum(np.abs(x.tau), axis=1)),
        "action_rate": -np.sum(da * da, axis=1),
        "feet_air_time": moving * np.sum(air, axis=1),
        "foot_slip": -np.sum((v_slip + w_slip) * contact, axis=1),
        "feet_phase": moving * np.exp(-np.sum(dz * dz, axis=1) / (2.0 * w.sigma_phase ** 2)),
        "stand_still": idle * np.sum(np.abs(x.q_joint - x.q_default), axis=1),
        "termination": -1.0 * (np.asarray(x.done, bool) & (np.asarray(x.t) < w.t_max)),
    }


def reward(x: RewardInputs, weights: RewardWeights, terms=TERMS):
    """(total, breakdown) where breakdown maps term name to weighted value."""
    raw = term_values(x, weights)
    breakdown = {k: getattr(weights, k) * raw[k] for k in terms}
    total = np.zeros(x.command.shape[0])
    for k in terms:
        total = total + breakdown[k]
    return total, breakdown
