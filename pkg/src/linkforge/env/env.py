"""Batched locomotion environment around the joint-space simulator.

The base is held up by a support, so the closed-chain joint dynamics run
without a gravity load. A reduced floating-base model supplies what the
observation and reward need:

* horizontal base velocity that decays with time constant ``BASE_TAU`` and
  receives kicks as velocity impulses,
* roll/pitch tilt as a damped spring that leans toward the COM offset and is
  excited by kicks (``dtheta = dv / COM_HEIGHT``),
* feet placed by the leg kinematics over a per-environment height field.

Contacts are flags, not forces: a foot is in contact when its clearance above
the terrain is below ``config.contact_threshold``.

Every random draw goes through :mod:`linkforge.env.rng` keyed by the global
env id, so a trace depends only on (seed, env id, config, policy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..assembly import MechanismModel, VariantSpec
from ..sim import build_physics, foot_positions
from . import rng
from .config import TERMS, EnvConfig
from .filters import BatchButterworth, deadband
from .latency import DelayLine, episode_delays
from .observation import ObservationWindow, obs_width, observation_noise, projected_gravity
from .rewards import RewardInputs, phase_reference, reward

BASE_TAU = 0.5        # s, decay of base velocity
COM_HEIGHT = 0.4      # m
TILT_STIFFNESS = 25.0  # 1/s^2
TILT_DAMPING = 6.0    # 1/s
TERRAIN_CELLS = 16
TERRAIN_CELL_M = 0.1
EPISODE_KEY = 1 << 40  # step-key offset for per-episode draws


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1),
                     np.stack([z, s, c], -1)], -2)


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1),
                     np.stack([-s, z, c], -1)], -2)


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1),
                     np.stack([z, z, o], -1)], -2)


def _matmul(A, B):
    """Batched 3x3 products without BLAS, so each env rounds the same way."""
    return (A[..., :, 0, None] * B[..., None, 0, :] + A[..., :, 1, None] * B[..., None, 1, :]
            + A[..., :, 2, None] * B[..., None, 2, :])


def _matvec(A, v):
    return (A[..., 0] * v[..., 0, None] + A[..., 1] * v[..., 1, None]
            + A[..., 2] * v[..., 2, None])


@dataclass
class StepResult:
    obs: np.ndarray
    reward: np.ndarray
    breakdown: dict
    done: np.ndarray
    info: dict


class BatchedEnv:
    """``len(env_ids)`` independent environments stepped together."""

    def __init__(self, model: MechanismModel, config: EnvConfig, env_ids=None, n_envs=None,
                 variant: VariantSpec | None = None, compiled=True):
        if env_ids is None:
            env_ids = np.arange(1 if n_envs is None else n_envs)
        self.env_ids = np.asarray(env_ids, dtype=np.int64)
        self.B = len(self.env_ids)
        self.model, self.config, self.compiled = model, config, compiled
        self.phys = build_physics(model, variant)
        self.n_act = len(model.actuator_names)
        self.width = obs_width(self.n_act)
        lay = self.phys.layout
        self._s = (lay.s_act, lay.s_col, lay.s_val)
        self.q_nom_act = np.asarray(model.q_nom_act, dtype=float)
        self.minv0 = 1.0 / self.phys.inertia
        self._foot_pitch = self._foot_pitch_columns()
        self.window = ObservationWindow(config.history, self.width, self.B)
        self.global_step = 0
        self.episode = np.zeros(self.B, dtype=np.int64)
        self._alloc()
        self.reset()

    # -- setup -------------------------------------------------------------
    def _alloc(self):
        B, n, na = self.B, self.phys.n, self.n_act
        cfg = self.config
        self.q = np.zeros((B, n))
        self.qd = np.zeros((B, n))
        self.tau = np.zeros((B, na))
        self.t = np.zeros(B, dtype=np.int64)
        self.base_pos = np.zeros((B, 2))
        self.base_v = np.zeros((B, 2))
        self.yaw = np.zeros(B)
        self.yaw_rate = np.zeros(B)
        self.tilt = np.zeros((B, 2))       # roll, pitch
        self.tilt_rate = np.zeros((B, 2))
        self.kick = np.zeros((B, 2))
        self.command = np.zeros((B, 3))
        self.prev_action = np.zeros((B, na))
        self.mass_scale = np.ones(B)
        self.kp = np.full((B, na), self.phys.kp)
        self.minv = np.broadcast_to(self.minv0, (B, n)).copy()
        self.com_offset = np.zeros((B, 3))
        self.imu_disp = np.zeros((B, 3))
        self.imu_rot = np.broadcast_to(np.eye(3), (B, 3, 3)).copy()
        self.contact_offset = np.zeros((B, 2, 3))
        self.terrain = np.zeros((B, TERRAIN_CELLS, TERRAIN_CELLS))
        self.t_air = np.zeros((B, 2))
        self.contact = np.ones((B, 2), dtype=bool)
        self.foot_world = np.zeros((B, 2, 3))
        self.foot_pitch = np.zeros((B, 2))
        self.obs_lag = np.zeros(B, dtype=np.int64)
        self.act_lag = np.zeros(B, dtype=np.int64)
        n_sens = 4 + na
        self.obs_delay = DelayLine(self.obs_lag, n_sens)
        self.act_delay = DelayLine(self.act_lag, na)
        fs = 1.0 / cfg.ctrl_dt
        self.obs_filter = BatchButterworth(cfg.filters.obs_cutoff_hz, fs, (B, n_sens))
        self.act_filter = BatchButterworth(cfg.filters.action_cutoff_hz, fs, (B, na))
        feet = foot_positions(self.phys, self.phys.q0[None])[0]
        self.base_height = -float(np.min(feet[:, 2])) if len(feet) else 0.0

    def _foot_pitch_columns(self):
        cols = []
        for spec in self.model.legs.values():
            five = self.model.mechanism(spec["five_bar"])
            four = self.model.mechanism(spec["four_bar"])
            cols.append((five.passive[0], four.output))
        return cols

    # -- randomization -----------------------------------------------------
    def _draw(self, ids, channel, width, lo, hi):
        key = EPISODE_KEY + self.episode[ids]
        return rng.uniform(self.config.seed, self.env_ids[ids], key, channel, width, lo, hi)

    def reset(self, mask=None):
        """Start new episodes for the masked envs (all when ``mask`` is None)."""
        cfg, rz = self.config, self.config.randomization
        ids = np.arange(self.B) if mask is None else np.flatnonzero(mask)
        if len(ids) == 0:
            return
        k = len(ids)
        self.q[ids] = self.phys.q0
        self.qd[ids] = 0.0
        self.tau[ids] = 0.0
        self.t[ids] = 0
        self.base_pos[ids] = 0.0
        self.base_v[ids] = 0.0
        self.yaw[ids] = 0.0
        self.yaw_rate[ids] = 0.0
        self.tilt_rate[ids] = 0.0
        self.kick[ids] = 0.0
        self.prev_action[ids] = 0.0
        self.t_air[ids] = 0.0

        ms = self._draw(ids, "mass", 1, *rz.mass_scale)[:, 0] if cfg.has("mass") else np.ones(k)
        self.mass_scale[ids] = ms
        self.minv[ids] = self.minv0[None, :] / ms[:, None]
        kpo = (self._draw(ids, "kp", self.n_act, *rz.kp_offset) if cfg.has("kp")
               else np.zeros((k, self.n_act)))
        self.kp[ids] = np.maximum(self.phys.kp + kpo, 0.0)
        self.com_offset[ids] = (self._draw(ids, "com", 3, *rz.com_offset) if cfg.has("com")
                                else 0.0)
        self.imu_disp[ids] = (self._draw(ids, "imu_displacement", 3, *rz.imu_displacement)
                              if cfg.has("imu_displacement") else 0.0)
        if cfg.has("imu_tilt"):
            a = self._draw(ids, "imu_tilt", 3, *rz.imu_tilt)
            self.imu_rot[ids] = _matmul(_matmul(_rot_z(a[:, 2]), _rot_y(a[:, 1])),
                                        _rot_x(a[:, 0]))
        else:
            self.imu_rot[ids] = np.eye(3)
        if cfg.has("contact_offset"):
            lo = np.array([rz.foot_contact_x[0], rz.foot_contact_y[0], rz.foot_contact_z[0]] * 2)
            hi = np.array([rz.foot_contact_x[1], rz.foot_contact_y[1], rz.foot_contact_z[1]] * 2)
            u = self._draw(ids, "contact_offset", 6, 0.0, 1.0)
            self.contact_offset[ids] = (lo + (hi - lo) * u).reshape(k, 2, 3)
        else:
            self.contact_offset[ids] = 0.0
        if cfg.has("terrain"):
            self.terrain[ids] = self._draw(ids, "terrain", TERRAIN_CELLS ** 2,
                                           *rz.terrain_height).reshape(k, TERRAIN_CELLS,
                                                                       TERRAIN_CELLS)
        else:
            self.terrain[ids] = 0.0
        # the support holds the base at the COM lean equilibrium
        self.tilt[ids] = self._lean(ids)

        obs_lag, act_lag = episode_delays(cfg, self.env_ids[ids], EPISODE_KEY + self.episode[ids])
        self.obs_lag[ids] = obs_lag
        self.act_lag[ids] = act_lag
        self.command[ids] = 0.0
        self._resample_commands(ids)

        self.foot_world[ids], self.foot_pitch[ids] = self._feet(ids)
        clearance = self._clearance(ids)
        self.contact[ids] = clearance < cfg.contact_threshold

        sensors = self._sensors(ids)
        self.obs_delay.reset(ids, obs_lag, sensors)
        self.act_delay.reset(ids, act_lag, np.zeros((k, self.n_act)))
        sel = np.zeros(self.B, dtype=bool)
        sel[ids] = True
        full = np.zeros((self.B, sensors.shape[1]))
        full[ids] = sensors
        self.obs_filter.settle(full, sel)
        self.act_filter.settle(np.zeros((self.B, self.n_act)), sel)
        self._initial_observation(ids, sensors)
        self.last_obs = self.window.flat()

    def _initial_observation(self, ids, sensors):
        """Fill the history of restarted envs with their first observation."""
        cfg = self.config
        o = np.concatenate([sensors[:, :4], self.command[ids], sensors[:, 4:],
                            np.zeros((len(ids), self.n_act))], axis=1)
        amp = cfg.disturbances.obs_noise if cfg.has("obs_noise") else 0.0
        o = o + observation_noise(cfg.seed, self.env_ids[ids], self.global_step, self.n_act, amp)
        self.window.buf[ids] = o[:, None, :]
        self.window.ready[ids] = True

    def _lean(self, ids):
        c = self.com_offset[ids]
        return np.stack([-c[:, 1], c[:, 0]], axis=1) / COM_HEIGHT

    def _resample_commands(self, ids):
        cfg = self.config
        if not cfg.has("commands") or len(ids) == 0:
            return
        cc = cfg.commands
        key = self.t[ids] // cc.resample_steps + EPISODE_KEY * (self.episode[ids] + 1)
        env = self.env_ids[ids]
        u = rng.uniform(cfg.seed, env, key, "commands", 3)
        lo = np.array([cc.lin_x[0], cc.lin_y[0], cc.yaw[0]])
        hi = np.array([cc.lin_x[1], cc.lin_y[1], cc.yaw[1]])
        cmd = lo + (hi - lo) * u
        zero = rng.uniform(cfg.seed, env, key, "command_zero", 1)[:, 0] < cc.zero_prob
        cmd[zero] = 0.0
        self.command[ids] = cmd

    # -- kinematics and sensing -------------------------------------------
    def _body_rotation(self, ids):
        roll, pitch = self.tilt[ids, 0], self.tilt[ids, 1]
        return _matmul(_rot_z(self.yaw[ids]), _matmul(_rot_y(pitch), _rot_x(roll)))

    def _feet(self, ids):
        q = self.q[ids]
        rel = foot_positions(self.phys, q)            # (k, F, 3)
        rel = rel + self.contact_offset[ids]
        rel[..., 2] += self.base_height
        R = self._body_rotation(ids)
        world = np.stack([_matvec(R, rel[:, f]) for f in range(rel.shape[1])], axis=1)
        world[..., 0] += self.base_pos[ids, 0, None]
        world[..., 1] += self.base_pos[ids, 1, None]
        kin = None
        pitch = []
        for shank, ankle in self._foot_pitch:
            vals = []
            for name in (shank, ankle):
                if name in self.phys.coords:
                    vals.append(q[:, self.phys.index(name)])
                else:
                    if kin is None:
                        kin = self.phys.kinematic(q)
                    vals.append(kin[:, self.model.joint_index(name)])
            pitch.append(vals[0] + vals[1])
        return world, np.stack(pitch, axis=1)

    def _terrain_height(self, ids, xy):
        ix = np.floor(xy[..., 0] / TERRAIN_CELL_M).astype(np.int64) % TERRAIN_CELLS
        iy = np.floor(xy[..., 1] / TERRAIN_CELL_M).astype(np.int64) % TERRAIN_CELLS
        rows = np.arange(len(ids))[:, None]
        return self.terrain[ids][rows, ix, iy]

    def _clearance(self, ids):
        fw = self.foot_world[ids]
        return fw[..., 2] - self._terrain_height(ids, fw[..., :2])

    def _actuator_positions(self, q):
        s_act, s_col, s_val = self._s
        out = np.broadcast_to(self.phys.a0, (q.shape[0], self.n_act)).copy()
        for a, c, v in zip(s_act, s_col, s_val):
            out[:, a] += v * (q[:, c] - self.phys.q0[c])
        return out

    def _sensors(self, ids):
        """Clean IMU and joint readings: [yaw_rate, g_proj(3), q_act - q_nom]."""
        R = _matmul(self._body_rotation(ids), self.imu_rot[ids])
        g = projected_gravity(R)
        omega = np.stack([self.tilt_rate[ids, 0], self.tilt_rate[ids, 1], self.yaw_rate[ids]], 1)
        Ri = self.imu_rot[ids]
        gyro_z = Ri[:, 0, 2] * omega[:, 0] + Ri[:, 1, 2] * omega[:, 1] + Ri[:, 2, 2] * omega[:, 2]
        joints = self._actuator_positions(self.q[ids]) - self.q_nom_act
        return np.concatenate([gyro_z[:, None], g, joints], axis=1)

    def _observe(self):
        cfg = self.config
        ids = np.arange(self.B)
        s = self.obs_delay(self._sensors(ids))
        if cfg.filters.enabled:
            s = self.obs_filter(s)
            g = s[:, 1:4]
            s[:, 1:4] = g / np.sqrt(np.sum(g * g, axis=1, keepdims=True))
            s = deadband(s, cfg.filters.deadband)
        o = np.concatenate([s[:, :4], self.command, s[:, 4:], self.prev_action], axis=1)
        amp = cfg.disturbances.obs_noise if cfg.has("obs_noise") else 0.0
        o = o + observation_noise(cfg.seed, self.env_ids, self.global_step, self.n_act, amp)
        self.measured = o
        return self.window.push(o)

    # -- stepping ----------------------------------------------------------
    def _kicks(self):
        cfg, d = self.config, self.config.disturbances
        self.kick[:] = 0.0
        step = self.t
        big = np.zeros(self.B, dtype=bool)
        if cfg.has("kicks") and d.kick_interval > 0:
            big = (step > 0) & (step % d.kick_interval == 0)
            self._apply_kick(big, "kick_dir", "kick_mag", d.kick_velocity)
        if cfg.has("small_kicks") and d.small_kick_interval > 0:
            small = (step > 0) & (step % d.small_kick_interval == 0) & ~big
            self._apply_kick(small, "small_kick_dir", "small_kick_mag", d.small_kick_velocity)

    def _apply_kick(self, mask, ch_dir, ch_mag, vel):
        ids = np.flatnonzero(mask)
        if len(ids) == 0:
            return
        env, step = self.env_ids[ids], self.global_step
        ang = rng.uniform(self.config.seed, env, step, ch_dir, 1, 0.0, 2.0 * np.pi)[:, 0]
        mag = rng.uniform(self.config.seed, env, step, ch_mag, 1, *vel)[:, 0]
        dv = np.stack([mag * np.cos(ang), mag * np.sin(ang)], axis=1)
        self.kick[ids] = dv
        self.base_v[ids] += dv
        # a horizontal push tips the body about the opposite axis
        self.tilt_rate[ids, 0] += -dv[:, 1] / COM_HEIGHT
        self.tilt_rate[ids, 1] += dv[:, 0] / COM_HEIGHT

    def _base_dynamics(self):
        cfg = self.config
        h = cfg.sim_dt
        ids = np.arange(self.B)
        lean = self._lean(ids)
        for _ in range(cfg.n_substeps):
            acc = -TILT_STIFFNESS * (self.tilt - lean) - TILT_DAMPING * self.tilt_rate
            self.tilt_rate += h * acc
            self.tilt += h * self.tilt_rate
        decay = np.exp(-cfg.ctrl_dt / BASE_TAU)
        self.base_v *= decay
        self.yaw_rate *= decay
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        self.base_pos[:, 0] += cfg.ctrl_dt * (c * self.base_v[:, 0] - s * self.base_v[:, 1])
        self.base_pos[:, 1] += cfg.ctrl_dt * (s * self.base_v[:, 0] + c * self.base_v[:, 1])
        self.yaw += cfg.ctrl_dt * self.yaw_rate

    def step(self, action) -> StepResult:
        cfg = self.config
        a = np.asarray(action, dtype=float)
        if a.shape != (self.B, self.n_act):
            raise ValueError(f"action must have shape {(self.B, self.n_act)}, got {a.shape}")
        cmd_due = np.flatnonzero((self.t > 0) & (self.t % cfg.commands.resample_steps == 0))
        self._resample_commands(cmd_due)

        u = self.act_delay(a)
        if cfg.filters.enabled:
            u = deadband(self.act_filter(u), cfg.filters.deadband)
        target = self.q_nom_act + u
        self.q, self.qd, self.tau = self.phys.step(
            self.q, self.qd, target, self.kp, self.minv, cfg.sim_dt, cfg.n_substeps,
            step_index=self.global_step, compiled=self.compiled)

        self._kicks()
        self._base_dynamics()
        ids = np.arange(self.B)
        prev_feet, prev_pitch = self.foot_world, self.foot_pitch
        self.foot_world, self.foot_pitch = self._feet(ids)
        clearance = self._clearance(ids)
        contact = clearance < cfg.contact_threshold
        first = contact & ~self.contact
        t_air = self.t_air + cfg.ctrl_dt
        self.t_air = np.where(contact, 0.0, t_air)
        self.contact = contact
        self.t += 1

        obs = self._observe()
        tsec = self.t * cfg.ctrl_dt
        tilt_norm = np.sqrt(np.sum(self.tilt * self.tilt, axis=1))
        done = tilt_norm > cfg.tilt_limit
        g_true = projected_gravity(self._body_rotation(ids))
        v_foot = (self.foot_world - prev_feet) / cfg.ctrl_dt
        w_foot = np.zeros_like(v_foot)
        w_foot[..., 1] = (self.foot_pitch - prev_pitch) / cfg.ctrl_dt
        inputs = RewardInputs(
            command=self.command.copy(), v_local=self.base_v.copy(), w_base=self.yaw_rate.copy(),
            omega_xy=self.tilt_rate.copy(), rot_up_xy=g_true[:, :2], tau=self.tau,
            action=a, prev_action=self.prev_action, t_air=t_air, first_contact=first,
            contact=contact, v_foot=v_foot, w_foot=w_foot, z_foot=clearance,
            r_z=phase_reference(tsec, cfg.rewards.gait_hz, cfg.rewards.swing_height,
                                clearance.shape[1]),
            q_joint=self.measured[:, 7:7 + self.n_act], q_default=np.zeros(self.n_act),
            done=done, t=tsec)
        total, breakdown = reward(inputs, cfg.rewards, cfg.reward_terms)
        for k in TERMS:
            breakdown.setdefault(k, np.zeros(self.B))
        info = {"kick": self.kick.copy(), "contact": contact, "t": tsec,
                "timeout": self.t * cfg.ctrl_dt >= cfg.rewards.t_max}
        self.prev_action = a.copy()
        self.global_step += 1

        ended = done | info["timeout"]
        if ended.any():
            self.episode[ended] += 1
            self.reset(ended)
            obs = self.window.flat()
        self.last_obs = obs
        return StepResult(obs, total, breakdown, done, info)

    def state_vector(self):
        """Physics and base state concatenated per env, (B, n_state)."""
        return np.concatenate([self.q, self.qd, self.base_pos, self.base_v, self.tilt,
                               self.tilt_rate, self.yaw[:, None]], axis=1)
