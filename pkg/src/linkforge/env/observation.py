"""Per-step observation vector, noise injection and history stacking.

Per-step layout (width 7 + 2 n_act):

    [yaw_rate, g_proj (3), command (3), q - q_nom (n_act), a_prev (n_act)]

Noise is added to the IMU block (yaw rate and g_proj) and to q - q_nom only.
The flattened history is newest first: ``[o_t, o_{t-1}, ..., o_{t-H+1}]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng


def projected_gravity(rotation):
    """World gravity direction (0, 0, -1) expressed in the body frame.

    ``rotation`` maps body to world coordinates, shape (3, 3) or (B, 3, 3).
    A +90 degree rotation about y gives (+1, 0, 0).
    """
    R = np.asarray(rotation, dtype=float)
    return -R[..., 2, :]


@dataclass
class ObsState:
    yaw_rate: np.ndarray      # (B,)
    g_proj: np.ndarray        # (B, 3)
    command: np.ndarray       # (B, 3)
    joint_offsets: np.ndarray  # (B, n_act)
    prev_action: np.ndarray   # (B, n_act)

    @property
    def batch(self) -> int:
        return self.g_proj.shape[0]


def obs_width(n_act: int) -> int:
    return 7 + 2 * n_act


def noised_mask(n_act: int) -> np.ndarray:
    m = np.zeros(obs_width(n_act), dtype=bool)
    m[0:4] = True
    m[7:7 + n_act] = True
    return m


def stack(state: ObsState) -> np.ndarray:
    return np.concatenate([state.yaw_rate[:, None], state.g_proj, state.command,
                           state.joint_offsets, state.prev_action], axis=1)


class ObservationWindow:
    """Batched history of the last H observation vectors."""

    def __init__(self, history: int, width: int, batch: int):
        if history < 1:
            raise ValueError("history must be >= 1")
        self.H, self.width, self.batch = history, width, batch
        self.buf = np.zeros((batch, history, width))
        self.ready = np.zeros(batch, dtype=bool)

    def reset(self, mask=None):
        if mask is None:
            self.ready[:] = False
        else:
            self.ready[np.asarray(mask)] = False

    def push(self, o):
        o = np.asarray(o, dtype=float)
        fresh = ~self.ready
        self.buf[:, 1:] = self.buf[:, :-1].copy()
        self.buf[:, 0] = o
        if fresh.any():
            # warm-up: the first observation fills every history slot
            self.buf[fresh] = o[fresh, None, :]
            self.ready[fresh] = True
        return self.flat()

    def flat(self) -> np.ndarray:
        return self.buf.reshape(self.batch, self.H * self.width).copy()


def observation_noise(seed, env_ids, step, n_act, amplitude):
    """Uniform noise on the noised channels, zero elsewhere, shape (B, width)."""
    width = obs_width(n_act)
    mask = noised_mask(n_act)
    if amplitude == 0:
        return np.zeros((len(env_ids), width))
    u = rng.uniform(seed, env_ids, step, "obs_noise", width, -amplitude, amplitude)
    return u * mask


def assemble_observation(state: ObsState, config, window: ObservationWindow, env_ids=None,
                         step=0):
    """Add observation noise, push into the window and return the flat history."""
    clean = stack(state)
    n_act = state.joint_offsets.shape[1]
    if env_ids is None:
        env_ids = np.arange(state.batch)
    amp = config.disturbances.obs_noise if config.has("obs_noise") else 0.0
    noisy = clean + observation_noise(config.seed, env_ids, step, n_act, amp)
    return window.push(noisy)
