"""Counter-based random numbers keyed by (seed, env, step, channel, index).

Each value is a pure function of its key, so draws do not depend on batch
size, batch order or how many other draws happened before. The mixer is the
splitmix64 finalizer applied once per key component.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_INV53 = 1.0 / 9007199254740992.0

# channel ids; new channels must be appended so old streams stay unchanged
CHANNELS = {name: i for i, name in enumerate((
    "mass", "kp", "com", "imu_displacement", "imu_tilt", "contact_offset", "terrain",
    "obs_latency", "action_latency", "obs_noise", "kick_dir", "kick_mag", "small_kick_dir",
    "small_kick_mag", "commands", "command_zero", "policy", "bench",
))}


def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hash_keys(seed, env, step, channel, index):
    """uint64 hashes broadcast over the key arrays."""
    with np.errstate(over="ignore"):
        h = _mix(np.asarray(seed, dtype=np.uint64) + np.zeros((), np.uint64))
        for part in (env, step, channel, index):
            h = _mix(h ^ np.asarray(part).astype(np.uint64))
    return h


def _channel(channel):
    return CHANNELS[channel] if isinstance(channel, str) else int(channel)


def uniform(seed, env, step, channel, width, lo=0.0, hi=1.0):
    """Uniform draws on [lo, hi), shape (len(env), width)."""
    env = np.asarray(env, dtype=np.int64).reshape(-1, 1)
    step = np.asarray(step, dtype=np.int64)
    if step.ndim == 1:
        step = step.reshape(-1, 1)
    idx = np.arange(width, dtype=np.int64).reshape(1, -1)
    h = hash_keys(seed, env, step, _channel(channel), idx)
    u = (h >> _S11).astype(np.float64) * _INV53
    return lo + (hi - lo) * u


def normal(seed, env, step, channel, width):
    """Standard normal draws via Box-Muller on paired uniforms."""
    u = uniform(seed, env, step, channel, 2 * width)
    u1 = 1.0 - u[:, 0::2]  # in (0, 1]
    u2 = u[:, 1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def choice(seed, env, step, channel, options):
    """One element of ``options`` per env, uniformly."""
    options = np.asarray(options)
    u = uniform(seed, env, step, channel, 1)[:, 0]
    k = np.minimum((u * len(options)).astype(np.int64), len(options) - 1)
    return options[k]
