"""Per-episode observation and action delays in whole control steps."""

from __future__ import annotations

import numpy as np

from . import rng


def sample_obs_delay(seed, env_ids, episode_step, sigma_s, ctrl_dt):
    """Gaussian latency clamped at zero and rounded to whole steps."""
    if sigma_s == 0:
        return np.zeros(len(env_ids), dtype=np.int64)
    x = sigma_s * rng.normal(seed, env_ids, episode_step, "obs_latency", 1)[:, 0]
    return np.rint(np.maximum(x, 0.0) / ctrl_dt).astype(np.int64)


def sample_action_delay(seed, env_ids, episode_step, delays=(0, 1, 2)):
    return rng.choice(seed, env_ids, episode_step, "action_latency", delays).astype(np.int64)


class DelayLine:
    """Batched fixed-length delay with a per-environment lag."""

    def __init__(self, lags, width, fill=0.0):
        self.lags = np.asarray(lags, dtype=np.int64)
        depth = int(self.lags.max(initial=0)) + 1
        B = len(self.lags)
        self.buf = np.empty((B, depth, width))
        self.buf[...] = np.asarray(fill, dtype=float).reshape(-1, 1, width) if np.ndim(fill) else fill
        self._rows = np.arange(B)

    def reset(self, mask, lags, fill):
        mask = np.asarray(mask)
        self.lags[mask] = lags
        need = int(self.lags.max(initial=0)) + 1
        if need > self.buf.shape[1]:
            pad = np.repeat(self.buf[:, -1:], need - self.buf.shape[1], axis=1)
            self.buf = np.concatenate([self.buf, pad], axis=1)
        self.buf[mask] = np.asarray(fill, dtype=float)[:, None, :] if np.ndim(fill) == 2 else fill

    def __call__(self, x):
        self.buf[:, 1:] = self.buf[:, :-1].copy()
        self.buf[:, 0] = x
        return self.buf[self._rows, self.lags].copy()


def latency_apply(stream, delay, fill=0.0):
    """Delay a (T, ...) stream by ``delay`` steps; the first steps hold ``fill``.

    With a per-env ``delay`` array the stream must be (T, B, ...).
    """
    x = np.asarray(stream, dtype=float)
    d = np.asarray(delay, dtype=np.int64)
    out = np.empty_like(x)
    if d.ndim == 0:
        k = min(int(d), len(x))
        out[:k] = fill
        out[k:] = x[:len(x) - k] if k else x
        return out
    for b, k in enumerate(np.minimum(d, len(x))):
        out[:k, b] = fill
        out[k:, b] = x[:len(x) - k, b] if k else x[:, b]
    return out


def episode_delays(config, env_ids, episode_step):
    """(obs_delay, action_delay) for the listed environments."""
    obs = (sample_obs_delay(config.seed, env_ids, episode_step, config.latency.obs_sigma_s,
                            config.ctrl_dt)
           if config.has("obs_latency") else np.zeros(len(env_ids), dtype=np.int64))
    act = (sample_action_delay(config.seed, env_ids, episode_step, config.latency.action_delays)
           if config.has("action_latency") else np.zeros(len(env_ids), dtype=np.int64))
    return obs, act
