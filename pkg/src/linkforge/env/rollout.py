"""Pluggable-policy rollout harness and trace files.

Binary trace layout (little-endian)::

    magic   4s   b"LFTR"
    version u32  1
    n_steps u32
    n_envs  u32
    n_field u32
    per field:
        name_len u16, name (ascii), ndim u32, dims u32 * ndim
    data: for each field in order, float64 array of shape (n_steps, n_envs, *dims)

``dims`` are the per-env trailing dimensions (empty for scalars).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..assembly import MechanismModel, VariantSpec
from . import rng
from .config import TERMS, EnvConfig
from .env import BatchedEnv

MAGIC = b"LFTR"
VERSION = 1


@dataclass
class Trace:
    env_ids: np.ndarray
    fields: dict = field(default_factory=dict)  # name -> (T, B, ...) float64

    @property
    def n_steps(self) -> int:
        return next(iter(self.fields.values())).shape[0] if self.fields else 0

    def env(self, env_id) -> "Trace":
        """Sub-trace of one environment, by global id."""
        k = int(np.flatnonzero(self.env_ids == env_id)[0])
        return Trace(self.env_ids[k:k + 1], {n: v[:, k:k + 1] for n, v in self.fields.items()})

    def reward_summary(self) -> dict:
        """Mean weighted value per reward term over all steps and envs."""
        return {t: float(np.mean(self.fields[f"r_{t}"])) for t in TERMS}


def zero_policy(n_act):
    def policy(obs, step, env_ids):
        return np.zeros((obs.shape[0], n_act))
    return policy


def sine_policy(n_act, amplitude=0.2, freq_hz=1.9, ctrl_dt=0.02, channels=None):
    """Antiphase sinusoid on the given actuator channels (both sides of the robot)."""
    channels = list(range(n_act)) if channels is None else list(channels)
    half = len(channels) // 2

    def policy(obs, step, env_ids):
        a = np.zeros((obs.shape[0], n_act))
        ph = 2.0 * np.pi * freq_hz * step * ctrl_dt
        for i, c in enumerate(channels):
            a[:, c] = amplitude * np.sin(ph + (np.pi if i >= half else 0.0))
        return a
    return policy


def random_policy(n_act, seed, scale=0.1):
    """Uniform actions from the counter-based generator (batch-order independent)."""
    def policy(obs, step, env_ids):
        return rng.uniform(seed, env_ids, step, "policy", n_act, -scale, scale)
    return policy


def rollout(model: MechanismModel, env_config: EnvConfig, policy, n_steps: int, seed=None,
            env_ids=None, n_envs=1, variant: VariantSpec | None = None) -> Trace:
    """Run ``policy(obs, step, env_ids) -> actions`` for ``n_steps`` control steps."""
    if seed is not None and seed != env_config.seed:
        from dataclasses import replace
        env_config = replace(env_config, seed=int(seed))
    env = BatchedEnv(model, env_config, env_ids=env_ids, n_envs=n_envs, variant=variant)
    obs = env.last_obs
    rec = {k: [] for k in ("obs", "action", "reward", "q", "qd", "tau", "base_v", "tilt",
                           "kick", "done", "command")}
    for t in TERMS:
        rec[f"r_{t}"] = []
    for step in range(n_steps):
        a = np.asarray(policy(obs, step, env.env_ids), dtype=float)
        rec["obs"].append(obs)
        out = env.step(a)
        rec["action"].append(a)
        rec["reward"].append(out.reward)
        for t in TERMS:
            rec[f"r_{t}"].append(out.breakdown[t])
        rec["q"].append(env.q.copy())
        rec["qd"].append(env.qd.copy())
        rec["tau"].append(env.tau.copy())
        rec["base_v"].append(env.base_v.copy())
        rec["tilt"].append(env.tilt.copy())
        rec["kick"].append(out.info["kick"])
        rec["done"].append(out.done.astype(float))
        rec["command"].append(env.command.copy())
        obs = out.obs
    fields = {k: np.asarray(v, dtype=np.float64) for k, v in rec.items()}
    return Trace(env.env_ids.copy(), fields)


def write_trace_binary(trace: Trace, path):
    T = trace.n_steps
    B = len(trace.env_ids)
    parts = [MAGIC, struct.pack("<IIII", VERSION, T, B, len(trace.fields))]
    for name, arr in trace.fields.items():
        dims = arr.shape[2:]
        raw = name.encode("ascii")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<I{len(dims)}I", len(dims), *dims))
    for arr in trace.fields.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_trace_binary(path) -> dict:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a trace file")
    version, T, B, nf = struct.unpack_from("<IIII", buf, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported trace version {version}")
    off = 20
    heads = []
    for _ in range(nf):
        (ln,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + ln].decode("ascii")
        off += ln
        (nd,) = struct.unpack_from("<I", buf, off)
        off += 4
        dims = struct.unpack_from(f"<{nd}I", buf, off)
        off += 4 * nd
        heads.append((name, dims))
    out = {}
    for name, dims in heads:
        count = T * B * int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(T, B, *dims)
        off += 8 * count
    return out


def write_trace_csv(trace: Trace, path):
    """One row per (step, env); array fields are flattened into indexed columns."""
    names, cols = [], []
    for name, arr in trace.fields.items():
        flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
        if arr.ndim == 2:
            names.append(name)
        else:
            names.extend(f"{name}_{i}" for i in range(flat.shape[2]))
        cols.append(flat)
    data = np.concatenate(cols, axis=2)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "env"] + names)
        for t in range(data.shape[0]):
            for b in range(data.shape[1]):
                w.writerow([t, int(trace.env_ids[b])] + [repr(float(v)) for v in data[t, b]])
