from dataclasses import replace

import numpy as np
import pytest

from linkforge.env import (BatchedEnv, load_env_config, random_policy, read_trace_binary,
                           rollout, sine_policy, write_trace_binary, write_trace_csv,
                           zero_policy)
from linkforge.env.env import BASE_TAU
from linkforge.errors import NonFinite
from linkforge.sim import build_physics


def comb_fraction(x, f0, dt):
    """Share of non-DC spectral energy within one bin of the harmonics of f0."""
    s = x - x.mean()
    P = np.abs(np.fft.rfft(s)) ** 2
    f = np.fft.rfftfreq(len(s), dt)
    k = np.round(f / f0)
    on = (k >= 1) & (np.abs(f - k * f0) <= f[1] + 1e-9)
    return P[on].sum() / P[1:].sum()


def test_zero_policy_holds_nominal(bruce):
    cfg = load_env_config(stage=1)
    tr = rollout(bruce, cfg, zero_policy(16), 500, n_envs=4)
    q0 = build_physics(bruce).q0
    assert np.max(np.abs(tr.fields["q"] - q0)) < 1e-3
    assert not tr.fields["done"].any()


def test_zero_policy_stand_still_dominates(bruce):
    tr = rollout(bruce, load_env_config(stage=1), zero_policy(16), 200, n_envs=2)
    summary = tr.reward_summary()
    assert max(summary, key=lambda k: abs(summary[k])) == "stand_still"


def test_binary_trace_byte_identical(bruce, tmp_path):
    cfg = load_env_config(stage=4)
    paths = []
    for i in range(2):
        tr = rollout(bruce, cfg, random_policy(16, seed=9), 60, seed=4, n_envs=3)
        paths.append(tmp_path / f"t{i}.bin")
        write_trace_binary(tr, paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    back = read_trace_binary(paths[0])
    for k, v in tr.fields.items():
        assert np.array_equal(back[k], v)


def test_seed_changes_trace(bruce):
    cfg = load_env_config(stage=4)
    a = rollout(bruce, cfg, zero_policy(16), 20, seed=1)
    b = rollout(bruce, cfg, zero_policy(16), 20, seed=2)
    assert not np.array_equal(a.fields["obs"], b.fields["obs"])


def test_batch_permutation_invariance(bruce):
    cfg = load_env_config(stage=4)
    ids = np.array([0, 1, 2, 3, 4])
    perm = np.array([3, 0, 4, 2, 1])
    a = rollout(bruce, cfg, random_policy(16, seed=2), 120, env_ids=ids)
    b = rollout(bruce, cfg, random_policy(16, seed=2), 120, env_ids=perm)
    for e in ids:
        ta, tb = a.env(e), b.env(e)
        for k in ta.fields:
            assert ta.fields[k].tobytes() == tb.fields[k].tobytes(), (e, k)


def test_kicks_on_schedule(bruce):
    cfg = load_env_config(stage=2)
    tr = rollout(bruce, cfg, zero_policy(16), 160, n_envs=6)
    kick = np.linalg.norm(tr.fields["kick"], axis=2)
    steps = np.arange(160)
    big = (steps > 0) & (steps % 50 == 0)
    small = (steps > 0) & (steps % 10 == 0) & ~big
    assert np.all((kick[big] >= 0.2) & (kick[big] <= 0.45))
    assert np.all((kick[small] >= 0.05) & (kick[small] <= 0.1))
    assert np.all(kick[~(big | small)] == 0.0)
    # the kick is the base velocity jump at that step
    decay = np.exp(-cfg.ctrl_dt / BASE_TAU)
    v = tr.fields["base_v"]
    for k in np.flatnonzero(big):
        jump = v[k] / decay - v[k - 1]
        assert np.allclose(jump, tr.fields["kick"][k], atol=1e-12)


def test_stage_one_has_no_kicks(bruce):
    tr = rollout(bruce, load_env_config(stage=1), zero_policy(16), 110, n_envs=2)
    assert np.all(tr.fields["kick"] == 0.0)


def test_sine_policy_phase_term_periodic_at_gait_frequency(bruce):
    cfg = load_env_config(stage=4)
    # steady nonzero commands so the phase term stays switched on
    cfg = replace(cfg, commands=replace(cfg.commands, zero_prob=0.0, resample_steps=10 ** 6))
    knees = [bruce.act_index("knee_l"), bruce.act_index("knee_r")]
    on = rollout(bruce, cfg, sine_policy(16, 0.3, 1.9, cfg.ctrl_dt, knees), 500, n_envs=6)
    off = rollout(bruce, cfg, sine_policy(16, 0.3, 1.3, cfg.ctrl_dt, knees), 500, n_envs=6)
    x_on, x_off = on.fields["r_feet_phase"], off.fields["r_feet_phase"]
    on_frac = [comb_fraction(x_on[:, b], 1.9, cfg.ctrl_dt) for b in range(6)]
    off_frac = [comb_fraction(x_off[:, b], 1.9, cfg.ctrl_dt) for b in range(6)]
    assert min(on_frac) > 0.7
    assert max(off_frac) < 0.5
    for b in range(6):
        s = x_on[:, b] - x_on[:, b].mean()
        f = np.fft.rfftfreq(len(s), cfg.ctrl_dt)
        peak = f[1 + np.argmax(np.abs(np.fft.rfft(s))[1:])]
        assert abs(peak / 1.9 - round(peak / 1.9)) < 1e-9


def test_action_shape_checked(bruce):
    env = BatchedEnv(bruce, load_env_config(stage=1), n_envs=2)
    with pytest.raises(ValueError):
        env.step(np.zeros((2, 15)))


def test_blow_up_reports_step(bruce):
    cfg = replace(load_env_config(stage=1), sim_dt=0.02)
    with pytest.raises(NonFinite) as err:
        rollout(bruce, cfg, random_policy(16, seed=0, scale=1.0), 50, n_envs=2)
    assert err.value.step is not None


def test_csv_trace(bruce, tmp_path):
    tr = rollout(bruce, load_env_config(stage=1), zero_policy(16), 3, n_envs=2)
    write_trace_csv(tr, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    head = lines[0].split(",")
    assert head[:3] == ["step", "env", "obs_0"]
    assert "reward" in head and "r_stand_still" in head
    assert len(lines) == 1 + 3 * 2


def test_observation_width(bruce):
    env = BatchedEnv(bruce, load_env_config(stage=4), n_envs=2)
    assert env.last_obs.shape == (2, 3 * (7 + 2 * 16))
