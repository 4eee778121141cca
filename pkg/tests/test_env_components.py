import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal as sps
from scipy.spatial.transform import Rotation

from linkforge.env import config as cfgmod
from linkforge.env import filters, latency, observation as obsmod, rewards, rng
from linkforge.errors import ConfigError

from oracles import oracle_terms, random_inputs

N_ACT = 16


# configuration -----------------------------------------------------------------

def test_default_config_ranges():
    cfg = cfgmod.load_env_config()
    r = cfg.randomization
    assert r.mass_scale == (0.8, 1.2)
    assert r.kp_offset == (-20.0, 20.0)
    assert r.com_offset == (-0.015, 0.015)
    assert r.imu_displacement == (-0.006, 0.006)
    assert r.imu_tilt == (-0.06, 0.06)
    assert r.terrain_height == (0.0, 0.02)
    d = cfg.disturbances
    assert (d.kick_interval, d.kick_velocity) == (50, (0.2, 0.45))
    assert (d.small_kick_interval, d.small_kick_velocity) == (10, (0.05, 0.1))
    assert d.obs_noise == 0.03
    assert cfg.latency.action_delays == (0, 1, 2)
    assert cfg.ctrl_dt == 0.02
    assert cfg.rewards.gait_hz == 1.9


def test_stage_channels_monotone():
    cfg = cfgmod.load_env_config()
    prev = set()
    for s in (1, 2, 3, 4):
        ch = set(cfgmod.curriculum_stage(cfg, s).channels)
        assert prev <= ch
        prev = ch
    s1 = cfgmod.curriculum_stage(cfg, 1)
    assert not ({"kicks", "small_kicks", "terrain", "commands"} & set(s1.channels))
    assert {"mass", "kp", "com", "obs_noise"} <= set(s1.channels)
    s4 = cfgmod.curriculum_stage(cfg, 4)
    assert set(s4.channels) == set(cfgmod.active_channels(4))
    assert s4.reward_terms == cfgmod.TERMS


def test_stage_override_applies_channels():
    assert "kicks" not in cfgmod.load_env_config(stage=1).channels
    assert "kicks" in cfgmod.load_env_config(stage=2).channels


@pytest.mark.parametrize("stage", [0, 5, "2"])
def test_unknown_stage(stage):
    with pytest.raises(ConfigError):
        cfgmod.curriculum_stage(cfgmod.EnvConfig(), stage)


def test_bad_ranges_rejected():
    with pytest.raises(ConfigError):
        cfgmod.EnvConfig(randomization=cfgmod.Randomization(mass_scale=(1.2, 0.8)))
    with pytest.raises(ConfigError):
        cfgmod.EnvConfig(filters=cfgmod.Filters(action_cutoff_hz=30.0))
    with pytest.raises(ConfigError):
        cfgmod.RewardWeights(sigma_lin=0.0)


# projected gravity ---------------------------------------------------------------

def test_projected_gravity_identity_and_quarter_turn():
    assert np.array_equal(obsmod.projected_gravity(np.eye(3)), [0.0, 0.0, -1.0])
    Ry = Rotation.from_euler("y", 90, degrees=True).as_matrix()
    # body pitched nose-down by +90 deg: gravity points along body +x
    assert obsmod.projected_gravity(Ry) == pytest.approx([1.0, 0.0, 0.0], abs=1e-15)
    # independent definition: R^T applied to the world gravity direction
    assert obsmod.projected_gravity(Ry) == pytest.approx(Ry.T @ [0, 0, -1], abs=1e-15)


def test_projected_gravity_unit_norm():
    R = Rotation.random(1000, random_state=7).as_matrix()
    g = obsmod.projected_gravity(R)
    assert np.max(np.abs(np.linalg.norm(g, axis=1) - 1.0)) <= 1e-9
    assert np.max(np.abs(g - np.einsum("bji,j->bi", R, [0.0, 0.0, -1.0]))) <= 1e-15


# observation window --------------------------------------------------------------

def zero_state(B=2):
    return obsmod.ObsState(np.zeros(B), np.tile([0.0, 0.0, -1.0], (B, 1)), np.zeros((B, 3)),
                           np.zeros((B, N_ACT)), np.zeros((B, N_ACT)))


def quiet_config():
    return cfgmod.EnvConfig(stage=1, disturbances=cfgmod.Disturbances(obs_noise=0.0))


def test_warm_up_copies_first_observation():
    W = obsmod.obs_width(N_ACT)
    win = obsmod.ObservationWindow(3, W, 2)
    out = obsmod.assemble_observation(zero_state(), quiet_config(), win)
    assert out.shape == (2, 3 * W)
    o = obsmod.stack(zero_state())
    assert np.array_equal(out, np.tile(o, 3))


def test_newest_first_order():
    W = obsmod.obs_width(N_ACT)
    win = obsmod.ObservationWindow(3, W, 1)
    cfg = quiet_config()
    s = zero_state(1)
    obsmod.assemble_observation(s, cfg, win)
    s.yaw_rate = np.array([1.0])
    out = obsmod.assemble_observation(s, cfg, win)
    # the step change shows up only in block 0
    assert out[0, 0] == 1.0 and out[0, W] == 0.0 and out[0, 2 * W] == 0.0
    s.yaw_rate = np.array([2.0])
    out = obsmod.assemble_observation(s, cfg, win)
    assert [out[0, k * W] for k in range(3)] == [2.0, 1.0, 0.0]


def test_window_reset_per_env():
    W = 4
    win = obsmod.ObservationWindow(2, W, 2)
    win.push(np.ones((2, W)))
    win.reset([1])
    out = win.push(np.full((2, W), 5.0))
    assert np.array_equal(out[0], [5.0] * W + [1.0] * W)
    assert np.array_equal(out[1], [5.0] * 2 * W)


def test_observation_deterministic():
    cfg = cfgmod.EnvConfig(stage=1, seed=3)
    outs = []
    for _ in range(2):
        win = obsmod.ObservationWindow(3, obsmod.obs_width(N_ACT), 2)
        outs.append(obsmod.assemble_observation(zero_state(), cfg, win, step=11))
    assert outs[0].tobytes() == outs[1].tobytes()


def test_noise_bounds_over_many_samples():
    amp = 0.03
    ids = np.arange(1000)
    mask = obsmod.noised_mask(N_ACT)
    worst_on, worst_off = 0.0, 0.0
    for step in range(100):
        n = obsmod.observation_noise(5, ids, step, N_ACT, amp)
        worst_on = max(worst_on, float(np.max(np.abs(n[:, mask]))))
        worst_off = max(worst_off, float(np.max(np.abs(n[:, ~mask]))))
    assert worst_on <= amp
    assert worst_on > 0.99 * amp
    assert worst_off == 0.0
    assert mask[:4].all() and not mask[4:7].any()
    assert mask[7:7 + N_ACT].all() and not mask[7 + N_ACT:].any()


# counter-based generator ---------------------------------------------------------

def test_rng_batch_order_independent():
    ids = np.array([3, 17, 2, 900])
    a = rng.uniform(1, ids, 42, "mass", 4)
    b = rng.uniform(1, ids[::-1], 42, "mass", 4)
    assert np.array_equal(a, b[::-1])
    assert not np.array_equal(a, rng.uniform(1, ids, 43, "mass", 4))
    assert not np.array_equal(a, rng.uniform(1, ids, 42, "kp", 4))


def test_rng_uniform_moments():
    u = rng.uniform(0, np.arange(20000), 0, "bench", 5)
    assert 0.0 <= u.min() and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01
    z = rng.normal(0, np.arange(20000), 0, "bench", 5)
    assert abs(z.mean()) < 0.02 and abs(z.std() - 1.0) < 0.02


# filters ---------------------------------------------------------------------------

FS = 50.0


@pytest.mark.parametrize("fc", [8.0, 10.0, 3.0])
def test_butterworth_coefficients_match_scipy(fc):
    b, a = sps.butter(2, fc, fs=FS)
    c = filters.butter2_coefficients(fc, FS)
    assert np.allclose(c.b, b, rtol=0, atol=1e-14)
    assert np.allclose(c.a, a, rtol=0, atol=1e-14)


def test_butterworth_impulse_response():
    b, a = sps.butter(2, 10.0, fs=FS)
    x = np.zeros(64)
    x[0] = 1.0
    assert np.max(np.abs(filters.butterworth2(x, 10.0, FS) - sps.lfilter(b, a, x))) <= 1e-15


def test_butterworth_dc_gain():
    y = filters.butterworth2(np.full(400, 2.5), 8.0, FS)
    assert abs(y[-1] - 2.5) <= 1e-9
    settled = filters.butterworth2(np.full(5, 2.5), 8.0, FS, settle=True)
    assert np.max(np.abs(settled - 2.5)) <= 1e-12


@pytest.mark.parametrize("fc", [2.0, 8.0, 10.0])
def test_butterworth_minus_3db(fc):
    t = np.arange(4000) / FS
    y = filters.butterworth2(np.sin(2 * np.pi * fc * t), fc, FS)
    amp = np.max(np.abs(y[2000:]))
    assert abs(amp / (1 / math.sqrt(2)) - 1.0) <= 0.02


def test_butterworth_batched_matches_columns(rng):
    x = rng.normal(size=(100, 3, 4))
    y = filters.butterworth2(x, 8.0, FS)
    for i in range(3):
        for j in range(4):
            assert np.array_equal(y[:, i, j], filters.butterworth2(x[:, i, j], 8.0, FS))


def test_butterworth_invalid_cutoff():
    with pytest.raises(ConfigError):
        filters.butter2_coefficients(25.0, FS)
    with pytest.raises(ConfigError):
        filters.butter2_coefficients(0.0, FS)


@given(st.floats(-10, 10), st.floats(0, 2))
def test_deadband_convention(x, w):
    y = float(filters.deadband(x, w))
    if abs(x) <= w:
        assert y == 0.0
    else:
        assert y == pytest.approx(x - math.copysign(w, x), abs=1e-12)


def test_deadband_examples():
    x = np.linspace(-1, 1, 11)
    assert np.array_equal(filters.deadband(x, 0.0), x)
    assert filters.deadband(0.4, 0.2) == pytest.approx(0.2)
    assert filters.deadband(-0.15, 0.2) == 0.0
    with pytest.raises(ConfigError):
        filters.deadband(x, -0.1)


# latency -----------------------------------------------------------------------------

def test_latency_zero_and_two(rng):
    x = rng.normal(size=(30, N_ACT))
    assert np.array_equal(latency.latency_apply(x, 0), x)
    y = latency.latency_apply(x, 2, fill=0.0)
    assert np.array_equal(y[:2], np.zeros((2, N_ACT)))
    assert np.array_equal(y[2:], x[:-2])


def test_delay_line_matches_stream_delay(rng):
    lags = np.array([0, 1, 2, 2])
    x = rng.normal(size=(20, 4, 3))
    line = latency.DelayLine(lags.copy(), 3, 0.0)
    got = np.stack([line(x[t]) for t in range(20)])
    assert np.array_equal(got, latency.latency_apply(x, lags))


def test_action_delay_histogram():
    n = 10000
    d = latency.sample_action_delay(0, np.arange(n), 1 << 40)
    counts = np.bincount(d, minlength=3)
    sigma = math.sqrt(n * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - n / 3) <= 3 * sigma)
    # per-episode: a new episode key redraws
    assert not np.array_equal(d, latency.sample_action_delay(0, np.arange(n), (1 << 40) + 1))


def test_obs_delay_clamped_and_rounded():
    d = latency.sample_obs_delay(0, np.arange(10000), 0, 0.01, 0.02)
    assert d.min() == 0 and d.dtype == np.int64
    # P(N(0, 10ms) >= 10 ms) is about 0.159, which rounds to one step
    frac = np.mean(d >= 1)
    assert abs(frac - 0.1587) < 0.015
    assert np.all(latency.sample_obs_delay(0, np.arange(5), 0, 0.0, 0.02) == 0)


# rewards --------------------------------------------------------------------------------

W = cfgmod.RewardWeights()


def test_reward_matches_scalar_oracle(rng):
    B = 10000
    x = random_inputs(rng, B)
    total, parts = rewards.reward(x, W)
    raw = rewards.term_values(x, W)
    worst = 0.0
    for b in range(B):
        o = oracle_terms(x, b, W)
        want = 0.0
        for k in cfgmod.TERMS:
            worst = max(worst, abs(raw[k][b] - o[k]), abs(parts[k][b] - getattr(W, k) * o[k]))
            want += getattr(W, k) * o[k]
        worst = max(worst, abs(total[b] - want))
    assert worst <= 1e-12


def test_reward_trivial_cases(rng):
    x = random_inputs(rng, 4)
    x.v_local = x.command[:, :2].copy()
    x.tau = np.zeros_like(x.tau)
    x.prev_action = x.action.copy()
    raw = rewards.term_values(x, W)
    assert np.all(raw["tracking_lin_vel"] == 1.0)
    assert np.all(raw["torques"] == 0.0)
    assert np.all(raw["action_rate"] == 0.0)


def test_reward_stage_subset(rng):
    x = random_inputs(rng, 50)
    terms = cfgmod.STAGE_TERMS[1]
    total, parts = rewards.reward(x, W, terms)
    assert set(parts) == set(terms)
    assert np.allclose(total, sum(parts[k] for k in terms), atol=0, rtol=0)


def test_penalties_and_termination_signs(rng):
    x = random_inputs(rng, 500)
    raw = rewards.term_values(x, W)
    for k in ("ang_vel_xy", "orientation", "torques", "action_rate", "foot_slip", "termination"):
        assert np.all(raw[k] <= 0.0)
    late = x.t >= W.t_max
    assert np.all(raw["termination"][late] == 0.0)


def test_phase_reference_profile():
    t = np.linspace(0, 2, 1001)
    r = rewards.phase_reference(t, 1.9, 0.04)
    assert r.shape == (1001, 2)
    assert r.min() == 0.0 and r.max() == pytest.approx(0.04, abs=1e-6)
    # feet alternate: never both swinging
    assert np.all(np.minimum(r[:, 0], r[:, 1]) <= 1e-15)
