"""Batched environment layer: observations, randomization, latency, filters, rewards."""

from .config import (STAGE_CHANNELS, STAGE_TERMS, TERMS, Commands, Disturbances, EnvConfig,
                     Filters, Latency, Randomization, RewardWeights, active_channels,
                     curriculum_stage, env_config_from_dict, load_env_config)
from .env import BatchedEnv, StepResult
from .filters import BatchButterworth, butter2_coefficients, butterworth2, deadband
from .latency import DelayLine, latency_apply, sample_action_delay, sample_obs_delay
from .observation import (ObservationWindow, ObsState, assemble_observation, obs_width,
                          projected_gravity)
from .rewards import RewardInputs, phase_reference, reward, term_values
from .rollout import (Trace, random_policy, read_trace_binary, rollout, sine_policy,
                      write_trace_binary, write_trace_csv, zero_policy)
