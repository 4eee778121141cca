"""Cable-driven differential pulley of the hip.

Actuator angles (q_L, q_R) map to output angles (roll, pitch) through the
constant matrix

    1/(rho_L + rho_R) * [[rho_L,  rho_R],
                         [rho_L, -rho_R]]

The same matrix is used at position level, with both sides zero at the home
configuration. Torques go the other way through its transpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class DifferentialParams:
    rho_left: float = 1.0
    rho_right: float = 1.0

    def __post_init__(self):
        if not self.rho_left > 0:
            raise ValidationError("rho_left", f"must be > 0, got {self.rho_left}")
        if not self.rho_right > 0:
            raise ValidationError("rho_right", f"must be > 0, got {self.rho_right}")

    def matrix(self) -> np.ndarray:
        rl, rr = self.rho_left, self.rho_right
        return np.array([[rl, rr], [rl, -rr]]) / (rl + rr)

    def inverse_matrix(self) -> np.ndarray:
        # det = -2 rl rr / (rl + rr)^2
        rl, rr = self.rho_left, self.rho_right
        s = rl + rr
        return np.array([[s / (2 * rl), s / (2 * rl)], [s / (2 * rr), -s / (2 * rr)]])


@dataclass
class DiffState:
    q_left: float = 0.0
    q_right: float = 0.0
    q_roll: float = 0.0
    q_pitch: float = 0.0

    @classmethod
    def from_actuators(cls, p: DifferentialParams, q_left, q_right):
        roll, pitch = diff_forward_pos(p, (q_left, q_right))
        return cls(q_left, q_right, roll, pitch)


def diff_forward_vel(p: DifferentialParams, qdot_actuator) -> np.ndarray:
    return p.matrix() @ np.asarray(qdot_actuator, dtype=float)


def diff_inverse_vel(p: DifferentialParams, qdot_output) -> np.ndarray:
    return p.inverse_matrix() @ np.asarray(qdot_output, dtype=float)


# the map is linear and configuration independent, so positions use it too
diff_forward_pos = diff_forward_vel
diff_inverse_pos = diff_inverse_vel


def diff_torque_map(p: DifferentialParams, tau_output) -> np.ndarray:
    """Actuator torques that produce ``tau_output`` at the roll/pitch joints."""
    return p.matrix().T @ np.asarray(tau_output, dtype=float)
