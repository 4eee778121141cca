"""Second-order Butterworth lowpass and the recentred deadband."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class Biquad:
    b: tuple
    a: tuple  # (1, a1, a2)


def butter2_coefficients(cutoff_hz, sample_hz) -> Biquad:
    """Bilinear transform of the analog prototype, prewarped at the cutoff."""
    if not (0 < cutoff_hz < 0.5 * sample_hz):
        raise ConfigError(f"cutoff {cutoff_hz} Hz must lie in (0, {0.5 * sample_hz}) Hz")
    k = math.tan(math.pi * cutoff_hz / sample_hz)
    k2 = k * k
    norm = 1.0 / (1.0 + math.sqrt(2.0) * k + k2)
    b0 = k2 * norm
    return Biquad((b0, 2.0 * b0, b0),
                  (1.0, 2.0 * (k2 - 1.0) * norm, (1.0 - math.sqrt(2.0) * k + k2) * norm))


class BatchButterworth:
    """Streaming biquad (transposed direct form II) over arrays of channels."""

    def __init__(self, cutoff_hz, sample_hz, shape):
        self.coef = butter2_coefficients(cutoff_hz, sample_hz)
        self.z1 = np.zeros(shape)
        self.z2 = np.zeros(shape)

    def settle(self, x, mask=None):
        """Put the state at the steady state of constant input ``x``."""
        (b0, _, b2), (_, _, a2) = self.coef.b, self.coef.a
        z1 = (1.0 - b0) * x
        z2 = (b2 - a2) * x
        if mask is None:
            self.z1[...] = z1
            self.z2[...] = z2
        else:
            self.z1[mask] = z1[mask]
            self.z2[mask] = z2[mask]

    def __call__(self, x):
        (b0, b1, b2), (_, a1, a2) = self.coef.b, self.coef.a
        y = b0 * x + self.z1
        self.z1 = b1 * x - a1 * y + self.z2
        self.z2 = b2 * x - a2 * y
        return y


def butterworth2(signal, cutoff_hz, sample_hz, axis=0, settle=False):
    """Filter ``signal`` along ``axis``; zero initial state unless ``settle``."""
    x = np.moveaxis(np.asarray(signal, dtype=float), axis, 0)
    filt = BatchButterworth(cutoff_hz, sample_hz, x.shape[1:])
    if settle and len(x):
        filt.settle(x[0])
    out = np.empty_like(x)
    for k in range(x.shape[0]):
        out[k] = filt(x[k])
    return np.moveaxis(out, 0, axis)


def deadband(signal, half_width):
    """Zero inside +-half_width, shifted toward zero by half_width outside."""
    if half_width < 0:
        raise ConfigError("deadband half width must be >= 0")
    x = np.asarray(signal, dtype=float)
    if half_width == 0:
        return x.copy()
    return np.sign(x) * np.maximum(np.abs(x) - half_width, 0.0)
