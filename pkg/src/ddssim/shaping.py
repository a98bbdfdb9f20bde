"""Amplitude envelopes, log-VGA pre-compensation, and the shaping DAC.

Pulse envelopes are generated at the shaping-DAC rate (62.5 MS/s by
default), pre-compensated for the logarithmic VGA response, and quantized
to the control DAC width.  Coarse amplitude stays on the DDS amplitude
word; the VGA path handles the 30..40 dB of fine shaping range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class Shape(Enum):
    RECTANGULAR = "rectangular"
    HANN = "hann"
    BLACKMAN = "blackman"


@dataclass(frozen=True)
class PulseShape:
    """A named rise/fall profile, referenced from compiled edges."""

    shape: Shape
    rise_samples: int

    def __post_init__(self):
        if self.rise_samples < 0:
            raise ValueError("rise_samples must be >= 0")


@dataclass(frozen=True)
class EnvelopeSpec:
    """A fully specified envelope: rise, flat plateau, time-reversed fall."""

    shape: Shape
    rise_samples: int
    plateau_samples: int
    sample_rate_hz: float = 62.5e6

    def __post_init__(self):
        if self.rise_samples < 0 or self.plateau_samples < 0:
            raise ValueError("sample counts must be >= 0")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def total_samples(self) -> int:
        return 2 * self.rise_samples + self.plateau_samples


def rise_profile(shape: Shape, n: int) -> np.ndarray:
    """Turn-on half of the window: n samples over t in [0, T_rise).

    The profile reaches exactly 1 at t = T_rise, i.e. at the first plateau
    sample; with a one-sample plateau, rise + plateau + reversed fall is the
    full symmetric window.
    """
    if n == 0:
        return np.zeros(0)
    if shape is Shape.RECTANGULAR:
        return np.ones(n)
    k = np.arange(n)
    if shape is Shape.HANN:
        return np.sin(np.pi * k / (2 * n)) ** 2
    if shape is Shape.BLACKMAN:
        x = np.pi * k / n
        return 0.42 - 0.5 * np.cos(x) + 0.08 * np.cos(2 * x)
    raise ValueError(f"unknown shape {shape}")


def envelope_samples(spec: EnvelopeSpec) -> np.ndarray:
    """Envelope sample stream in 0..1: rise, plateau at 1, reversed fall."""
    if spec.shape is Shape.RECTANGULAR:
        return np.ones(spec.total_samples)
    rise = rise_profile(spec.shape, spec.rise_samples)
    return np.concatenate([rise, np.ones(spec.plateau_samples), rise[::-1]])


@dataclass(frozen=True)
class VgaModel:
    """Logarithmic VGA with a dB-linear control curve and a one-pole bandwidth.

    The default constants cover > 40 dB of shaping range; they are model
    configuration, not device datasheet values.
    """

    slope_db_per_volt: float = 50.0
    v_ref: float = 1.2
    min_gain_db: float = -60.0
    v_min: float = 0.0
    v_max: float = 1.4
    control_bandwidth_hz: float = 3e6
    dac_bits: int = 14
    dac_rate_hz: float = 62.5e6

    def __post_init__(self):
        if self.slope_db_per_volt <= 0:
            raise ValueError("slope_db_per_volt must be positive")
        if self.min_gain_db > -30:
            raise ValueError("min_gain_db must cover at least 30 dB of shaping range")
        if self.v_min >= self.v_max:
            raise ValueError("control range is empty")

    @property
    def control_lsb_volts(self) -> float:
        return (self.v_max - self.v_min) / ((1 << self.dac_bits) - 1)

    @property
    def usable_range_db(self) -> float:
        """Gain span between the control-range endpoints, clamp included."""
        top = self.slope_db_per_volt * (self.v_max - self.v_ref)
        bottom = max(self.min_gain_db, self.slope_db_per_volt * (self.v_min - self.v_ref))
        return top - bottom


def vga_gain_db(v: float, m: VgaModel | None = None) -> float:
    """Relative gain at a control voltage, clamped at the gain floor."""
    m = m if m is not None else VgaModel()
    return max(m.min_gain_db, m.slope_db_per_volt * (v - m.v_ref))


def quantize_control(v, m: VgaModel):
    """Snap control voltages to the control-DAC grid, clamped to its range."""
    steps = (1 << m.dac_bits) - 1
    frac = (np.asarray(v, dtype=float) - m.v_min) / (m.v_max - m.v_min)
    code = np.clip(np.floor(frac * steps + 0.5), 0, steps)
    return m.v_min + code * (m.v_max - m.v_min) / steps


def precompensate(envelope, m: VgaModel | None = None) -> np.ndarray:
    """Control-voltage stream that makes the log VGA reproduce the envelope.

    v = v_ref + 20*log10(e)/slope, quantized to the control DAC.  Samples at
    or below zero map to the clamp floor.
    """
    m = m if m is not None else VgaModel()
    e = np.asarray(envelope, dtype=float)
    floor_v = m.v_ref + m.min_gain_db / m.slope_db_per_volt
    with np.errstate(divide="ignore"):
        v = np.where(e > 0.0,
                     m.v_ref + 20.0 * np.log10(np.where(e > 0.0, e, 1.0)) / m.slope_db_per_volt,
                     floor_v)
    return quantize_control(np.maximum(v, floor_v), m)


def reconstruct_envelope(control_v, m: VgaModel | None = None) -> np.ndarray:
    """Forward VGA model: amplitude produced by a control-voltage stream."""
    m = m if m is not None else VgaModel()
    v = np.asarray(control_v, dtype=float)
    gain_db = np.maximum(m.min_gain_db, m.slope_db_per_volt * (v - m.v_ref))
    return 10.0 ** (gain_db / 20.0)


def first_sidelobe_db(samples, pad_factor: int = 16) -> float:
    """Level of the first spectral sidelobe relative to the main peak, in dB.

    Zero-pads the FFT for a smooth spectrum, then walks outward from the
    peak through the first null to the first local maximum.
    """
    x = np.asarray(samples, dtype=float)
    spec = np.abs(np.fft.rfft(x, pad_factor * len(x)))
    peak = int(np.argmax(spec))
    i = peak
    while i + 1 < len(spec) and spec[i + 1] < spec[i]:
        i += 1
    null = i
    while i + 1 < len(spec) and spec[i + 1] >= spec[i]:
        i += 1
    if i == null or spec[peak] == 0.0:
        return -math.inf
    return 20.0 * math.log10(spec[i] / spec[peak])


def control_lowpass(x, dt_s: float, bandwidth_hz: float, y0: float = 0.0) -> np.ndarray:
    """One-pole low-pass of the control voltage, exact step-invariant form.

    tau = 1/(2*pi*bandwidth); y[n] = y[n-1] + (1 - exp(-dt/tau))*(x[n] - y[n-1]).
    """
    tau = 1.0 / (2.0 * math.pi * bandwidth_hz)
    alpha = 1.0 - math.exp(-dt_s / tau)
    y = np.empty(len(x))
    prev = y0
    for i, xi in enumerate(np.asarray(x, dtype=float)):
        prev = prev + alpha * (xi - prev)
        y[i] = prev
    return y
