"""Bit-exact model of one DDS channel and the instrument's global timebase.

A channel is a numerically controlled oscillator: a 32-bit phase accumulator
that advances by the frequency tuning word (FTW) every system-clock cycle,
with a 16-bit phase offset word (POW) added before the phase-to-amplitude
conversion and a 14-bit amplitude scale factor (ASF) applied to the output.
All tuning-word arithmetic is integer-exact; the converter itself is modeled
as an ideal sine of the 32-bit phase quantized to 14-bit signed output levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

FTW_BITS = 32
POW_BITS = 16
ASF_BITS = 14

FTW_WRAP = 1 << FTW_BITS
POW_WRAP = 1 << POW_BITS
ASF_FULL_SCALE = (1 << ASF_BITS) - 1  # 16383 = full-scale amplitude word
DAC_FULL_SCALE = (1 << 13) - 1        # 8191 = positive rail of the 14-bit output DAC

POW_STEP_RAD = math.tau / POW_WRAP    # ~95.874 urad per phase LSB
ASF_REL_STEP = 1.0 / (1 << ASF_BITS)  # ~6.1e-5 relative amplitude per LSB


class RangeError(ValueError):
    """Requested value is outside what the hardware control words can represent."""


@dataclass(frozen=True)
class Timebase:
    """Global timing constants shared by every channel of one instrument."""

    sysclk_hz: float = 1e9
    sync_divider: int = 16
    event_grain_ns: int = 8
    spi_update_ns: int = 1400

    def __post_init__(self):
        if self.sysclk_hz <= 0:
            raise ValueError("sysclk_hz must be positive")
        if self.sync_divider < 1:
            raise ValueError("sync_divider must be >= 1")
        if self.event_grain_ns < 1:
            raise ValueError("event_grain_ns must be >= 1")
        # the event grain must be a whole number of sysclk cycles
        grain = Fraction(self.event_grain_ns) * Fraction(self.sysclk_hz) / Fraction(10**9)
        if grain.denominator != 1 or grain.numerator < 1:
            raise ValueError(
                f"event grain of {self.event_grain_ns} ns is not a whole number "
                f"of cycles at {self.sysclk_hz} Hz"
            )

    @property
    def grain_cycles(self) -> int:
        """Number of sysclk cycles in one event grain (8 at the 1 GHz default)."""
        return int(Fraction(self.event_grain_ns) * Fraction(self.sysclk_hz) / Fraction(10**9))

    @property
    def ftw_resolution_hz(self) -> float:
        """Realized frequency of FTW = 1, i.e. the frequency LSB."""
        return self.sysclk_hz / FTW_WRAP

    def grains_to_ns(self, grains: int) -> float:
        return grains * float(self.event_grain_ns)

    def grains_to_cycles(self, grains: int) -> int:
        return grains * self.grain_cycles


@dataclass(frozen=True)
class TuningWordSet:
    """The frequency/phase/amplitude control words of one DDS channel."""

    ftw: int = 0
    pow: int = 0
    asf: int = 0

    def __post_init__(self):
        if not 0 <= self.ftw < FTW_WRAP:
            raise RangeError(f"ftw {self.ftw} does not fit in {FTW_BITS} bits")
        if not 0 <= self.pow < POW_WRAP:
            raise RangeError(f"pow {self.pow} does not fit in {POW_BITS} bits")
        if not 0 <= self.asf <= ASF_FULL_SCALE:
            raise RangeError(f"asf {self.asf} does not fit in {ASF_BITS} bits")


#: Canonical "output off" word set (zero amplitude, zero frequency).
OFF_WORDS = TuningWordSet(0, 0, 0)


@dataclass
class NcoState:
    """Mutable state of one NCO channel: accumulator, words, cycle count."""

    words: TuningWordSet = OFF_WORDS
    accumulator: int = 0
    elapsed_cycles: int = 0

    @property
    def phase32(self) -> int:
        """Instantaneous 32-bit phase including the programmed offset word."""
        return (self.accumulator + (self.words.pow << 16)) % FTW_WRAP


def ftw_from_freq(f_out_hz, timebase: Timebase | None = None) -> int:
    """Frequency tuning word for the requested output frequency.

    Rounds to the nearest LSB, ties away from zero, using exact rational
    arithmetic.  The realized frequency is ``ftw * sysclk / 2**32``.
    Frequencies above Nyquist are rejected.
    """
    tb = timebase if timebase is not None else Timebase()
    nyquist = tb.sysclk_hz / 2.0
    if not 0.0 <= f_out_hz <= nyquist:
        raise RangeError(f"frequency {f_out_hz} Hz outside 0..{nyquist} Hz")
    q = Fraction(f_out_hz) * FTW_WRAP / Fraction(tb.sysclk_hz)
    return int((2 * q.numerator + q.denominator) // (2 * q.denominator))


def freq_from_ftw(ftw: int, timebase: Timebase | None = None) -> float:
    """Realized output frequency of a tuning word."""
    tb = timebase if timebase is not None else Timebase()
    if not 0 <= ftw < FTW_WRAP:
        raise RangeError(f"ftw {ftw} does not fit in {FTW_BITS} bits")
    return ftw * tb.sysclk_hz / FTW_WRAP


def pow_from_phase(phi_rad: float) -> int:
    """Phase offset word for a phase in radians.  Wraps modulo one turn."""
    if not math.isfinite(phi_rad):
        raise RangeError("phase must be finite")
    turns = (phi_rad % math.tau) / math.tau
    return int(math.floor(turns * POW_WRAP + 0.5)) % POW_WRAP


def phase_from_pow(pow_: int) -> float:
    """Phase in radians realized by a phase offset word."""
    return pow_ * POW_STEP_RAD


def asf_from_amplitude(a: float) -> int:
    """Amplitude scale factor for a relative amplitude in 0..1."""
    if not 0.0 <= a <= 1.0:
        raise RangeError(f"amplitude {a} outside 0..1")
    return int(math.floor(a * ASF_FULL_SCALE + 0.5))


def amplitude_from_asf(asf: int) -> float:
    """Relative amplitude realized by an amplitude scale factor."""
    return asf / ASF_FULL_SCALE


def _round_away(x: np.ndarray) -> np.ndarray:
    # round half away from zero, matching the tuning-word convention
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def step_samples(state: NcoState, n: int) -> np.ndarray:
    """Advance the NCO by `n` cycles and return the n output samples.

    Each sample is the 14-bit-quantized ideal sine of the instantaneous
    phase, scaled by asf; the accumulator then advances by ftw (mod 2**32).
    """
    if n < 0:
        raise ValueError("cycle count must be >= 0")
    w = state.words
    idx = np.arange(n, dtype=np.uint64)
    phases = (np.uint64(state.accumulator) + np.uint64(w.ftw) * idx) % np.uint64(FTW_WRAP)
    total = (phases + np.uint64(w.pow << 16)) % np.uint64(FTW_WRAP)
    y = (w.asf / ASF_FULL_SCALE) * np.sin(math.tau * total.astype(np.float64) / FTW_WRAP)
    samples = _round_away(y * DAC_FULL_SCALE) / DAC_FULL_SCALE
    fast_forward(state, n)
    return samples


def fast_forward(state: NcoState, n: int) -> None:
    """Advance the accumulator by n cycles analytically, producing no samples.

    Bit-identical to stepping cycle by cycle, for any n.
    """
    if n < 0:
        raise ValueError("cycle count must be >= 0")
    state.accumulator = (state.accumulator + state.words.ftw * n) % FTW_WRAP
    state.elapsed_cycles += n
