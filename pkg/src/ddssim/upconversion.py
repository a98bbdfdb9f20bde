"""Analog-chain models: band limits, frequency doublers, Hartley SSB mixing.

The doubler is an ideal squarer followed by a brick-wall band-pass around
the second harmonic.  The single-sideband mixer combines two channels in
quadrature against an ideal external LO; amplitude and phase imbalance are
model inputs, and a coordinate-descent tuner trims them out in DDS word
steps the way the real adjustment is done digitally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .timebase import ASF_FULL_SCALE, POW_STEP_RAD


@dataclass(frozen=True)
class BandLimits:
    """Analog output band of one channel; out-of-band carriers get warnings."""

    f_min_hz: float = 10e6
    f_max_hz: float = 450e6

    def __post_init__(self):
        if self.f_min_hz >= self.f_max_hz:
            raise ValueError("empty band")

    def contains(self, f_hz: float) -> bool:
        return self.f_min_hz <= f_hz <= self.f_max_hz


class Sideband(Enum):
    UPPER = "upper"
    LOWER = "lower"


@dataclass(frozen=True)
class SsbConfig:
    """Hartley mixer configuration and its residual imbalance."""

    lo_freq_hz: float
    amp_imbalance: float = 0.0      # I amplitude = (1 + eps) x Q
    phase_error_rad: float = 0.0    # deviation from -90 deg quadrature
    sideband: Sideband = Sideband.UPPER

    def __post_init__(self):
        if abs(self.amp_imbalance) >= 0.5:
            raise ValueError("amplitude imbalance must satisfy |eps| < 0.5")
        if abs(self.phase_error_rad) >= math.pi / 4:
            raise ValueError("phase error must satisfy |phi| < pi/4")


@dataclass(frozen=True)
class DoublerChain:
    """n cascaded frequency doublers: output = input x 2**n."""

    stages: int
    input_freq_hz: float

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("need at least one stage")
        if self.input_freq_hz <= 0:
            raise ValueError("input frequency must be positive")

    @property
    def output_freq_hz(self) -> float:
        return self.input_freq_hz * 2 ** self.stages


def _brick_wall(samples: np.ndarray, sample_rate_hz: float,
                f_lo: float, f_hi: float) -> np.ndarray:
    spec = np.fft.rfft(samples)
    freqs = np.fft.rfftfreq(len(samples), d=1.0 / sample_rate_hz)
    spec[(freqs < f_lo) | (freqs > f_hi)] = 0.0
    return np.fft.irfft(spec, n=len(samples))


def double(samples, sample_rate_hz: float, input_freq_hz: float,
           passband_hz: float | None = None) -> np.ndarray:
    """One doubler stage: square the signal, keep the band around 2f.

    A unit tone cos(wt) squares to 1/2 + cos(2wt)/2; the band-pass drops the
    DC term, so the output tone has half the input amplitude (the conversion
    loss of the trig identity, no renormalization applied).
    """
    x = np.asarray(samples, dtype=float)
    f2 = 2.0 * input_freq_hz
    bw = passband_hz if passband_hz is not None else 0.5 * input_freq_hz
    return _brick_wall(x * x, sample_rate_hz, f2 - bw, f2 + bw)


def apply_doubler_chain(chain: DoublerChain, samples, sample_rate_hz: float,
                        stage_gain: float = 2.0) -> np.ndarray:
    """Run samples through the chain; `stage_gain` models per-stage make-up gain."""
    y = np.asarray(samples, dtype=float)
    f = chain.input_freq_hz
    for _ in range(chain.stages):
        y = stage_gain * double(y, sample_rate_hz, f)
        f *= 2.0
    return y


def ssb_mix(i_stream, q_stream, cfg: SsbConfig, sample_rate_hz: float) -> np.ndarray:
    """Hartley combination of two quadrature channels against the LO.

    Upper sideband: out = (1+eps) I cos(w_lo t) - Q sin(w_lo t + phi);
    lower sideband flips the sign of the Q path.  With eps = phi = 0 the
    image at f_lo -/+ f_m cancels exactly.
    """
    i = np.asarray(i_stream, dtype=float)
    q = np.asarray(q_stream, dtype=float)
    if i.shape != q.shape:
        raise ValueError("I and Q streams must have equal length")
    t = np.arange(len(i)) / sample_rate_hz
    lo_i = np.cos(math.tau * cfg.lo_freq_hz * t)
    lo_q = np.sin(math.tau * cfg.lo_freq_hz * t + cfg.phase_error_rad)
    sign = -1.0 if cfg.sideband is Sideband.UPPER else 1.0
    return (1.0 + cfg.amp_imbalance) * i * lo_i + sign * q * lo_q


def image_rejection_db(amp_imbalance: float, phase_error_rad: float) -> float:
    """Closed-form image-to-carrier power ratio of the Hartley mixer.

    With gain ratio g = 1 + eps and quadrature error phi, the ratio of the
    rejected to the selected sideband amplitude is
    sqrt(g^2 - 2 g cos phi + 1) / sqrt(g^2 + 2 g cos phi + 1).
    """
    g = 1.0 + amp_imbalance
    c = math.cos(phase_error_rad)
    num = g * g - 2.0 * g * c + 1.0
    den = g * g + 2.0 * g * c + 1.0
    if num <= 0.0:
        return -math.inf
    return 10.0 * math.log10(num / den)


def tone_power_dbc(samples, sample_rate_hz: float, f_tone_hz: float,
                   f_ref_hz: float) -> float:
    """Power of the bin at f_tone relative to the bin at f_ref, in dB."""
    x = np.asarray(samples, dtype=float)
    spec = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(len(x), d=1.0 / sample_rate_hz)
    p_tone = spec[np.argmin(np.abs(freqs - f_tone_hz))]
    p_ref = spec[np.argmin(np.abs(freqs - f_ref_hz))]
    if p_tone == 0.0:
        return -math.inf
    return 20.0 * math.log10(p_tone / p_ref)


@dataclass
class TuneResult:
    asf_trim: int
    pow_trim: int
    image_dbc: float
    evaluations: int
    converged: bool


def quantized_image_model(amp_imbalance: float, phase_error_rad: float):
    """Forward model of digital trimming: residual image vs integer word trims.

    The amplitude trim steps in ASF LSBs of relative amplitude, the phase
    trim in POW LSBs of quadrature correction.
    """

    def measure(asf_trim: int, pow_trim: int) -> float:
        g = (1.0 + amp_imbalance) * (1.0 + asf_trim / ASF_FULL_SCALE)
        phi = phase_error_rad + pow_trim * POW_STEP_RAD
        return image_rejection_db(g - 1.0, phi)

    return measure


def tune_imbalance(measure, target_dbc: float = -60.0, max_evals: int = 200,
                   initial_step: int = 256) -> TuneResult:
    """Minimize the measured image by coordinate descent on the word trims.

    `measure(asf_trim, pow_trim)` returns the image level in dBc.  The step
    shrinks by half whenever no axis improves; the search stops at the
    target, at step zero, or at the evaluation budget.
    """
    evals = 0

    def probe(a: int, p: int) -> float:
        nonlocal evals
        evals += 1
        return measure(a, p)

    best = (0, 0)
    best_level = probe(0, 0)
    step = initial_step
    while best_level > target_dbc and evals < max_evals and step >= 1:
        improved = False
        for da, dp in ((step, 0), (-step, 0), (0, step), (0, -step)):
            if evals >= max_evals:
                break
            trial = (best[0] + da, best[1] + dp)
            level = probe(*trial)
            if level < best_level:
                best, best_level = trial, level
                improved = True
        if not improved:
            step //= 2
    return TuneResult(best[0], best[1], best_level, evals, best_level <= target_dbc)
