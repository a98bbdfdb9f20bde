"""Phase-noise and jitter mathematics.

Covers single-sideband phase-noise densities L(f) in dBc/Hz: estimation
from sampled waveforms (averaged periodogram of the demodulated phase),
carrier-frequency normalization, band-limited RMS jitter integration with
exact power-law segment integrals, root-sum-square jitter budgets, and the
gain-dependent VGA output-noise model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as _signal

MIN_PSD_SAMPLES = 1 << 12


class BandError(ValueError):
    """Requested band or control value outside the data range."""


@dataclass(frozen=True)
class SpectralDensity:
    """One-sided phase-noise density: L(f) in dBc/Hz at offsets from a carrier."""

    offsets_hz: tuple
    levels_dbc_hz: tuple
    carrier_hz: float

    def __post_init__(self):
        offsets = tuple(float(f) for f in self.offsets_hz)
        levels = tuple(float(v) for v in self.levels_dbc_hz)
        if len(offsets) != len(levels):
            raise ValueError("offsets and levels differ in length")
        if len(offsets) < 1:
            raise ValueError("need at least one point")
        if any(f <= 0 for f in offsets):
            raise ValueError("offsets must be positive")
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise ValueError("offsets must be strictly ascending")
        if not all(math.isfinite(v) for v in levels):
            raise ValueError("levels must be finite")
        if self.carrier_hz <= 0:
            raise ValueError("carrier must be positive")
        object.__setattr__(self, "offsets_hz", offsets)
        object.__setattr__(self, "levels_dbc_hz", levels)

    def level_at(self, f_hz: float) -> float:
        """L(f) by log-frequency linear interpolation between points."""
        offsets = self.offsets_hz
        if not offsets[0] <= f_hz <= offsets[-1]:
            raise BandError(f"{f_hz} Hz outside {offsets[0]}..{offsets[-1]} Hz")
        return float(np.interp(math.log10(f_hz), np.log10(offsets), self.levels_dbc_hz))


def write_psd_csv(path, sd: SpectralDensity) -> None:
    """CSV out: a carrier header line, then offset_hz,level_dbc_hz rows."""
    with open(path, "w") as fh:
        fh.write(f"# carrier_hz={sd.carrier_hz!r}\n")
        fh.write("offset_hz,level_dbc_hz\n")
        for f, lvl in zip(sd.offsets_hz, sd.levels_dbc_hz):
            fh.write(f"{f!r},{lvl!r}\n")


def read_psd_csv(path) -> SpectralDensity:
    """Inverse of :func:`write_psd_csv`."""
    carrier = None
    offsets, levels = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line.lstrip("# ").partition("=")
                if key.strip() == "carrier_hz":
                    carrier = float(value)
                continue
            if line.startswith("offset_hz"):
                continue
            f, lvl = line.split(",")
            offsets.append(float(f))
            levels.append(float(lvl))
    if carrier is None:
        raise ValueError(f"{path}: missing '# carrier_hz=' header")
    return SpectralDensity(tuple(offsets), tuple(levels), carrier)


def estimate_psd(samples, sample_rate_hz: float, carrier_hz: float | None = None,
                 nperseg: int = 4096) -> SpectralDensity:
    """L(f) of a sampled real waveform by Welch averaging of the phase record.

    The phase is demodulated through the analytic signal, the carrier ramp
    and any residual linear drift removed, and the one-sided phase PSD
    halved to express it as a single sideband relative to the carrier.  A
    tone phase-modulated with small index beta reproduces sidebands at
    20*log10(beta/2) dBc when integrated over the peak.
    """
    x = np.asarray(samples, dtype=float)
    if len(x) < MIN_PSD_SAMPLES:
        raise ValueError(f"need at least {MIN_PSD_SAMPLES} samples, got {len(x)}")
    if carrier_hz is None:
        spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
        spec[0] = 0.0
        carrier_hz = float(np.fft.rfftfreq(len(x), 1.0 / sample_rate_hz)[np.argmax(spec)])
    t = np.arange(len(x)) / sample_rate_hz
    phase = np.unwrap(np.angle(_signal.hilbert(x))) - 2.0 * np.pi * carrier_hz * t
    phase = _signal.detrend(phase, type="linear")
    f, pxx = _signal.welch(phase, fs=sample_rate_hz, window="hann",
                           nperseg=min(nperseg, len(x)), noverlap=None,
                           detrend="constant")
    keep = f > 0
    levels = 10.0 * np.log10(np.maximum(pxx[keep] / 2.0, 1e-300))
    return SpectralDensity(tuple(f[keep]), tuple(levels), carrier_hz)


def tone_level_dbc(sd: SpectralDensity, f_offset_hz: float, half_bins: int = 4) -> float:
    """Integrated power of a discrete sideband around one offset, in dBc."""
    f = np.asarray(sd.offsets_hz)
    s = 10.0 ** (np.asarray(sd.levels_dbc_hz) / 10.0)
    center = int(np.argmin(np.abs(f - f_offset_hz)))
    lo = max(center - half_bins, 0)
    hi = min(center + half_bins + 1, len(f))
    power = np.trapezoid(s[lo:hi], f[lo:hi])
    return 10.0 * math.log10(power) if power > 0 else -math.inf


def normalize_carrier(sd: SpectralDensity, new_carrier_hz: float) -> SpectralDensity:
    """Rescale L(f) to another carrier: levels shift by 20*log10(new/old)."""
    if new_carrier_hz <= 0:
        raise ValueError("carrier must be positive")
    shift = 20.0 * math.log10(new_carrier_hz / sd.carrier_hz)
    return SpectralDensity(sd.offsets_hz,
                           tuple(lvl + shift for lvl in sd.levels_dbc_hz),
                           new_carrier_hz)


def _segment_integral(f1: float, s1: float, f2: float, s2: float) -> float:
    """Integral of a power-law segment through (f1,s1),(f2,s2), exact."""
    if f2 <= f1:
        return 0.0
    slope = math.log(s2 / s1) / math.log(f2 / f1) if s1 != s2 else 0.0
    if abs(slope + 1.0) < 1e-12:
        return s1 * f1 * math.log(f2 / f1)
    return s1 * f1 / (slope + 1.0) * ((f2 / f1) ** (slope + 1.0) - 1.0)


def integrate_jitter(sd: SpectralDensity, f_lo_hz: float, f_hi_hz: float) -> float:
    """Band-limited RMS jitter in seconds.

    sigma_t = sqrt(2 * integral of 10^(L/10) df) / (2 pi carrier), with the
    integral taken piecewise over the log-frequency segments of the profile
    using the exact closed form for each power-law piece.
    """
    if f_lo_hz > f_hi_hz:
        raise BandError("band is inverted")
    offsets = np.asarray(sd.offsets_hz)
    if f_lo_hz < offsets[0] or f_hi_hz > offsets[-1]:
        raise BandError(
            f"band {f_lo_hz}..{f_hi_hz} Hz outside data {offsets[0]}..{offsets[-1]} Hz")
    if f_lo_hz == f_hi_hz:
        return 0.0
    linear = 10.0 ** (np.asarray(sd.levels_dbc_hz) / 10.0)
    total = 0.0
    for k in range(len(offsets) - 1):
        a, b = offsets[k], offsets[k + 1]
        lo, hi = max(a, f_lo_hz), min(b, f_hi_hz)
        if hi <= lo:
            continue
        s_lo = linear[k] * (lo / a) ** (math.log(linear[k + 1] / linear[k]) / math.log(b / a)
                                        if linear[k] != linear[k + 1] else 0.0)
        s_hi = linear[k] * (hi / a) ** (math.log(linear[k + 1] / linear[k]) / math.log(b / a)
                                        if linear[k] != linear[k + 1] else 0.0)
        total += _segment_integral(lo, s_lo, hi, s_hi)
    phase_rms = math.sqrt(2.0 * total)
    return phase_rms / (2.0 * math.pi * sd.carrier_hz)


@dataclass(frozen=True)
class JitterBudget:
    """Named jitter contributors combined as a root sum of squares."""

    components: tuple
    combined_rms_fs: float

    def allows(self, observed_rms_fs: float) -> bool:
        """Bound check: an observed jitter must not exceed the combination."""
        return observed_rms_fs <= self.combined_rms_fs


def combine_jitter(components) -> JitterBudget:
    """RSS-combine (name, rms_fs) pairs into a budget."""
    comp = tuple((str(name), float(rms)) for name, rms in components)
    if any(rms < 0 for _, rms in comp):
        raise ValueError("component jitter must be >= 0")
    return JitterBudget(comp, math.sqrt(sum(rms * rms for _, rms in comp)))


@dataclass(frozen=True)
class VgaNoiseModel:
    """Output noise density vs gain-control voltage, piecewise linear.

    The default knots describe the expected trend (noise rising with gain);
    `source_offset_db` adds a constant term for the driving source's own
    noise contribution.
    """

    control_v: tuple = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4)
    density_dbm_hz: tuple = (-157.0, -152.0, -147.5, -143.5, -140.0, -137.0, -134.5)
    source_offset_db: float = 0.0

    def __post_init__(self):
        if len(self.control_v) != len(self.density_dbm_hz):
            raise ValueError("knot arrays differ in length")
        if any(b <= a for a, b in zip(self.control_v, self.control_v[1:])):
            raise ValueError("control voltages must be strictly ascending")


def vga_noise_floor(v_gain: float, model: VgaNoiseModel | None = None) -> float:
    """Output noise density in dBm/Hz at a gain-control voltage."""
    m = model if model is not None else VgaNoiseModel()
    if not m.control_v[0] <= v_gain <= m.control_v[-1]:
        raise BandError(
            f"control voltage {v_gain} V outside {m.control_v[0]}..{m.control_v[-1]} V")
    return float(np.interp(v_gain, m.control_v, m.density_dbm_hz)) + m.source_offset_db


def synthesize_phase_noise(sd: SpectralDensity, n: int, sample_rate_hz: float,
                           rng) -> np.ndarray:
    """Phase record (radians) whose one-sided PSD follows 2 x 10^(L/10).

    Frequency-domain shaping of white Gaussian noise; offsets outside the
    profile take the nearest endpoint level.  Useful for injecting a clock
    phase-noise profile into synthetic waveforms.
    """
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate_hz)
    log_f = np.log10(np.clip(freqs, sd.offsets_hz[0], sd.offsets_hz[-1]))
    levels = np.interp(log_f, np.log10(sd.offsets_hz), sd.levels_dbc_hz)
    s_phi = 2.0 * 10.0 ** (levels / 10.0)  # one-sided phase PSD, rad^2/Hz
    s_phi[0] = 0.0
    scale = np.sqrt(s_phi * sample_rate_hz * n / 4.0)
    spec = scale * (rng.standard_normal(len(freqs)) + 1j * rng.standard_normal(len(freqs)))
    spec[0] = 0.0
    if n % 2 == 0:
        spec[-1] = spec[-1].real * math.sqrt(2.0)
    return np.fft.irfft(spec, n=n)
