import math

import numpy as np
import pytest

from ddssim.shaping import (EnvelopeSpec, Shape, VgaModel, control_lowpass, envelope_samples,
                            first_sidelobe_db, precompensate, quantize_control,
                            reconstruct_envelope, rise_profile, vga_gain_db)


def measure_sidelobe(env, pad=32):
    """Independent oracle: local-maximum scan of the zero-padded spectrum."""
    spec = np.abs(np.fft.rfft(env, pad * len(env)))
    spec /= spec.max()
    interior = spec[1:-1]
    peaks = np.flatnonzero((interior > spec[:-2]) & (interior >= spec[2:])) + 1
    peaks = peaks[peaks > int(np.argmax(spec))]
    return 20 * math.log10(spec[peaks[0]])


class TestEnvelopes:
    def test_hann_endpoints(self):
        n = 40
        env = envelope_samples(EnvelopeSpec(Shape.HANN, n, 10))
        assert env[0] == 0.0
        assert env[n] == 1.0  # end of the rise is the first plateau sample
        assert np.all(env[n:n + 10] == 1.0)
        assert env[n - 1] < 1.0
        assert np.array_equal(env, env[::-1])  # fall mirrors rise

    def test_one_sample_plateau_is_the_classic_window(self):
        env = envelope_samples(EnvelopeSpec(Shape.HANN, 62, 1))
        m = np.arange(125)
        assert np.allclose(env, np.sin(np.pi * m / 124) ** 2, atol=1e-12)

    def test_rectangular_all_ones(self):
        env = envelope_samples(EnvelopeSpec(Shape.RECTANGULAR, 5, 20))
        assert np.all(env == 1.0)

    def test_blackman_endpoints(self):
        rise = rise_profile(Shape.BLACKMAN, 33)
        assert abs(rise[0]) < 1e-15
        env = envelope_samples(EnvelopeSpec(Shape.BLACKMAN, 33, 1))
        assert env[33] == pytest.approx(1.0)
        assert env.max() == env[33]

    def test_hann_sidelobe_vs_rectangular(self):
        # 2 us pulse at the 62.5 MS/s shaping rate = 125 samples
        hann = envelope_samples(EnvelopeSpec(Shape.HANN, 62, 1))
        rect = envelope_samples(EnvelopeSpec(Shape.RECTANGULAR, 0, 125))
        assert len(hann) == len(rect) == 125
        hann_lobe = measure_sidelobe(hann)
        rect_lobe = measure_sidelobe(rect)
        assert hann_lobe <= -31.0
        assert abs(rect_lobe - -13.3) <= 0.2

    def test_spectral_ordering_beyond_main_lobe(self):
        # equal energy and duration: band maxima of the hann spectrum stay
        # below the rectangular spectrum everywhere past the main lobes
        rect = envelope_samples(EnvelopeSpec(Shape.RECTANGULAR, 0, 125))
        hann = envelope_samples(EnvelopeSpec(Shape.HANN, 62, 1))
        hann = hann * math.sqrt((rect ** 2).sum() / (hann ** 2).sum())
        pad = 16
        h = np.abs(np.fft.rfft(hann, pad * 125))
        r = np.abs(np.fft.rfft(rect, pad * 125))
        start = 3 * pad  # past both main lobes (hann's is two bins wide)
        for lo in range(start, len(h) - 2 * pad, 2 * pad):
            band = slice(lo, lo + 2 * pad)
            assert h[band].max() < r[band].max()

    def test_builtin_sidelobe_helper_agrees(self):
        hann = envelope_samples(EnvelopeSpec(Shape.HANN, 62, 1))
        assert abs(first_sidelobe_db(hann) - measure_sidelobe(hann)) < 0.3


class TestVga:
    M = VgaModel()

    def test_reference_point(self):
        assert vga_gain_db(self.M.v_ref, self.M) == 0.0

    def test_twenty_db_down(self):
        v = self.M.v_ref - 20.0 / self.M.slope_db_per_volt
        assert vga_gain_db(v, self.M) == pytest.approx(-20.0)

    def test_clamped_at_floor(self):
        assert vga_gain_db(0.0, self.M) == max(self.M.min_gain_db,
                                               self.M.slope_db_per_volt * -self.M.v_ref)
        assert vga_gain_db(-10.0, self.M) == self.M.min_gain_db

    def test_usable_range_covers_shaping(self):
        assert self.M.usable_range_db >= 30.0

    def test_model_requires_shaping_range(self):
        with pytest.raises(ValueError):
            VgaModel(min_gain_db=-20.0)

    def test_precompensate_identity_point(self):
        v = precompensate([1.0], self.M)[0]
        assert abs(v - self.M.v_ref) <= self.M.control_lsb_volts / 2

    def test_precompensate_one_decade(self):
        v = precompensate([0.1], self.M)[0]
        expect = self.M.v_ref - 20.0 / self.M.slope_db_per_volt
        assert abs(v - expect) <= self.M.control_lsb_volts / 2

    def test_zero_maps_to_floor(self):
        v = precompensate([0.0], self.M)[0]
        assert vga_gain_db(v, self.M) == pytest.approx(self.M.min_gain_db, abs=0.01)

    def test_round_trip_within_half_lsb(self):
        rng = np.random.default_rng(7)
        e = rng.uniform(0.01, 1.0, size=10_000)
        rec = reconstruct_envelope(precompensate(e, self.M), self.M)
        err_db = np.abs(20 * np.log10(rec) - 20 * np.log10(e))
        half_lsb_db = 0.5 * self.M.control_lsb_volts * self.M.slope_db_per_volt
        assert np.max(err_db) <= half_lsb_db * (1 + 1e-9)

    def test_quantize_control_snaps_to_grid(self):
        v = quantize_control([0.123456], self.M)[0]
        steps = (1 << self.M.dac_bits) - 1
        code = (v - self.M.v_min) / (self.M.v_max - self.M.v_min) * steps
        assert abs(code - round(code)) < 1e-9


class TestControlBandwidth:
    def test_step_settles_to_99_percent(self):
        # tau = 1/(2 pi 3 MHz) = 53.05 ns; the analytic 99 % point is
        # -ln(0.01) tau = 244.3 ns, so the first settled 1 ns sample is #245
        bw = 3e6
        tau = 1 / (2 * math.pi * bw)
        dt = 1e-9
        n = 400
        y = control_lowpass(np.ones(n), dt, bw)
        t = (np.arange(n) + 1) * dt
        analytic = 1.0 - np.exp(-t / tau)
        assert np.max(np.abs(y - analytic)) < 1e-6
        assert abs(-math.log(0.01) * tau - 244.3e-9) < 0.05e-9
        settle_idx = int(np.argmax(y >= 0.99)) + 1
        assert settle_idx == 245
        assert settle_idx * dt <= 5 * tau
