import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ddssim.timebase import (ASF_FULL_SCALE, ASF_REL_STEP, FTW_WRAP, NcoState, POW_STEP_RAD,
                             RangeError, Timebase, TuningWordSet, amplitude_from_asf,
                             asf_from_amplitude, fast_forward, freq_from_ftw, ftw_from_freq,
                             pow_from_phase, step_samples)

TB = Timebase()


class TestTimebase:
    def test_defaults(self):
        assert TB.sysclk_hz == 1e9
        assert TB.sync_divider == 16
        assert TB.grain_cycles == 8
        assert TB.spi_update_ns == 1400

    def test_grain_must_be_whole_cycles(self):
        with pytest.raises(ValueError):
            Timebase(sysclk_hz=3e8, event_grain_ns=5)  # 1.5 cycles

    def test_grain_fraction_of_typical_pulse(self):
        # 8 ns out of a 2 us pulse is exactly 0.4 %
        assert TB.event_grain_ns * 1e-9 / 2e-6 == 0.004


class TestFtw:
    def test_zero(self):
        assert ftw_from_freq(0.0, TB) == 0

    def test_100mhz(self):
        # oracle: exact rational round(0.1 * 2**32), half away from zero
        q = Fraction(1, 10) * FTW_WRAP
        assert ftw_from_freq(100e6, TB) == round(q) == 429496730

    def test_lsb_resolution(self):
        assert freq_from_ftw(1, TB) == 1e9 / 2**32
        assert round(freq_from_ftw(1, TB), 11) == 0.23283064365

    def test_nyquist_ok_above_rejected(self):
        assert ftw_from_freq(500e6, TB) == 1 << 31
        with pytest.raises(RangeError):
            ftw_from_freq(500e6 + 1, TB)
        with pytest.raises(RangeError):
            ftw_from_freq(-1.0, TB)

    @given(st.floats(min_value=0.0, max_value=500e6, allow_nan=False))
    def test_realization_error_below_half_lsb(self, f):
        ftw = ftw_from_freq(f, TB)
        assert abs(freq_from_ftw(ftw, TB) - f) <= 1e9 / 2**33


class TestPow:
    def test_quarter_turn(self):
        assert pow_from_phase(math.pi / 2) == 16384

    def test_full_turn_wraps(self):
        assert pow_from_phase(2 * math.pi) == 0

    def test_step_size(self):
        assert POW_STEP_RAD == 2 * math.pi / 2**16
        assert round(POW_STEP_RAD * 1e6, 3) == 95.874

    def test_negative_phase(self):
        assert pow_from_phase(-math.pi / 2) == 49152

    def test_non_finite_rejected(self):
        with pytest.raises(RangeError):
            pow_from_phase(float("nan"))

    @given(st.floats(min_value=-50.0, max_value=50.0), st.integers(-100, 100))
    def test_periodic(self, phi, k):
        assert pow_from_phase(phi + 2 * math.pi * k) == pow_from_phase(phi)


class TestAsf:
    def test_endpoints(self):
        assert asf_from_amplitude(0.0) == 0
        assert asf_from_amplitude(1.0) == 16383

    def test_relative_step(self):
        assert ASF_REL_STEP == 2**-14
        assert f"{ASF_REL_STEP:.1e}" == "6.1e-05"

    def test_out_of_range(self):
        with pytest.raises(RangeError):
            asf_from_amplitude(1.0001)
        with pytest.raises(RangeError):
            asf_from_amplitude(-0.1)

    def test_word_range_checks(self):
        with pytest.raises(RangeError):
            TuningWordSet(ftw=FTW_WRAP)
        with pytest.raises(RangeError):
            TuningWordSet(pow=1 << 16)
        with pytest.raises(RangeError):
            TuningWordSet(asf=1 << 14)


class TestNco:
    def test_period_four_quadrature(self):
        state = NcoState(TuningWordSet(ftw=1 << 30, pow=0, asf=ASF_FULL_SCALE))
        samples = step_samples(state, 4)
        assert np.array_equal(samples, [0.0, 1.0, 0.0, -1.0])
        assert state.elapsed_cycles == 4

    def test_modular_wrap(self):
        ftw = 123456789
        state = NcoState(TuningWordSet(ftw=ftw), accumulator=FTW_WRAP - ftw)
        fast_forward(state, 1)
        assert state.accumulator == 0

    def test_pow_offsets_output(self):
        state = NcoState(TuningWordSet(ftw=0, pow=16384, asf=ASF_FULL_SCALE))
        samples = step_samples(state, 2)
        assert np.array_equal(samples, [1.0, 1.0])

    def test_fast_forward_matches_loop_oracle(self):
        # brute-force oracle: accumulate cycle by cycle in plain integers
        for ftw, n in [(429496730, 100_000), (0xDEADBEEF, 54_321), (1, 99_999), (FTW_WRAP - 1, 77)]:
            acc = 0
            for _ in range(n):
                acc = (acc + ftw) % FTW_WRAP
            state = NcoState(TuningWordSet(ftw=ftw))
            fast_forward(state, n)
            assert state.accumulator == acc
            assert state.elapsed_cycles == n

    @given(st.integers(0, FTW_WRAP - 1), st.integers(0, 3000))
    def test_fast_forward_matches_stepping(self, ftw, n):
        a = NcoState(TuningWordSet(ftw=ftw, asf=ASF_FULL_SCALE))
        b = NcoState(TuningWordSet(ftw=ftw, asf=ASF_FULL_SCALE))
        step_samples(a, n)
        fast_forward(b, n)
        assert a.accumulator == b.accumulator
        assert a.elapsed_cycles == b.elapsed_cycles

    def test_amplitude_scaling_quantized(self):
        # half-scale asf keeps outputs on the 14-bit output grid
        asf = asf_from_amplitude(0.5)
        state = NcoState(TuningWordSet(ftw=1 << 30, pow=0, asf=asf))
        samples = step_samples(state, 4)
        grid = np.round(samples * 8191)
        assert np.allclose(samples, grid / 8191)
        assert abs(samples[1] - amplitude_from_asf(asf)) <= 1 / 8191
