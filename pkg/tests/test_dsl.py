import math

import pytest

from ddssim.dsl import (CompiledSequence, DslSemanticError, DslSyntaxError, compile_source,
                        parse_duration_ns, Token)
from ddssim.sequence import Branch, Hold, Loop, PhaseMode, PlayEdge, WaitTrigger, encode, validate
from ddssim.shaping import PulseShape, Shape
from ddssim.timebase import pow_from_phase


def single(src):
    compiled = compile_source(src)
    assert len(compiled.channels) == 1
    return next(iter(compiled.channels.values())), compiled


class TestBasics:
    def test_empty_source(self):
        assert compile_source("").channels == {}

    def test_empty_channel(self):
        p, _ = single("channel 0 { }")
        assert p.program == ()
        assert p.edge_table == ()

    def test_single_pulse(self):
        p, _ = single("channel 0 { pulse f=100MHz amp=1.0 phase=0 len=1us }")
        assert [type(i).__name__ for i in p.program] == ["PlayEdge", "Hold"]
        e = p.edge_table[0]
        assert e.wait_grains == 0
        assert e.words.ftw == 429496730
        assert e.words.asf == 16383
        assert p.program[1] == Hold(125)

    def test_phase_values(self):
        p, _ = single("channel 0 {\n"
                      "pulse f=100MHz amp=1 phase=1.5707963 len=1us\n"
                      "pulse f=100MHz amp=1 phase=coherent len=1us\n}")
        assert p.edge_table[0].words.pow == pow_from_phase(1.5707963)
        assert p.edge_table[0].phase_mode is PhaseMode.ABSOLUTE
        assert p.edge_table[1].phase_mode is PhaseMode.COHERENT
        assert p.edge_table[1].words.pow == 0

    def test_wait_inserts_off_edge(self):
        p, _ = single("channel 0 {\n"
                      "pulse f=100MHz amp=1 phase=0 len=1us\n"
                      "wait 2us\n"
                      "pulse f=100MHz amp=1 phase=0 len=1us\n}")
        # on, off (after 1us), on (after 2us), trailing hold
        assert len(p.edge_table) == 3
        off = p.edge_table[1]
        assert off.words.asf == 0
        assert off.wait_grains == 125
        assert p.edge_table[2].wait_grains == 250

    def test_leading_wait_accumulates(self):
        p, _ = single("channel 0 { wait 1us\n wait 1us\n pulse f=50MHz amp=1 phase=0 len=8ns }")
        assert p.edge_table[0].wait_grains == 250

    def test_repeat_block_dedups(self):
        p, _ = single("channel 0 { repeat 1000 {\n"
                      "pulse f=200MHz amp=1.0 phase=0 len=1us\n"
                      "pulse f=80MHz amp=0.5 phase=coherent len=2us\n} }")
        assert len(p.edge_table) == 2
        loops = [i for i in p.program if isinstance(i, Loop)]
        assert len(loops) == 1
        assert loops[0].count == 1000
        assert loops[0].body == (PlayEdge(0), PlayEdge(1), Hold(250))

    def test_trigger_statement(self):
        p, _ = single("channel 0 { pulse f=20MHz amp=1 phase=0 len=1us\n trigger\n"
                      " pulse f=20MHz amp=1 phase=0 len=1us }")
        kinds = [type(i).__name__ for i in p.program]
        assert "WaitTrigger" in kinds
        validate(p)

    def test_compile_deterministic(self):
        src = ("channel 0 { repeat 3 { pulse f=17MHz amp=0.3 phase=0 len=24ns }\n"
               "wait 16ns\npulse f=99MHz amp=1 phase=coherent len=1us }")
        a = {ch: encode(p).data for ch, p in compile_source(src).channels.items()}
        b = {ch: encode(p).data for ch, p in compile_source(src).channels.items()}
        assert a == b


class TestBranch:
    SRC = ("channel 0 {\n"
           "wait 100us\n"
           "branch counter=0x1 threshold=6 {\n"
           "pulse f=150MHz amp=1.0 phase=coherent len=2us\n"
           "} else {\n"
           "}\n"
           "wait 1us\n}")

    def test_empty_else_padded(self):
        p, _ = single(self.SRC)
        br = next(i for i in p.program if isinstance(i, Branch))
        assert br.counter_mask == 1
        assert br.threshold == 6
        assert br.else_body == (Hold(250),)
        validate(p)

    def test_unequal_durations_rejected(self):
        src = ("channel 0 { branch counter=1 threshold=2 {\n"
               "pulse f=10MHz amp=1 phase=0 len=2us\n} else {\n"
               "pulse f=10MHz amp=1 phase=0 len=1us\n} }")
        with pytest.raises(DslSemanticError, match="duration"):
            compile_source(src)

    def test_trigger_inside_branch_rejected(self):
        src = "channel 0 { branch counter=1 threshold=1 {\n trigger\n } }"
        with pytest.raises(DslSemanticError, match="trigger"):
            compile_source(src)

    def test_nested_branch_rejected(self):
        src = ("channel 0 { branch counter=1 threshold=1 {\n"
               "branch counter=2 threshold=1 { }\n} }")
        with pytest.raises(DslSemanticError, match="branch"):
            compile_source(src)


class TestErrors:
    def test_syntax_error_position(self):
        with pytest.raises(DslSyntaxError) as err:
            compile_source("channel 0 {\n  bogus f=1MHz\n}")
        assert err.value.line == 2

    def test_off_grain_duration(self):
        with pytest.raises(DslSemanticError, match="grain"):
            compile_source("channel 0 { wait 12ns }")

    def test_fractional_ns(self):
        with pytest.raises(DslSemanticError):
            compile_source("channel 0 { wait 5.3ns }")

    def test_above_nyquist(self):
        with pytest.raises(DslSemanticError, match="[Ff]requency|Hz"):
            compile_source("channel 0 { pulse f=600MHz amp=1 phase=0 len=1us }")

    def test_amplitude_range(self):
        with pytest.raises(DslSemanticError, match="amplitude"):
            compile_source("channel 0 { pulse f=10MHz amp=1.5 phase=0 len=1us }")

    def test_channel_out_of_range(self):
        with pytest.raises(DslSemanticError, match="channel"):
            compile_source("channel 32 { }")

    def test_duplicate_channel(self):
        with pytest.raises(DslSemanticError, match="duplicate"):
            compile_source("channel 2 { }\nchannel 2 { }")

    def test_missing_field(self):
        with pytest.raises(DslSyntaxError, match="len"):
            compile_source("channel 0 { pulse f=10MHz amp=1 phase=0 }")

    def test_zero_repeat(self):
        with pytest.raises(DslSemanticError):
            compile_source("channel 0 { repeat 0 { } }")


class TestShapes:
    def test_shape_table(self):
        src = ("channel 0 {\n"
               "pulse f=100MHz amp=1 phase=0 len=2us shape=hann(rise=496ns)\n"
               "pulse f=120MHz amp=1 phase=0 len=2us shape=hann(rise=496ns)\n"
               "pulse f=120MHz amp=1 phase=0 len=2us shape=blackman(rise=320ns)\n}")
        compiled = compile_source(src)
        assert compiled.shapes == (PulseShape(Shape.HANN, 31), PulseShape(Shape.BLACKMAN, 20))
        p = compiled.channels[0]
        assert p.edge_table[0].shape_ref == 0
        assert p.edge_table[2].shape_ref == 1

    def test_rise_snaps_to_dac_grid(self):
        compiled = compile_source(
            "channel 0 { pulse f=100MHz amp=1 phase=0 len=2us shape=hann(rise=500ns) }")
        assert compiled.shapes[0].rise_samples == 31  # 496 ns, nearest 16 ns sample

    def test_rise_too_long(self):
        with pytest.raises(DslSemanticError, match="rise"):
            compile_source(
                "channel 0 { pulse f=100MHz amp=1 phase=0 len=1us shape=hann(rise=600ns) }")

    def test_unknown_shape(self):
        with pytest.raises(DslSemanticError, match="shape"):
            compile_source(
                "channel 0 { pulse f=100MHz amp=1 phase=0 len=1us shape=gauss(rise=100ns) }")


class TestBandWarnings:
    def test_out_of_band_warns(self):
        compiled = compile_source("channel 0 { pulse f=5MHz amp=1 phase=0 len=1us }")
        assert len(compiled.warnings) == 1
        assert "5e+06" in compiled.warnings[0] or "5000000" in compiled.warnings[0]

    def test_in_band_quiet(self):
        compiled = compile_source("channel 0 { pulse f=200MHz amp=1 phase=0 len=1us }")
        assert compiled.warnings == []


def test_duration_parser_units():
    tok = Token("x", 1, 1)
    assert parse_duration_ns("8ns", tok) == 8
    assert parse_duration_ns("2us", tok) == 2000
    assert parse_duration_ns("1.5ms", tok) == 1_500_000
