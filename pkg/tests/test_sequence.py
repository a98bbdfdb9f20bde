import pytest
from hypothesis import given, strategies as st

from ddssim.sequence import (Branch, CodecError, EdgeEvent, Hold, Loop, PhaseMode, PlayEdge,
                             SequenceProgram, TableOverflowError, WaitTrigger, decode, encode,
                             encoded_size, validate)
from ddssim.timebase import TuningWordSet


def edge(wait=1, ftw=0x12345678, pow_=0x9ABC, asf=0x1FFF, mode=PhaseMode.ABSOLUTE, shape=None):
    return EdgeEvent(wait, TuningWordSet(ftw, pow_, asf), mode, shape)


class TestLayout:
    def test_header_only(self):
        blob = encode(SequenceProgram(channel=3))
        assert blob.byte_length == 10
        assert blob.data[:4] == b"DDSQ"

    def test_play_is_4_bytes_loop_header_8(self):
        table = (edge(),)
        base = encode(SequenceProgram(0, table, ())).byte_length
        one_play = encode(SequenceProgram(0, table, (PlayEdge(0),))).byte_length
        looped = encode(SequenceProgram(0, table, (Loop(5, (PlayEdge(0),)),))).byte_length
        assert one_play - base == 4
        assert looped - one_play == 8

    def test_edge_is_16_bytes(self):
        with_edge = encode(SequenceProgram(0, (edge(),), ())).byte_length
        assert with_edge == 10 + 16

    def test_size_independent_of_loop_count(self):
        table = (edge(), edge(wait=2))
        body = (PlayEdge(0), PlayEdge(1))
        small = encode(SequenceProgram(0, table, (Loop(10, body),)))
        large = encode(SequenceProgram(0, table, (Loop(10**6, body),)))
        assert small.byte_length == large.byte_length

    def test_encoded_size_matches(self):
        p = SequenceProgram(1, (edge(), edge(wait=7, shape=3)),
                            (Loop(3, (PlayEdge(0), Hold(12))), PlayEdge(1), WaitTrigger()))
        assert encoded_size(p) == encode(p).byte_length


class TestRoundTrip:
    def test_simple(self):
        p = SequenceProgram(
            2,
            (edge(), edge(wait=250, mode=PhaseMode.COHERENT, shape=0)),
            (PlayEdge(0),
             Loop(1000, (PlayEdge(0), PlayEdge(1), Hold(125))),
             Branch(0x1, 6, (PlayEdge(1),), (Hold(250),)),
             WaitTrigger()))
        assert decode(encode(p)) == p

    def test_shape_ref_zero_distinct_from_none(self):
        a = SequenceProgram(0, (edge(shape=0),), (PlayEdge(0),))
        b = SequenceProgram(0, (edge(shape=None),), (PlayEdge(0),))
        assert decode(encode(a)) == a
        assert decode(encode(b)) == b
        assert decode(encode(a)) != decode(encode(b))


class TestErrors:
    def test_bad_magic(self):
        blob = bytearray(encode(SequenceProgram(0)).data)
        blob[0] = ord("X")
        with pytest.raises(CodecError, match="magic"):
            decode(bytes(blob))

    def test_truncated(self):
        data = encode(SequenceProgram(0, (edge(),), (PlayEdge(0),))).data
        with pytest.raises(CodecError):
            decode(data[:-1])

    def test_trailing_bytes(self):
        data = encode(SequenceProgram(0)).data + b"\0"
        with pytest.raises(CodecError, match="trailing"):
            decode(data)

    def test_index_out_of_range(self):
        with pytest.raises(CodecError, match="out of range"):
            encode(SequenceProgram(0, (edge(),), (PlayEdge(1),)))

    def test_table_overflow(self):
        table = tuple(edge(wait=w) for w in range(2**16))
        with pytest.raises(TableOverflowError):
            encode(SequenceProgram(0, table, ()))

    def test_wait_field_range(self):
        with pytest.raises(CodecError):
            EdgeEvent(1 << 48, TuningWordSet())


class TestValidate:
    def test_branch_duration_mismatch(self):
        table = (edge(wait=1), edge(wait=2))
        p = SequenceProgram(0, table, (Branch(1, 5, (PlayEdge(0),), (PlayEdge(1),)),))
        with pytest.raises(CodecError, match="duration"):
            validate(p)

    def test_zero_loop_count(self):
        p = SequenceProgram(0, (edge(),), (Loop(0, (PlayEdge(0),)),))
        with pytest.raises(CodecError, match="loop"):
            validate(p)

    def test_nested_branch_rejected(self):
        inner = Branch(1, 1, (Hold(1),), (Hold(1),))
        p = SequenceProgram(0, (), (Branch(1, 1, (inner,), (Hold(2),)),))
        with pytest.raises(CodecError, match="[Nn]ested"):
            validate(p)

    def test_trigger_inside_branch_rejected(self):
        p = SequenceProgram(0, (), (Branch(1, 1, (WaitTrigger(),), ()),))
        with pytest.raises(CodecError):
            validate(p)

    def test_good_program_passes(self):
        table = (edge(wait=1), edge(wait=2))
        validate(SequenceProgram(0, table, (
            PlayEdge(0), Loop(7, (PlayEdge(1), Hold(3))),
            Branch(1, 5, (PlayEdge(1),), (PlayEdge(0), Hold(1))))))


words_st = st.builds(TuningWordSet,
                     ftw=st.integers(0, 2**32 - 1),
                     pow=st.integers(0, 2**16 - 1),
                     asf=st.integers(0, 2**14 - 1))
edges_st = st.builds(EdgeEvent,
                     wait_grains=st.integers(0, 2**48 - 1),
                     words=words_st,
                     phase_mode=st.sampled_from(PhaseMode),
                     shape_ref=st.none() | st.integers(0, 2**16 - 1))


@st.composite
def programs(draw):
    table = tuple(draw(st.lists(edges_st, min_size=1, max_size=6)))
    index = st.integers(0, len(table) - 1)
    leaf = (st.builds(PlayEdge, index)
            | st.builds(Hold, st.integers(0, 2**28 - 1))
            | st.just(WaitTrigger()))
    body = st.lists(
        leaf | st.builds(Loop, st.integers(0, 2**32 - 1),
                         st.lists(leaf, max_size=3).map(tuple)),
        max_size=4).map(tuple)
    instrs = st.lists(
        leaf
        | st.builds(Loop, st.integers(0, 2**32 - 1), body)
        | st.builds(Branch, st.integers(0, 255), st.integers(0, 2**20 - 1), body, body),
        max_size=5).map(tuple)
    return SequenceProgram(draw(st.integers(0, 255)), table, draw(instrs))


@given(programs())
def test_round_trip_random_programs(p):
    blob = encode(p)
    assert decode(blob) == p
    assert blob.byte_length == encoded_size(p)
