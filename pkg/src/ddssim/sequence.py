"""Compact per-channel pulse-program representation and its binary codec.

A program is an edge table (unique timed frequency/phase/amplitude events)
plus a small instruction stream referencing it, so arbitrarily long but
repetitive sequences stay within a few kilobytes.

Binary layout (little-endian throughout):

    header   10 B   magic "DDSQ", version u8, channel u8,
                    edge_count u16, instr_count u16
    edges    16 B   wait u48 (grains), ftw u32, pow u16,
                    asf u14 | coherent flag | shape flag, shape_ref u16
    instrs    4 B   opcode u4 | operand u28; Loop and Branch carry one
                    extra 4-byte word (count / body lengths)

`instr_count` counts 4-byte words, extra words included.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

from .timebase import ASF_FULL_SCALE, TuningWordSet

MAGIC = b"DDSQ"
VERSION = 1
HEADER = struct.Struct("<4sBBHH")
HEADER_SIZE = HEADER.size          # 10
EDGE_SIZE = 16
WORD_SIZE = 4

OP_PLAY = 0
OP_LOOP = 1
OP_BRANCH = 2
OP_WAIT_TRIGGER = 3
OP_HOLD = 4

OPERAND_MASK = (1 << 28) - 1
MAX_WAIT_GRAINS = (1 << 48) - 1
MAX_HOLD_GRAINS = OPERAND_MASK
MAX_LOOP_COUNT = (1 << 32) - 1
MAX_THRESHOLD = (1 << 20) - 1

_FLAG_COHERENT = 1 << 14
_FLAG_SHAPED = 1 << 15


class CodecError(ValueError):
    """Malformed program or byte stream."""


class TableOverflowError(CodecError):
    """More unique edges or instruction words than the format can index."""


class PhaseMode(Enum):
    ABSOLUTE = "absolute"
    COHERENT = "coherent"


@dataclass(frozen=True)
class EdgeEvent:
    """One timed retune event: wait, then switch to the given words."""

    wait_grains: int
    words: TuningWordSet
    phase_mode: PhaseMode = PhaseMode.ABSOLUTE
    shape_ref: int | None = None

    def __post_init__(self):
        if not 0 <= self.wait_grains <= MAX_WAIT_GRAINS:
            raise CodecError(f"wait of {self.wait_grains} grains does not fit in 48 bits")
        if self.shape_ref is not None and not 0 <= self.shape_ref < (1 << 16):
            raise CodecError(f"shape_ref {self.shape_ref} does not fit in 16 bits")


@dataclass(frozen=True)
class PlayEdge:
    index: int


@dataclass(frozen=True)
class Loop:
    count: int
    body: tuple


@dataclass(frozen=True)
class Branch:
    counter_mask: int
    threshold: int
    then_body: tuple
    else_body: tuple = ()


@dataclass(frozen=True)
class WaitTrigger:
    pass


@dataclass(frozen=True)
class Hold:
    """Advance the timeline by N grains without firing an edge."""

    grains: int


@dataclass(frozen=True)
class SequenceProgram:
    channel: int
    edge_table: tuple = ()
    program: tuple = ()


@dataclass(frozen=True)
class EncodedProgram:
    data: bytes

    @property
    def byte_length(self) -> int:
        return len(self.data)


def _emit_words(body, edge_count: int, out: list) -> None:
    for ins in body:
        if isinstance(ins, PlayEdge):
            if not 0 <= ins.index < edge_count:
                raise CodecError(f"edge index {ins.index} out of range")
            out.append((OP_PLAY << 28) | ins.index)
        elif isinstance(ins, Hold):
            if not 0 <= ins.grains <= MAX_HOLD_GRAINS:
                raise CodecError(f"hold of {ins.grains} grains does not fit in 28 bits")
            out.append((OP_HOLD << 28) | ins.grains)
        elif isinstance(ins, Loop):
            if not 0 <= ins.count <= MAX_LOOP_COUNT:
                raise CodecError(f"loop count {ins.count} does not fit in 32 bits")
            sub: list = []
            _emit_words(ins.body, edge_count, sub)
            if len(sub) > OPERAND_MASK:
                raise TableOverflowError("loop body too long")
            out.append((OP_LOOP << 28) | len(sub))
            out.append(ins.count)
            out.extend(sub)
        elif isinstance(ins, Branch):
            if not 0 <= ins.counter_mask < (1 << 8):
                raise CodecError(f"counter mask {ins.counter_mask} does not fit in 8 bits")
            if not 0 <= ins.threshold <= MAX_THRESHOLD:
                raise CodecError(f"threshold {ins.threshold} does not fit in 20 bits")
            then_w: list = []
            else_w: list = []
            _emit_words(ins.then_body, edge_count, then_w)
            _emit_words(ins.else_body, edge_count, else_w)
            if len(then_w) >= (1 << 16) or len(else_w) >= (1 << 16):
                raise TableOverflowError("branch body too long")
            out.append((OP_BRANCH << 28) | (ins.counter_mask << 20) | ins.threshold)
            out.append(len(then_w) | (len(else_w) << 16))
            out.extend(then_w)
            out.extend(else_w)
        elif isinstance(ins, WaitTrigger):
            out.append(OP_WAIT_TRIGGER << 28)
        else:
            raise CodecError(f"unknown instruction {ins!r}")


def encode(p: SequenceProgram) -> EncodedProgram:
    """Serialize a program to its deterministic byte layout."""
    if not 0 <= p.channel < 256:
        raise CodecError(f"channel {p.channel} does not fit in 8 bits")
    if len(p.edge_table) > (1 << 16) - 1:
        raise TableOverflowError(f"{len(p.edge_table)} unique edges exceed the 16-bit table")
    words: list = []
    _emit_words(p.program, len(p.edge_table), words)
    if len(words) > (1 << 16) - 1:
        raise TableOverflowError(f"{len(words)} instruction words exceed the 16-bit count")

    chunks = [HEADER.pack(MAGIC, VERSION, p.channel, len(p.edge_table), len(words))]
    for e in p.edge_table:
        flags = e.words.asf
        if e.phase_mode is PhaseMode.COHERENT:
            flags |= _FLAG_COHERENT
        if e.shape_ref is not None:
            flags |= _FLAG_SHAPED
        chunks.append(e.wait_grains.to_bytes(6, "little"))
        chunks.append(struct.pack("<IHHH", e.words.ftw, e.words.pow, flags,
                                  e.shape_ref if e.shape_ref is not None else 0))
    for w in words:
        chunks.append(struct.pack("<I", w))
    return EncodedProgram(b"".join(chunks))


def encoded_size(p: SequenceProgram) -> int:
    """Exact byte length of encode(p), computed without serializing."""
    words: list = []
    _emit_words(p.program, len(p.edge_table), words)
    return HEADER_SIZE + EDGE_SIZE * len(p.edge_table) + WORD_SIZE * len(words)


def _parse_body(words, start: int, end: int, edge_count: int) -> tuple:
    out = []
    i = start
    while i < end:
        op = words[i] >> 28
        operand = words[i] & OPERAND_MASK
        i += 1
        if op == OP_PLAY:
            if operand >= edge_count:
                raise CodecError(f"edge index {operand} out of range")
            out.append(PlayEdge(operand))
        elif op == OP_HOLD:
            out.append(Hold(operand))
        elif op == OP_WAIT_TRIGGER:
            out.append(WaitTrigger())
        elif op == OP_LOOP:
            if i >= end:
                raise CodecError("truncated loop header")
            count = words[i]
            i += 1
            if i + operand > end:
                raise CodecError("loop body extends past program end")
            body = _parse_body(words, i, i + operand, edge_count)
            i += operand
            out.append(Loop(count, body))
        elif op == OP_BRANCH:
            if i >= end:
                raise CodecError("truncated branch header")
            lengths = words[i]
            i += 1
            then_n = lengths & 0xFFFF
            else_n = lengths >> 16
            if i + then_n + else_n > end:
                raise CodecError("branch bodies extend past program end")
            then_body = _parse_body(words, i, i + then_n, edge_count)
            i += then_n
            else_body = _parse_body(words, i, i + else_n, edge_count)
            i += else_n
            out.append(Branch(operand >> 20, operand & MAX_THRESHOLD, then_body, else_body))
        else:
            raise CodecError(f"unknown opcode {op}")
    return tuple(out)


def decode(e: EncodedProgram | bytes) -> SequenceProgram:
    """Parse bytes back into a program.  Inverse of :func:`encode`."""
    data = e.data if isinstance(e, EncodedProgram) else e
    if len(data) < HEADER_SIZE:
        raise CodecError("truncated header")
    magic, version, channel, edge_count, instr_count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CodecError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CodecError(f"unsupported version {version}")
    expected = HEADER_SIZE + EDGE_SIZE * edge_count + WORD_SIZE * instr_count
    if len(data) < expected:
        raise CodecError("truncated program")
    if len(data) > expected:
        raise CodecError(f"{len(data) - expected} trailing bytes")

    edges = []
    off = HEADER_SIZE
    for _ in range(edge_count):
        wait = int.from_bytes(data[off:off + 6], "little")
        ftw, pow_, flags, shape = struct.unpack_from("<IHHH", data, off + 6)
        off += EDGE_SIZE
        edges.append(EdgeEvent(
            wait_grains=wait,
            words=TuningWordSet(ftw, pow_, flags & ASF_FULL_SCALE),
            phase_mode=PhaseMode.COHERENT if flags & _FLAG_COHERENT else PhaseMode.ABSOLUTE,
            shape_ref=shape if flags & _FLAG_SHAPED else None,
        ))

    words = list(struct.unpack_from(f"<{instr_count}I", data, off))
    program = _parse_body(words, 0, instr_count, edge_count)
    return SequenceProgram(channel, tuple(edges), program)


def body_duration_grains(body, edge_table) -> int:
    """Total duration of an instruction body in event grains.

    WaitTrigger has no static duration and is rejected.
    """
    total = 0
    for ins in body:
        if isinstance(ins, PlayEdge):
            total += edge_table[ins.index].wait_grains
        elif isinstance(ins, Hold):
            total += ins.grains
        elif isinstance(ins, Loop):
            total += ins.count * body_duration_grains(ins.body, edge_table)
        elif isinstance(ins, Branch):
            # both bodies are duration-equal by construction; use the then side
            total += body_duration_grains(ins.then_body, edge_table)
        elif isinstance(ins, WaitTrigger):
            raise CodecError("WaitTrigger has no static duration")
    return total


def validate(p: SequenceProgram) -> None:
    """Semantic checks beyond what the codec enforces structurally."""

    def check(body, in_branch: bool):
        for ins in body:
            if isinstance(ins, Loop):
                if ins.count < 1:
                    raise CodecError("loop count must be >= 1")
                check(ins.body, in_branch)
            elif isinstance(ins, Branch):
                if in_branch:
                    raise CodecError("nested branches are not allowed")
                check(ins.then_body, True)
                check(ins.else_body, True)
                d_then = body_duration_grains(ins.then_body, p.edge_table)
                d_else = body_duration_grains(ins.else_body, p.edge_table)
                if d_then != d_else:
                    raise CodecError(
                        f"branch bodies differ in duration ({d_then} vs {d_else} grains)")
            elif isinstance(ins, WaitTrigger) and in_branch:
                raise CodecError("trigger wait not allowed inside a branch body")

    check(p.program, False)
