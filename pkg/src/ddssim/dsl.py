"""Pulse-program language: tokenizer, parser, and compiler.

The language is line-oriented::

    channel 0 {
        pulse f=200MHz amp=0.8 phase=coherent len=2us shape=hann(rise=496ns)
        wait 10us
        repeat 1000 {
            pulse f=80MHz amp=1.0 phase=0 len=1us
        }
        branch counter=0x1 threshold=6 {
            pulse f=150MHz amp=1.0 phase=coherent len=2us
        } else {
        }
        trigger
    }

Durations take ns/us/ms suffixes and must be exact multiples of the 8 ns
event grain.  Frequencies take Hz/kHz/MHz/GHz (bare numbers are Hz).
``phase`` is either a number in radians or the word ``coherent``.  Shape
rise times snap to the 16 ns shaping-DAC sample grid.

Compilation emits one edge per ``pulse`` (its wait is the time since the
previous event; its length becomes the next event's wait), deduplicates
identical edges into the edge table, turns the output off at ``wait``
statements, and closes every ``repeat`` body with a hold so that all
iterations are identical on the timeline.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fractions import Fraction

from .sequence import (MAX_HOLD_GRAINS, MAX_LOOP_COUNT, MAX_THRESHOLD, Branch, EdgeEvent, Hold,
                       Loop, PhaseMode, PlayEdge, SequenceProgram, WaitTrigger,
                       body_duration_grains)
from .shaping import PulseShape, Shape
from .timebase import (OFF_WORDS, RangeError, Timebase, TuningWordSet,
                       asf_from_amplitude, ftw_from_freq, pow_from_phase)
from .upconversion import BandLimits

MAX_CHANNELS = 32  # 8 cards x 4 channels

SHAPING_DAC_PERIOD_NS = 16  # 62.5 MS/s control DAC, two event grains per sample


class SourceError(Exception):
    """Error in a pulse-program source, located by line and column."""

    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {msg}")
        self.msg = msg
        self.line = line
        self.col = col


class DslSyntaxError(SourceError):
    pass


class DslSemanticError(SourceError):
    pass


@dataclass(frozen=True)
class Token:
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(r"[^\s{}]+|[{}]")
_DURATION_RE = re.compile(r"^([0-9][0-9_.eE+-]*)(ns|us|ms)$")
_FREQ_RE = re.compile(r"^([0-9][0-9_.eE+-]*?)(GHz|MHz|kHz|Hz)?$")
_SHAPE_RE = re.compile(r"^(\w+)(?:\((.*)\))?$")

_FREQ_SCALE = {"Hz": 1, "kHz": 10**3, "MHz": 10**6, "GHz": 10**9, None: 1}
_DUR_SCALE_NS = {"ns": 1, "us": 10**3, "ms": 10**6}


def tokenize(source: str) -> list[Token]:
    tokens = []
    for lineno, line in enumerate(source.splitlines(), start=1):
        body = line.split("#", 1)[0]
        for m in _TOKEN_RE.finditer(body):
            tokens.append(Token(m.group(0), lineno, m.start() + 1))
    return tokens


def _parse_number(text: str, tok: Token) -> Fraction:
    try:
        return Fraction(Decimal(text.replace("_", "")))
    except (InvalidOperation, ValueError):
        raise DslSyntaxError(f"bad number {text!r}", tok.line, tok.col) from None


def parse_duration_ns(text: str, tok: Token) -> int:
    """Duration with ns/us/ms suffix, as exact integer nanoseconds."""
    m = _DURATION_RE.match(text)
    if not m:
        raise DslSyntaxError(f"bad duration {text!r} (expected e.g. 2us, 16ns)", tok.line, tok.col)
    ns = _parse_number(m.group(1), tok) * _DUR_SCALE_NS[m.group(2)]
    if ns.denominator != 1:
        raise DslSemanticError(f"duration {text} is not a whole number of ns", tok.line, tok.col)
    return int(ns)


def parse_frequency_hz(text: str, tok: Token) -> Fraction:
    m = _FREQ_RE.match(text)
    if not m:
        raise DslSyntaxError(f"bad frequency {text!r}", tok.line, tok.col)
    return _parse_number(m.group(1), tok) * _FREQ_SCALE[m.group(2)]


@dataclass
class CompiledSequence:
    """Compiler output: one program per channel plus the shared shape table."""

    channels: dict[int, SequenceProgram] = field(default_factory=dict)
    shapes: tuple = ()
    warnings: list[str] = field(default_factory=list)


class _ChannelState:
    """Per-channel compile state threaded through nested bodies."""

    def __init__(self, channel: int):
        self.channel = channel
        self.edges: dict[EdgeEvent, int] = {}
        self.pending_grains = 0  # time owed to the next event
        self.rf_on = False

    def edge_index(self, edge: EdgeEvent) -> int:
        return self.edges.setdefault(edge, len(self.edges))

    def edge_table(self) -> tuple:
        return tuple(sorted(self.edges, key=self.edges.get))

    def flush_time(self, out: list) -> None:
        grains = self.pending_grains
        self.pending_grains = 0
        while grains > MAX_HOLD_GRAINS:
            out.append(Hold(MAX_HOLD_GRAINS))
            grains -= MAX_HOLD_GRAINS
        if grains:
            out.append(Hold(grains))


class _Parser:
    def __init__(self, tokens: list[Token], timebase: Timebase, band: BandLimits):
        self.tokens = tokens
        self.pos = 0
        self.timebase = timebase
        self.band = band
        self.shapes: dict[PulseShape, int] = {}
        self.warnings: list[str] = []

    # -- token helpers ----------------------------------------------------

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, what: str) -> Token:
        tok = self.peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else Token("", 1, 1)
            raise DslSyntaxError(f"unexpected end of input, expected {what}", last.line, last.col)
        self.pos += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.next(repr(text))
        if tok.text != text:
            raise DslSyntaxError(f"expected {text!r}, found {tok.text!r}", tok.line, tok.col)
        return tok

    def int_token(self, what: str, lo: int, hi: int) -> tuple[int, Token]:
        tok = self.next(what)
        try:
            value = int(tok.text, 0)
        except ValueError:
            raise DslSyntaxError(f"bad {what} {tok.text!r}", tok.line, tok.col) from None
        if not lo <= value <= hi:
            raise DslSemanticError(f"{what} {value} outside {lo}..{hi}", tok.line, tok.col)
        return value, tok

    def key_values(self, keyword: Token, required: tuple, optional: tuple = ()) -> dict:
        fields: dict[str, str] = {}
        while True:
            tok = self.peek()
            if tok is None or "=" not in tok.text:
                break
            key, _, value = tok.text.partition("=")
            if key not in required and key not in optional:
                break
            if key in fields:
                raise DslSyntaxError(f"duplicate field {key!r}", tok.line, tok.col)
            if not value:
                raise DslSyntaxError(f"field {key!r} needs a value", tok.line, tok.col)
            fields[key] = value
            self.pos += 1
        for key in required:
            if key not in fields:
                raise DslSyntaxError(f"{keyword.text} needs {key}=<value>",
                                     keyword.line, keyword.col)
        return fields

    # -- value helpers -----------------------------------------------------

    def duration_grains(self, text: str, tok: Token, minimum: int = 0) -> int:
        ns = parse_duration_ns(text, tok)
        grain = self.timebase.event_grain_ns
        if ns % grain:
            raise DslSemanticError(
                f"duration {text} is not a multiple of the {grain} ns event grain",
                tok.line, tok.col)
        grains = ns // grain
        if grains < minimum:
            raise DslSemanticError(f"duration {text} too short", tok.line, tok.col)
        return grains

    def shape_ref(self, text: str, len_grains: int, tok: Token) -> int | None:
        m = _SHAPE_RE.match(text)
        if not m:
            raise DslSyntaxError(f"bad shape {text!r}", tok.line, tok.col)
        name, args = m.group(1), m.group(2)
        if name == "rectangular":
            return None
        try:
            shape = Shape(name)
        except ValueError:
            raise DslSemanticError(f"unknown shape {name!r}", tok.line, tok.col) from None
        rise_ns = None
        for part in (args.split(",") if args else []):
            key, _, value = part.strip().partition("=")
            if key != "rise" or not value:
                raise DslSyntaxError(f"bad shape argument {part.strip()!r}", tok.line, tok.col)
            rise_ns = parse_duration_ns(value, tok)
        if rise_ns is None:
            raise DslSemanticError(f"shape {name} needs rise=<duration>", tok.line, tok.col)
        rise_samples = round(rise_ns / SHAPING_DAC_PERIOD_NS)
        pulse_ns = len_grains * self.timebase.event_grain_ns
        if 2 * rise_samples * SHAPING_DAC_PERIOD_NS > pulse_ns:
            raise DslSemanticError(
                f"shape rise of {rise_ns} ns does not fit twice into a {pulse_ns} ns pulse",
                tok.line, tok.col)
        return self.shapes.setdefault(PulseShape(shape, rise_samples), len(self.shapes))

    # -- statements ----------------------------------------------------------

    def stmt_pulse(self, ch: _ChannelState, out: list, fields: dict, tok: Token) -> None:
        freq = parse_frequency_hz(fields["f"], tok)
        try:
            ftw = ftw_from_freq(freq, self.timebase)
        except RangeError as exc:
            raise DslSemanticError(str(exc), tok.line, tok.col) from None
        try:
            asf = asf_from_amplitude(float(fields["amp"]))
        except (RangeError, ValueError):
            raise DslSemanticError(f"bad amplitude {fields['amp']!r}", tok.line, tok.col) from None
        if fields["phase"] == "coherent":
            mode, pow_ = PhaseMode.COHERENT, 0
        else:
            try:
                pow_ = pow_from_phase(float(fields["phase"]))
            except (RangeError, ValueError):
                raise DslSemanticError(f"bad phase {fields['phase']!r}",
                                       tok.line, tok.col) from None
            mode = PhaseMode.ABSOLUTE
        len_grains = self.duration_grains(fields["len"], tok, minimum=1)
        shape_ref = self.shape_ref(fields["shape"], len_grains, tok) if "shape" in fields else None
        if freq > 0 and not self.band.contains(float(freq)):
            self.warnings.append(
                f"line {tok.line}: carrier {float(freq):g} Hz outside the "
                f"{self.band.f_min_hz:g}..{self.band.f_max_hz:g} Hz analog band")
        edge = EdgeEvent(ch.pending_grains, TuningWordSet(ftw, pow_, asf), mode, shape_ref)
        out.append(PlayEdge(ch.edge_index(edge)))
        ch.pending_grains = len_grains
        ch.rf_on = True

    def stmt_wait(self, ch: _ChannelState, out: list, grains: int) -> None:
        if ch.rf_on:
            out.append(PlayEdge(ch.edge_index(EdgeEvent(ch.pending_grains, OFF_WORDS))))
            ch.pending_grains = grains
            ch.rf_on = False
        else:
            ch.pending_grains += grains

    # -- grammar -------------------------------------------------------------

    def parse(self) -> CompiledSequence:
        result = CompiledSequence()
        while self.peek() is not None:
            tok = self.expect("channel")
            number, ntok = self.int_token("channel number", 0, MAX_CHANNELS - 1)
            if number in result.channels:
                raise DslSemanticError(f"duplicate channel {number}", ntok.line, ntok.col)
            self.expect("{")
            ch = _ChannelState(number)
            body = self.parse_body(ch, in_branch=False)
            ch.flush_time(body)
            result.channels[number] = SequenceProgram(number, ch.edge_table(), tuple(body))
        result.shapes = tuple(sorted(self.shapes, key=self.shapes.get))
        result.warnings = self.warnings
        return result

    def parse_body(self, ch: _ChannelState, in_branch: bool) -> list:
        out: list = []
        while True:
            tok = self.next("a statement or '}'")
            if tok.text == "}":
                return out
            if tok.text == "pulse":
                fields = self.key_values(tok, ("f", "amp", "phase", "len"), ("shape",))
                self.stmt_pulse(ch, out, fields, tok)
            elif tok.text == "wait":
                dtok = self.next("a duration")
                self.stmt_wait(ch, out, self.duration_grains(dtok.text, dtok, minimum=1))
            elif tok.text == "repeat":
                count, _ = self.int_token("repeat count", 1, MAX_LOOP_COUNT)
                self.expect("{")
                ch.flush_time(out)
                # iterations must be identical: assume the output may be on at
                # body entry (true from iteration 2 if the body ends with rf on)
                ch.rf_on = True
                body = self.parse_body(ch, in_branch)
                ch.flush_time(body)
                out.append(Loop(count, tuple(body)))
            elif tok.text == "branch":
                if in_branch:
                    # nested branches would make the static timeline depend on
                    # outcomes; the controller schedules around fixed branch points
                    raise DslSemanticError("branch not allowed inside a branch body",
                                           tok.line, tok.col)
                ch.flush_time(out)
                out.append(self.parse_branch(ch, tok))
            elif tok.text == "trigger":
                if in_branch:
                    raise DslSemanticError("trigger not allowed inside a branch body",
                                           tok.line, tok.col)
                ch.flush_time(out)
                out.append(WaitTrigger())
            else:
                raise DslSyntaxError(f"unknown statement {tok.text!r}", tok.line, tok.col)

    def parse_branch(self, ch: _ChannelState, keyword: Token) -> Branch:
        fields = self.key_values(keyword, ("counter", "threshold"))
        try:
            mask = int(fields["counter"], 0)
            threshold = int(fields["threshold"], 0)
        except ValueError:
            raise DslSyntaxError("counter and threshold must be integers",
                                 keyword.line, keyword.col) from None
        if not 1 <= mask <= 0xFF:
            raise DslSemanticError(f"counter mask {mask:#x} must select from 8 counters",
                                   keyword.line, keyword.col)
        if not 0 <= threshold <= MAX_THRESHOLD:
            raise DslSemanticError(f"threshold {threshold} out of range",
                                   keyword.line, keyword.col)
        entry_rf = ch.rf_on
        self.expect("{")
        ch.rf_on = True
        then_body = self.parse_body(ch, in_branch=True)
        ch.flush_time(then_body)
        then_rf = ch.rf_on

        else_body: list = []
        else_rf = entry_rf
        nxt = self.peek()
        if nxt is not None and nxt.text == "else":
            self.pos += 1
            self.expect("{")
            ch.pending_grains = 0
            ch.rf_on = True
            else_body = self.parse_body(ch, in_branch=True)
            ch.flush_time(else_body)
            else_rf = ch.rf_on

        table = ch.edge_table()
        d_then = body_duration_grains(tuple(then_body), table)
        d_else = body_duration_grains(tuple(else_body), table)
        if not else_body and d_then > 0:
            # an omitted else pads to a wait of equal duration
            else_body = [Hold(d_then)]
            d_else = d_then
        if d_then != d_else:
            raise DslSemanticError(
                f"branch bodies differ in duration ({d_then} vs {d_else} grains); "
                "pad the shorter body with wait", keyword.line, keyword.col)
        ch.pending_grains = 0
        ch.rf_on = then_rf or else_rf
        return Branch(mask, threshold, tuple(then_body), tuple(else_body))


def compile_source(source: str, timebase: Timebase | None = None,
                   band: BandLimits | None = None) -> CompiledSequence:
    """Compile pulse-program text into per-channel sequence programs."""
    tb = timebase if timebase is not None else Timebase()
    bl = band if band is not None else BandLimits()
    parser = _Parser(tokenize(source), tb, bl)
    return parser.parse()
