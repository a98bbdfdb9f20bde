"""Deterministic playback of compiled programs.

A walker turns the instruction stream into timed edge firings on the grain
timeline; a renderer synthesizes the bit-exact sample stream of any time
window without materializing samples outside it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coherence import coherent_pow
from .sequence import (Branch, EdgeEvent, Hold, Loop, PhaseMode, PlayEdge, SequenceProgram,
                       WaitTrigger)
from .shaping import EnvelopeSpec, PulseShape, envelope_samples
from .timebase import (ASF_FULL_SCALE, DAC_FULL_SCALE, FTW_WRAP, Timebase, TuningWordSet,
                       _round_away)


class SequencingError(RuntimeError):
    """Program playback hit a state the hardware could not reproduce."""


@dataclass(frozen=True)
class ScheduledEdge:
    """One edge firing: absolute grain time and the words actually loaded."""

    t_grains: int
    edge: EdgeEvent
    words: TuningWordSet  # pow already resolved for coherent edges
    cycles_since_trigger: int


def resolve_words(edge: EdgeEvent, cycles_since_trigger: int) -> TuningWordSet:
    """Words loaded at an edge; coherent edges get their phase word computed."""
    w = edge.words
    if edge.phase_mode is PhaseMode.COHERENT:
        return TuningWordSet(w.ftw, coherent_pow(w.ftw, cycles_since_trigger, w.pow), w.asf)
    return w


def walk_program(prog: SequenceProgram, outcome_for, timebase: Timebase,
                 start_grains: int = 0):
    """Generator over playback events of one channel.

    Yields ("edge", t_grains, ScheduledEdge), ("branch", t_grains, occurrence,
    Branch, choice), ("wait_trigger", t_grains) -- the caller resumes it by
    sending the grain time of the next trigger -- and finally ("end",
    t_grains).  `outcome_for(occurrence, t_grains, branch)` returns "then"
    or "else".
    """
    t = start_grains
    last_trigger = start_grains
    occurrence = 0
    last_fire = None

    def fire(edge: EdgeEvent):
        nonlocal t, last_fire
        t += edge.wait_grains
        if last_fire is not None and t <= last_fire:
            raise SequencingError(
                f"two edges {last_fire} and {t} grains after trigger are not "
                "at least one grain apart")
        last_fire = t
        cycles = (t - last_trigger) * timebase.grain_cycles
        return ScheduledEdge(t, edge, resolve_words(edge, cycles), cycles)

    def run(body):
        nonlocal t, last_trigger, occurrence
        for ins in body:
            if isinstance(ins, PlayEdge):
                yield ("edge", t, fire(prog.edge_table[ins.index]))
            elif isinstance(ins, Hold):
                t += ins.grains
            elif isinstance(ins, Loop):
                for _ in range(ins.count):
                    yield from run(ins.body)
            elif isinstance(ins, Branch):
                occ = occurrence
                occurrence += 1
                choice = outcome_for(occ, t, ins)
                yield ("branch", t, occ, ins, choice, last_trigger)
                yield from run(ins.then_body if choice == "then" else ins.else_body)
            elif isinstance(ins, WaitTrigger):
                resume = yield ("wait_trigger", t)
                if resume is None or resume < t:
                    raise SequencingError("trigger resume time must not move backwards")
                t = resume
                last_trigger = resume
            else:
                raise SequencingError(f"unknown instruction {ins!r}")

    yield from run(prog.program)
    yield ("end", t)


def collect_edges(prog: SequenceProgram, timebase: Timebase,
                  outcome_for=None) -> tuple[list[ScheduledEdge], int]:
    """Flatten a trigger-free program into its edge schedule and end time."""
    outcome_for = outcome_for or (lambda occ, t, br: "then")
    edges: list[ScheduledEdge] = []
    end = 0
    for ev in walk_program(prog, outcome_for, timebase):
        if ev[0] == "edge":
            edges.append(ev[2])
        elif ev[0] == "wait_trigger":
            raise SequencingError("program waits for a trigger; use the controller")
        elif ev[0] == "end":
            end = ev[1]
    return edges, end


def _envelope_at_1ns(shape: PulseShape, segment_cycles: int, timebase: Timebase,
                     dac_period_ns: int = 16) -> np.ndarray:
    """Zero-order-hold envelope across a segment, one value per sysclk cycle."""
    period_cycles = round(dac_period_ns * timebase.sysclk_hz / 1e9)
    n_dac = -(-segment_cycles // period_cycles)  # ceil: last sample may be partial
    plateau = max(0, n_dac - 2 * shape.rise_samples)
    spec = EnvelopeSpec(shape.shape, shape.rise_samples, plateau, 1e9 / dac_period_ns)
    env = envelope_samples(spec)[:n_dac]
    held = np.repeat(env, period_cycles)[:segment_cycles]
    if len(held) < segment_cycles:
        held = np.pad(held, (0, segment_cycles - len(held)))
    return held


def render_window(edges: list[ScheduledEdge], end_grains: int, t0_ns: int, t1_ns: int,
                  timebase: Timebase, shapes: tuple = ()) -> tuple[np.ndarray, np.ndarray]:
    """Sample stream of one channel over [t0, t1) ns at the sysclk rate.

    Within each inter-edge segment the NCO phase is computed in closed form,
    so only the requested window is ever materialized.  After the end of the
    program the output is zero.
    """
    if timebase.sysclk_hz != 1e9:
        raise NotImplementedError("rendering assumes the 1 GHz / 1 ns sample grid")
    t0_ns, t1_ns = int(t0_ns), int(t1_ns)
    if t1_ns <= t0_ns:
        return np.zeros(0), np.zeros(0)
    times = np.arange(t0_ns, t1_ns, dtype=np.int64)
    out = np.zeros(len(times))
    grain = timebase.event_grain_ns
    end_ns = end_grains * grain

    for k, sched in enumerate(edges):
        seg_start = sched.t_grains * grain
        seg_end = edges[k + 1].t_grains * grain if k + 1 < len(edges) else end_ns
        lo = max(seg_start, t0_ns)
        hi = min(seg_end, t1_ns)
        if hi <= lo:
            continue
        w = sched.words
        if w.asf == 0:
            continue
        i = np.arange(lo - seg_start, hi - seg_start, dtype=np.uint64)
        phase = (np.uint64(w.pow << 16) + np.uint64(w.ftw) * i) % np.uint64(FTW_WRAP)
        y = (w.asf / ASF_FULL_SCALE) * np.sin(2.0 * np.pi * phase.astype(np.float64) / FTW_WRAP)
        dds = _round_away(y * DAC_FULL_SCALE) / DAC_FULL_SCALE
        if sched.edge.shape_ref is not None:
            env = _envelope_at_1ns(shapes[sched.edge.shape_ref], seg_end - seg_start, timebase)
            dds = dds * env[lo - seg_start:hi - seg_start]
        out[lo - t0_ns:hi - t0_ns] = dds
    return times.astype(np.float64), out


def render_tone_window(edges: list[ScheduledEdge], end_grains: int, t0_ns: float, t1_ns: float,
                       timebase: Timebase, sample_rate_hz: float,
                       shapes: tuple = ()) -> np.ndarray:
    """Analog-reconstruction view: each segment as an ideal tone, any rate.

    Used by the upconversion chain, which needs sample rates far above
    sysclk.  Phase continues exactly from the segment's tuning words.
    """
    n = int(round((t1_ns - t0_ns) * 1e-9 * sample_rate_hz))
    t = t0_ns * 1e-9 + np.arange(n) / sample_rate_hz
    out = np.zeros(n)
    grain = timebase.event_grain_ns
    end_s = end_grains * grain * 1e-9
    for k, sched in enumerate(edges):
        seg_start = sched.t_grains * grain * 1e-9
        seg_end = edges[k + 1].t_grains * grain * 1e-9 if k + 1 < len(edges) else end_s
        mask = (t >= seg_start) & (t < seg_end)
        if not mask.any():
            continue
        w = sched.words
        if w.asf == 0:
            continue
        f = w.ftw * timebase.sysclk_hz / FTW_WRAP
        phi0 = 2.0 * np.pi * (w.pow << 16) / FTW_WRAP
        tt = t[mask] - seg_start
        seg = (w.asf / ASF_FULL_SCALE) * np.sin(2.0 * np.pi * f * tt + phi0)
        if sched.edge.shape_ref is not None:
            shape = shapes[sched.edge.shape_ref]
            seg_cycles = int(round((seg_end - seg_start) * timebase.sysclk_hz))
            env = _envelope_at_1ns(shape, seg_cycles, timebase)
            idx = np.minimum((tt * timebase.sysclk_hz).astype(np.int64), seg_cycles - 1)
            seg = seg * env[idx]
        out[mask] = seg
    return out
