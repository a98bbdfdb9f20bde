"""Master-controller simulation: orchestration, detection, conditional feedback.

One logical scheduler owns the global timeline.  Branch points sit at fixed,
outcome-independent times (branch bodies are duration-equal), so the
controller places each detection window backwards from its branch point,
leaving exactly the decision latency plus the wire-update time in between.
Identical programs, outcome lists and seeds give bit-identical timelines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backplane import Backplane, LinkModel, WireWord, format_word
from .coherence import CoherenceClock
from .playback import ScheduledEdge, SequencingError, walk_program
from .sequence import Branch, PlayEdge, SequenceProgram
from .timebase import NcoState, OFF_WORDS, Timebase, TuningWordSet, freq_from_ftw

N_COUNTERS = 8
CHANNELS_PER_CARD = 4

# per-channel register map used by real-time parameter updates
REG_FTW_LO = 0x0010      # ftw bits 0..23
REG_FTW_HI_POW = 0x0011  # ftw bits 24..31 | pow << 8
REG_ASF = 0x0012


@dataclass(frozen=True)
class DetectionEvent:
    """Photon counts accumulated by one counter over one window."""

    counter_id: int
    window_start_ns: float
    window_len_ns: float
    counts: int

    def __post_init__(self):
        if not 0 <= self.counter_id < N_COUNTERS:
            raise ValueError(f"counter_id {self.counter_id} outside 0..{N_COUNTERS - 1}")
        if self.counts < 0:
            raise ValueError("counts must be >= 0")


@dataclass(frozen=True)
class FeedbackBudget:
    """Latency decomposition of one feedback path; components sum to total."""

    detect_ns: float
    decide_ns: float
    update_ns: float
    total_ns: float


def threshold_detect(event: DetectionEvent, threshold: int) -> str:
    """Classify a detection window; counts at the threshold read as bright."""
    return "bright" if event.counts >= threshold else "dark"


def update_path_latency_ns(route: str, link: LinkModel, timebase: Timebase,
                           n_words: int = 1) -> float:
    """Latency of a parameter update: backplane words or one slow SPI transfer."""
    if route == "wire":
        return n_words * link.serialization_ns + link.commit_latency_ns
    if route == "spi":
        return float(timebase.spi_update_ns)
    raise ValueError(f"unknown update route {route!r}")


class PlaybackOutcomes:
    """Deterministic outcome list, consumed in global branch order."""

    def __init__(self, outcomes):
        outcomes = tuple(outcomes)
        for o in outcomes:
            if o not in ("bright", "dark"):
                raise ValueError(f"outcome must be 'bright' or 'dark', got {o!r}")
        self.outcomes = outcomes

    def drawer(self, rng):
        it = iter(self.outcomes)

        def draw(threshold: int):
            try:
                outcome = next(it)
            except StopIteration:
                raise SequencingError("playback outcome list exhausted") from None
            counts = threshold if outcome == "bright" else max(threshold - 1, 0)
            return counts, outcome, outcome
        return draw


class PoissonOutcomes:
    """Seeded Poisson photon counts: bright or dark state, then a count draw."""

    def __init__(self, bright_mean: float, dark_mean: float, p_bright: float = 0.5):
        if bright_mean < 0 or dark_mean < 0:
            raise ValueError("means must be >= 0")
        if not 0.0 <= p_bright <= 1.0:
            raise ValueError("p_bright must be in 0..1")
        self.bright_mean = bright_mean
        self.dark_mean = dark_mean
        self.p_bright = p_bright

    def drawer(self, rng):
        def draw(threshold: int):
            state = "bright" if rng.random() < self.p_bright else "dark"
            mean = self.bright_mean if state == "bright" else self.dark_mean
            counts = int(rng.poisson(mean))
            event = DetectionEvent(0, 0.0, 0.0, counts)
            return counts, threshold_detect(event, threshold), state
        return draw


@dataclass
class TimelineEvent:
    t_ns: float
    card: int        # slot, or -1 for controller-level events
    channel: int     # global channel, or -1
    event: str
    detail: str


@dataclass
class BranchRecord:
    shot: int
    slot: int
    channel: int          # global channel index
    occurrence: int
    t_branch_ns: float
    detection: DetectionEvent
    outcome: str
    true_state: str
    taken: str
    budget: FeedbackBudget
    commit_times_ns: tuple = ()
    n_update_words: int = 0


@dataclass
class ShotRecord:
    index: int
    branches: list = field(default_factory=list)
    events: list | None = None
    edges: dict | None = None      # global channel -> list[ScheduledEdge]
    end_grains: dict = field(default_factory=dict)
    trigger_times_ns: tuple = ()


@dataclass
class ExperimentResult:
    shots: list
    tally: dict
    seed: int | None
    timebase: Timebase
    shapes: tuple


class ChannelCard:
    """One simulated card: four NCO channels, register memory, coherence clocks."""

    def __init__(self, slot: int):
        self.slot = slot
        self.programs: dict[int, SequenceProgram] = {}
        self.memory: dict[tuple[int, int], int] = {}
        self.nco = [NcoState() for _ in range(CHANNELS_PER_CARD)]
        self.clocks = [CoherenceClock() for _ in range(CHANNELS_PER_CARD)]
        self.commits: list[tuple[float, int, int, int]] = []

    def commit_write(self, bank: int, mem_addr: int, payload: int, t_ns: float) -> None:
        self.memory[(bank, mem_addr)] = payload
        self.commits.append((t_ns, bank, mem_addr, payload))

    def on_trigger(self, t_ns: float) -> None:
        for clock in self.clocks:
            clock.reset()


def _first_edge_words(body, edge_table) -> TuningWordSet | None:
    for ins in body:
        if isinstance(ins, PlayEdge):
            return edge_table[ins.index].words
        if isinstance(ins, Branch):
            inner = _first_edge_words(ins.then_body, edge_table)
            if inner is not None:
                return inner
        if hasattr(ins, "body"):
            inner = _first_edge_words(ins.body, edge_table)
            if inner is not None:
                return inner
    return None


def _has_edges(branch: Branch) -> bool:
    def scan(body):
        for ins in body:
            if isinstance(ins, PlayEdge):
                return True
            if isinstance(ins, Branch) and (scan(ins.then_body) or scan(ins.else_body)):
                return True
            if hasattr(ins, "body") and scan(ins.body):
                return True
        return False
    return scan(branch.then_body) or scan(branch.else_body)


def _advance(gen, send_val, sink: list):
    """Run one walker until it parks at a trigger or finishes."""
    ev = gen.send(send_val)
    while True:
        if ev[0] == "wait_trigger":
            return ("parked", ev[1])
        sink.append(ev)
        if ev[0] == "end":
            return ("done", ev[1])
        ev = next(gen)


class Controller:
    """The master card: loads programs, triggers shots, resolves branches."""

    def __init__(self, timebase: Timebase | None = None, link: LinkModel | None = None,
                 decide_ns: float = 1000.0, detect_window_ns: float = 10_000.0,
                 detect_readout_ns: float = 0.0, update_route: str = "wire"):
        self.timebase = timebase if timebase is not None else Timebase()
        self.backplane = Backplane(link)
        self.decide_ns = float(decide_ns)
        self.detect_window_ns = float(detect_window_ns)
        self.detect_readout_ns = float(detect_readout_ns)
        if update_route not in ("wire", "spi"):
            raise ValueError(f"unknown update route {update_route!r}")
        self.update_route = update_route
        self.cards: dict[int, ChannelCard] = {}
        self.channels: dict[int, tuple[SequenceProgram, tuple]] = {}

    @property
    def link(self) -> LinkModel:
        return self.backplane.link

    def load(self, global_channel: int, program: SequenceProgram, shapes: tuple = ()) -> None:
        if not 0 <= global_channel < 8 * CHANNELS_PER_CARD:
            raise ValueError(f"channel {global_channel} outside 0..31")
        if global_channel in self.channels:
            raise ValueError(f"channel {global_channel} already loaded")
        slot = global_channel // CHANNELS_PER_CARD
        if slot not in self.cards:
            card = ChannelCard(slot)
            self.cards[slot] = card
            self.backplane.register(slot, card)
        self.cards[slot].programs[global_channel % CHANNELS_PER_CARD] = program
        self.channels[global_channel] = (program, tuple(shapes))

    # -- static schedule ----------------------------------------------------

    def _walk_all(self, outcome_for):
        """Drive every channel walker through all trigger rounds.

        Returns (events per channel, trigger grain times, end grains per channel).
        """
        events: dict[int, list] = {ch: [] for ch in self.channels}
        walkers = {}
        for ch, (program, _) in sorted(self.channels.items()):
            walkers[ch] = walk_program(
                program,
                (lambda ch_: lambda occ, t, br: outcome_for(ch_, occ, t, br))(ch),
                self.timebase)
        status = {ch: _advance(g, None, events[ch]) for ch, g in walkers.items()}
        triggers = [0]
        while any(s[0] == "parked" for s in status.values()):
            t_next = max(s[1] for s in status.values())
            triggers.append(t_next)
            for ch, s in list(status.items()):
                if s[0] == "parked":
                    status[ch] = _advance(walkers[ch], t_next, events[ch])
        ends = {ch: s[1] for ch, s in status.items()}
        return events, triggers, ends

    def branch_schedule(self):
        """All branch occurrences in global time order, outcome-independent.

        Branch bodies are duration-equal and may not contain further
        branches, so times, trigger rounds and end times do not depend on
        the outcomes drawn later.
        """
        events, triggers, ends = self._walk_all(lambda ch, occ, t, br: "then")
        found = []
        for ch, evs in events.items():
            for ev in evs:
                if ev[0] == "branch":
                    _, t, occ, branch, _, last_trig = ev
                    found.append((t, ch // CHANNELS_PER_CARD, ch, occ, branch, last_trig))
        found.sort(key=lambda item: (item[0], item[1], item[2], item[3]))
        return found, triggers, ends

    # -- per-shot feedback resolution ----------------------------------------

    def _resolve_branch(self, shot: int, t_grains: int, ch: int, occ: int,
                        branch: Branch, last_trigger_grains: int, draw,
                        link_free: list, record: list | None):
        grain = float(self.timebase.event_grain_ns)
        t_branch = t_grains * grain
        slot = ch // CHANNELS_PER_CARD
        program, _ = self.channels[ch]

        n_words = 3 if _has_edges(branch) else 0
        if n_words and self.update_route == "wire":
            reserve = n_words * self.link.serialization_ns + self.link.commit_latency_ns
        elif n_words:
            reserve = float(self.timebase.spi_update_ns)
        else:
            reserve = 0.0

        window_end = t_branch - self.detect_readout_ns - self.decide_ns - reserve
        window_start = window_end - self.detect_window_ns
        if window_start < last_trigger_grains * grain:
            raise SequencingError(
                f"branch at {t_branch:.0f} ns leaves no room for a "
                f"{self.detect_window_ns:.0f} ns window plus "
                f"{self.decide_ns + reserve + self.detect_readout_ns:.1f} ns of feedback")

        counts, outcome, true_state = draw(branch.threshold)
        counter_id = (branch.counter_mask & -branch.counter_mask).bit_length() - 1
        detection = DetectionEvent(counter_id, window_start, self.detect_window_ns, counts)
        taken = "then" if outcome == "bright" else "else"

        t_counts = window_end + self.detect_readout_ns
        t_decided = t_counts + self.decide_ns
        commits = []
        if n_words and self.update_route == "wire":
            words = _first_edge_words(branch.then_body if taken == "then" else branch.else_body,
                                      program.edge_table) or OFF_WORDS
            payloads = (
                (REG_FTW_LO, words.ftw & 0xFFFFFF),
                (REG_FTW_HI_POW, (words.ftw >> 24) | (words.pow << 8)),
                (REG_ASF, words.asf),
            )
            t_send = max(t_decided, link_free[0])
            for k, (reg, payload) in enumerate(payloads):
                word = WireWord(slot, ch % CHANNELS_PER_CARD, reg, payload)
                start = t_send + k * self.link.serialization_ns
                delivered = self.backplane.deliver(word, start)
                commits.extend(t for _, t in delivered)
                if record is not None:
                    record.append(TimelineEvent(start, slot, ch, "wireword", format_word(word)))
                    for _, t_c in delivered:
                        record.append(TimelineEvent(t_c, slot, ch, "commit",
                                                    f"addr={reg:#06x} data={payload:#x}"))
            link_free[0] = t_send + n_words * self.link.serialization_ns
        elif n_words:
            commits.append(t_decided + float(self.timebase.spi_update_ns))

        if commits and max(commits) > t_branch + 1e-6:
            raise SequencingError(
                f"updates for the branch at {t_branch:.0f} ns commit at "
                f"{max(commits):.1f} ns, after the branch point")

        total = t_branch - window_end
        detect = t_counts - window_end
        decide = t_decided - t_counts
        budget = FeedbackBudget(detect, decide, total - detect - decide, total)

        if record is not None:
            record.append(TimelineEvent(window_start, slot, ch, "detect-window",
                                        f"counter {counter_id} len={self.detect_window_ns:g} ns"))
            record.append(TimelineEvent(t_decided, -1, ch, "decision",
                                        f"counts={counts} threshold={branch.threshold} "
                                        f"-> {outcome}"))
            record.append(TimelineEvent(t_branch, slot, ch, "branch", f"taken={taken}"))

        return BranchRecord(shot, slot, ch, occ, t_branch, detection, outcome,
                            true_state, taken, budget, tuple(commits), n_words)

    # -- experiment loop ------------------------------------------------------

    def run_experiment(self, outcome_source, shots: int, seed: int | None = None,
                       record_shots: int | None = None) -> ExperimentResult:
        """Run triggered shots, resolving branches through the outcome source.

        `record_shots` limits how many shots keep full event/edge traces
        (default: all when shots <= 64, else none).
        """
        if shots < 0:
            raise ValueError("shots must be >= 0")
        if record_shots is None:
            record_shots = shots if shots <= 64 else 0
        rng = np.random.default_rng(seed)
        draw = outcome_source.drawer(rng)
        schedule, triggers, ends = self.branch_schedule()
        grain = float(self.timebase.event_grain_ns)
        shapes = next(iter(self.channels.values()))[1] if self.channels else ()

        records = []
        tally: dict[str, int] = {"bright": 0, "dark": 0}
        for shot in range(shots):
            recording = shot < record_shots
            events: list[TimelineEvent] = [] if recording else None
            link_free = [0.0]
            resolved: dict[tuple[int, int], BranchRecord] = {}
            for t_grains, slot, ch, occ, branch, last_trig in schedule:
                rec = self._resolve_branch(shot, t_grains, ch, occ, branch, last_trig,
                                           draw, link_free, events)
                resolved[(ch, occ)] = rec
                tally[rec.outcome] += 1

            record = ShotRecord(shot, branches=[resolved[k] for k in sorted(resolved)],
                                end_grains=dict(ends),
                                trigger_times_ns=tuple(t * grain for t in triggers))
            if recording:
                # replay the full edge schedule only when a trace is kept
                walk_events, _, _ = self._walk_all(
                    lambda ch, occ, t, br: resolved[(ch, occ)].taken)
                for t_trig in triggers:
                    self.backplane.send_trigger(t_trig * grain)
                    events.append(TimelineEvent(t_trig * grain, -1, -1, "trigger",
                                                f"shot {shot}"))
                record.edges = {}
                for ch, evs in walk_events.items():
                    sched = [ev[2] for ev in evs if ev[0] == "edge"]
                    record.edges[ch] = sched
                    card = self.cards[ch // CHANNELS_PER_CARD]
                    for s in sched:
                        events.append(TimelineEvent(
                            s.t_grains * grain, ch // CHANNELS_PER_CARD, ch, "edge",
                            f"f={freq_from_ftw(s.words.ftw, self.timebase):g}Hz "
                            f"pow={s.words.pow} asf={s.words.asf} "
                            f"mode={s.edge.phase_mode.value}"))
                        nco = card.nco[ch % CHANNELS_PER_CARD]
                        nco.words = s.words
                        nco.accumulator = 0
                        nco.elapsed_cycles = s.cycles_since_trigger
                        card.clocks[ch % CHANNELS_PER_CARD].total_cycles = s.cycles_since_trigger
                events.sort(key=lambda e: (e.t_ns, e.card, e.channel, e.event))
                record.events = events
            records.append(record)
        return ExperimentResult(records, tally, seed, self.timebase, shapes)


def run_experiment(programs: dict[int, SequenceProgram], outcome_source, shots: int,
                   seed: int | None = None, shapes: tuple = (),
                   **controller_kwargs) -> ExperimentResult:
    """Convenience wrapper: load programs into a fresh controller and run."""
    ctl = Controller(**controller_kwargs)
    for ch, program in sorted(programs.items()):
        ctl.load(ch, program, shapes)
    return ctl.run_experiment(outcome_source, shots, seed)
