"""Command-line front end: compile pulse programs, run experiments, analyze traces.

    ddssim compile <src.dsl> -o <out.bin>
    ddssim run <run.manifest> -o <dir> [--seed N] [--window t0..t1]
    ddssim analyze <csv> [--psd] [--jitter f_lo:f_hi] [--normalize-to F] [-o out]

Exit codes: 0 success, 1 source syntax error, 2 semantic/range error,
3 manifest error, 4 runtime sequencing error.
"""

from __future__ import annotations

import argparse
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsl
from .controller import Controller, PlaybackOutcomes, PoissonOutcomes
from .noise import (BandError, SpectralDensity, estimate_psd, integrate_jitter,
                    normalize_carrier, read_psd_csv, write_psd_csv)
from .playback import SequencingError, render_tone_window, render_window
from .sequence import CodecError, encode
from .shaping import first_sidelobe_db
from .timebase import Timebase
from .upconversion import Sideband, SsbConfig, DoublerChain, apply_doubler_chain, ssb_mix

EXIT_OK = 0
EXIT_SYNTAX = 1
EXIT_SEMANTIC = 2
EXIT_MANIFEST = 3
EXIT_RUNTIME = 4

MAX_WAVEFORM_SAMPLES = 4_000_000


class ManifestError(Exception):
    pass


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _parse_duration_ns(text: str, what: str) -> int:
    try:
        return dsl.parse_duration_ns(text.strip(), dsl.Token(text, 0, 0))
    except dsl.SourceError as exc:
        raise ManifestError(f"bad {what} {text!r}: {exc.msg}") from None


def _parse_freq_hz(text: str, what: str) -> float:
    try:
        return float(dsl.parse_frequency_hz(text.strip(), dsl.Token(text, 0, 0)))
    except dsl.SourceError as exc:
        raise ManifestError(f"bad {what} {text!r}: {exc.msg}") from None


def _parse_window(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition("..")
    if not sep:
        raise ManifestError(f"bad window {text!r} (expected t0..t1)")
    t0 = _parse_duration_ns(lo, "window start")
    t1 = _parse_duration_ns(hi, "window end")
    if t1 <= t0:
        raise ManifestError("window is empty")
    return t0, t1


def _parse_kwargs(text: str, what: str) -> dict:
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = part.partition("=")
        if not sep:
            raise ManifestError(f"bad {what} argument {part!r}")
        out[key.strip()] = value.strip()
    return out


@dataclass
class UpconvertSpec:
    kind: str                      # "doubler" | "ssb"
    sample_rate_hz: float
    stages: int = 0
    channel: int = 0
    lo_freq_hz: float = 0.0
    sideband: Sideband = Sideband.UPPER
    i_channel: int = 0
    q_channel: int = 1


@dataclass
class RunManifest:
    """Experiment description: programs, outcome source, shot count, chain."""

    sources: list = field(default_factory=list)       # (channel | None, Path)
    outcome_kind: str = "playback"
    playback: tuple = ()
    poisson: dict = field(default_factory=dict)
    shots: int = 1
    seed: int | None = None
    detect_window_ns: float = 10_000.0
    decide_ns: float = 1000.0
    detect_readout_ns: float = 0.0
    update_route: str = "wire"
    upconvert: UpconvertSpec | None = None
    window: tuple | None = None
    timebase: Timebase = field(default_factory=Timebase)


def parse_manifest(path: Path) -> RunManifest:
    m = RunManifest()
    tb_overrides: dict = {}
    base = path.parent
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(str(exc)) from None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not value:
            raise ManifestError(f"{path}:{lineno}: expected 'key = value'")
        if key == "source":
            m.sources.append((None, base / value))
        elif key.startswith("program."):
            try:
                channel = int(key.split(".", 1)[1])
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: bad channel in {key!r}") from None
            m.sources.append((channel, base / value))
        elif key == "outcomes":
            kind, _, rest = value.partition(":")
            kind = kind.strip()
            if kind == "playback":
                m.outcome_kind = "playback"
                m.playback = tuple(s.strip() for s in rest.split(",") if s.strip())
            elif kind == "poisson":
                m.outcome_kind = "poisson"
                kwargs = _parse_kwargs(rest, "poisson")
                try:
                    m.poisson = {k: float(v) for k, v in kwargs.items()}
                except ValueError:
                    raise ManifestError(f"{path}:{lineno}: bad poisson value") from None
            else:
                raise ManifestError(f"{path}:{lineno}: unknown outcome source {kind!r}")
        elif key == "shots":
            m.shots = int(value)
        elif key == "seed":
            m.seed = int(value)
        elif key == "detect.window":
            m.detect_window_ns = float(_parse_duration_ns(value, key))
        elif key == "detect.decide":
            m.decide_ns = float(_parse_duration_ns(value, key))
        elif key == "detect.readout":
            m.detect_readout_ns = float(_parse_duration_ns(value, key))
        elif key == "update.route":
            if value not in ("wire", "spi"):
                raise ManifestError(f"{path}:{lineno}: update route must be wire or spi")
            m.update_route = value
        elif key == "window":
            m.window = _parse_window(value)
        elif key == "upconvert":
            m.upconvert = _parse_upconvert(value, f"{path}:{lineno}")
        elif key.startswith("timebase."):
            name = key.split(".", 1)[1]
            if name not in ("sysclk_hz", "sync_divider", "event_grain_ns", "spi_update_ns"):
                raise ManifestError(f"{path}:{lineno}: unknown timebase field {name!r}")
            tb_overrides[name] = float(value) if name == "sysclk_hz" else int(value)
        else:
            raise ManifestError(f"{path}:{lineno}: unknown key {key!r}")

    if tb_overrides:
        try:
            m.timebase = Timebase(**tb_overrides)
        except ValueError as exc:
            raise ManifestError(str(exc)) from None
    if not m.sources:
        raise ManifestError(f"{path}: no program sources given")
    for _, src in m.sources:
        if not src.is_file():
            raise ManifestError(f"referenced file {src} does not exist")
    return m


def _parse_upconvert(value: str, where: str) -> UpconvertSpec | None:
    if value == "none":
        return None
    m = re.match(r"^(\w+)\((.*)\)$", value)
    if not m:
        raise ManifestError(f"{where}: bad upconvert spec {value!r}")
    kind, kwargs = m.group(1), _parse_kwargs(m.group(2), "upconvert")
    rate = _parse_freq_hz(kwargs.pop("rate", "16GHz"), "upconvert rate")
    if kind == "doubler":
        spec = UpconvertSpec("doubler", rate,
                             stages=int(kwargs.pop("stages", 3)),
                             channel=int(kwargs.pop("channel", 0)))
    elif kind == "ssb":
        if "lo" not in kwargs:
            raise ManifestError(f"{where}: ssb needs lo=<freq>")
        try:
            sideband = Sideband(kwargs.pop("sideband", "upper"))
        except ValueError:
            raise ManifestError(f"{where}: sideband must be upper or lower") from None
        spec = UpconvertSpec("ssb", rate,
                             lo_freq_hz=_parse_freq_hz(kwargs.pop("lo"), "lo"),
                             sideband=sideband,
                             i_channel=int(kwargs.pop("i", 0)),
                             q_channel=int(kwargs.pop("q", 1)))
    else:
        raise ManifestError(f"{where}: unknown upconvert kind {kind!r}")
    if kwargs:
        raise ManifestError(f"{where}: unknown upconvert arguments {sorted(kwargs)}")
    return spec


# -- compile ----------------------------------------------------------------


def cmd_compile(args) -> int:
    src = Path(args.source)
    try:
        text = src.read_text()
    except OSError as exc:
        return _fail(EXIT_SEMANTIC, str(exc))
    try:
        compiled = dsl.compile_source(text)
    except dsl.DslSyntaxError as exc:
        return _fail(EXIT_SYNTAX, f"{src}: {exc}")
    except dsl.SourceError as exc:
        return _fail(EXIT_SEMANTIC, f"{src}: {exc}")
    for warning in compiled.warnings:
        print(f"warning: {src}: {warning}", file=sys.stderr)

    out = Path(args.output)
    try:
        encoded = {ch: encode(p) for ch, p in sorted(compiled.channels.items())}
    except CodecError as exc:
        return _fail(EXIT_SEMANTIC, str(exc))
    multi = len(encoded) > 1
    for ch, blob in encoded.items():
        path = out.parent / f"{out.stem}.ch{ch}{out.suffix}" if multi else out
        path.write_bytes(blob.data)
        program = compiled.channels[ch]
        print(f"channel {ch}: {blob.byte_length} bytes, {len(program.edge_table)} edges, "
              f"{(blob.byte_length - 10 - 16 * len(program.edge_table)) // 4} "
              f"instruction words -> {path}")
    if not encoded:
        out.write_bytes(b"")
        print("no channel blocks; wrote empty file")
    return EXIT_OK


# -- run ---------------------------------------------------------------------


def _load_programs(manifest: RunManifest):
    channels = {}
    shapes: tuple = ()
    warnings: list[str] = []
    for bound_channel, src in manifest.sources:
        compiled = dsl.compile_source(src.read_text(), manifest.timebase)
        warnings.extend(f"{src}: {w}" for w in compiled.warnings)
        if bound_channel is None:
            new = compiled.channels
        else:
            if len(compiled.channels) != 1:
                raise ManifestError(
                    f"{src} must define exactly one channel to bind to {bound_channel}")
            program = next(iter(compiled.channels.values()))
            new = {bound_channel: program}
        for ch, program in new.items():
            if ch in channels:
                raise ManifestError(f"channel {ch} defined twice")
            channels[ch] = program
        if compiled.shapes:
            if shapes and compiled.shapes != shapes:
                raise ManifestError("shape tables differ between sources; "
                                    "define all shaped channels in one file")
            shapes = compiled.shapes
    return channels, shapes, warnings


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def cmd_run(args) -> int:
    try:
        manifest = parse_manifest(Path(args.manifest))
    except ManifestError as exc:
        return _fail(EXIT_MANIFEST, str(exc))
    if args.seed is not None:
        manifest.seed = args.seed
    if args.window is not None:
        try:
            manifest.window = _parse_window(args.window)
        except ManifestError as exc:
            return _fail(EXIT_MANIFEST, str(exc))

    try:
        channels, shapes, warnings = _load_programs(manifest)
    except dsl.DslSyntaxError as exc:
        return _fail(EXIT_SYNTAX, str(exc))
    except dsl.SourceError as exc:
        return _fail(EXIT_SEMANTIC, str(exc))
    except ManifestError as exc:
        return _fail(EXIT_MANIFEST, str(exc))
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)

    if manifest.outcome_kind == "playback":
        source = PlaybackOutcomes(manifest.playback)
    else:
        try:
            source = PoissonOutcomes(
                bright_mean=manifest.poisson.get("bright_mean", 20.0),
                dark_mean=manifest.poisson.get("dark_mean", 1.0),
                p_bright=manifest.poisson.get("p_bright", 0.5))
        except ValueError as exc:
            return _fail(EXIT_MANIFEST, str(exc))

    ctl = Controller(timebase=manifest.timebase, decide_ns=manifest.decide_ns,
                     detect_window_ns=manifest.detect_window_ns,
                     detect_readout_ns=manifest.detect_readout_ns,
                     update_route=manifest.update_route)
    for ch, program in sorted(channels.items()):
        ctl.load(ch, program, shapes)
    try:
        result = ctl.run_experiment(source, manifest.shots, manifest.seed,
                                    record_shots=max(1, min(manifest.shots, 64)))
    except SequencingError as exc:
        return _fail(EXIT_RUNTIME, str(exc))

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    timeline_rows = []
    for shot in result.shots:
        for ev in shot.events or ():
            timeline_rows.append((repr(ev.t_ns), ev.card if ev.card >= 0 else "",
                                  ev.channel if ev.channel >= 0 else "", ev.event, ev.detail))
    _write_csv(out / "timeline.csv", "t_ns,card,channel,event,detail", timeline_rows)

    _write_csv(out / "outcomes.csv",
               "shot,slot,channel,occurrence,t_branch_ns,counts,outcome,true_state,taken",
               [(b.shot, b.slot, b.channel, b.occurrence, repr(b.t_branch_ns),
                 b.detection.counts, b.outcome, b.true_state, b.taken)
                for shot in result.shots for b in shot.branches])

    _write_csv(out / "tally.csv", "outcome,count",
               sorted(result.tally.items()))

    _write_csv(out / "feedback.csv",
               "shot,slot,channel,occurrence,window_start_ns,window_end_ns,detect_ns,"
               "decide_ns,update_ns,total_ns,t_branch_ns,n_update_words,last_commit_ns",
               [(b.shot, b.slot, b.channel, b.occurrence, repr(b.detection.window_start_ns),
                 repr(b.detection.window_start_ns + b.detection.window_len_ns),
                 repr(b.budget.detect_ns), repr(b.budget.decide_ns), repr(b.budget.update_ns),
                 repr(b.budget.total_ns), repr(b.t_branch_ns), b.n_update_words,
                 repr(max(b.commit_times_ns)) if b.commit_times_ns else "")
                for shot in result.shots for b in shot.branches])

    code = _write_waveforms(manifest, result, out)
    if code != EXIT_OK:
        return code
    print(f"{manifest.shots} shots -> {out}  "
          f"(tally: {result.tally['bright']} bright / {result.tally['dark']} dark)")
    return EXIT_OK


def _write_waveforms(manifest: RunManifest, result, out: Path) -> int:
    shot0 = next((s for s in result.shots if s.edges is not None), None)
    if shot0 is None:
        return EXIT_OK
    tb = result.timebase
    grain = tb.event_grain_ns
    if manifest.window is not None:
        t0, t1 = manifest.window
    else:
        t1 = max((end * grain for end in shot0.end_grains.values()), default=0)
        t0 = 0
        if t1 - t0 > MAX_WAVEFORM_SAMPLES:
            return _fail(EXIT_MANIFEST,
                         f"sequence spans {t1 - t0} ns; pass window = t0..t1 to dump a slice")
    for ch, edges in sorted(shot0.edges.items()):
        t, amp = render_window(edges, shot0.end_grains[ch], t0, t1, tb, result.shapes)
        _write_csv(out / f"waveform_ch{ch:02d}.csv", "t_ns,amplitude",
                   ((int(ti), repr(ai)) for ti, ai in zip(t, amp)))

    spec = manifest.upconvert
    if spec is not None:
        n = int(round((t1 - t0) * 1e-9 * spec.sample_rate_hz))
        if n > 8 * MAX_WAVEFORM_SAMPLES:
            return _fail(EXIT_MANIFEST, "upconversion window too long for the sample rate")
        if spec.kind == "doubler":
            if spec.channel not in shot0.edges:
                return _fail(EXIT_MANIFEST, f"upconvert channel {spec.channel} not loaded")
            base = render_tone_window(shot0.edges[spec.channel],
                                      shot0.end_grains[spec.channel],
                                      t0, t1, tb, spec.sample_rate_hz, result.shapes)
            ftws = [e.words.ftw for e in shot0.edges[spec.channel] if e.words.asf]
            f_in = ftws[0] * tb.sysclk_hz / 2**32 if ftws else 0.0
            chain = DoublerChain(spec.stages, f_in if f_in > 0 else 1.0)
            y = apply_doubler_chain(chain, base, spec.sample_rate_hz)
        else:
            for need in (spec.i_channel, spec.q_channel):
                if need not in shot0.edges:
                    return _fail(EXIT_MANIFEST, f"ssb needs channel {need} loaded")
            i = render_tone_window(shot0.edges[spec.i_channel],
                                   shot0.end_grains[spec.i_channel],
                                   t0, t1, tb, spec.sample_rate_hz, result.shapes)
            q = render_tone_window(shot0.edges[spec.q_channel],
                                   shot0.end_grains[spec.q_channel],
                                   t0, t1, tb, spec.sample_rate_hz, result.shapes)
            cfg = SsbConfig(spec.lo_freq_hz, sideband=spec.sideband)
            y = ssb_mix(i, q, cfg, spec.sample_rate_hz)
        t = t0 + np.arange(n) / spec.sample_rate_hz * 1e9
        _write_csv(out / "upconverted.csv", "t_ns,amplitude",
                   ((repr(ti), repr(ai)) for ti, ai in zip(t, y)))
    return EXIT_OK


# -- analyze -------------------------------------------------------------------


def _load_trace_csv(path: Path) -> tuple[np.ndarray, float]:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
        raise ValueError(f"{path}: expected two columns t_ns,amplitude")
    t, amp = data[:, 0], data[:, 1]
    dt = np.diff(t)
    if not np.allclose(dt, dt[0]):
        raise ValueError(f"{path}: trace is not uniformly sampled")
    return amp, 1e9 / dt[0]


def cmd_analyze(args) -> int:
    path = Path(args.input)
    try:
        first = path.open().readline()
    except OSError as exc:
        return _fail(EXIT_SEMANTIC, str(exc))

    sd = None
    try:
        if first.startswith("#") or first.startswith("offset_hz"):
            sd = read_psd_csv(path)
        else:
            amp, fs = _load_trace_csv(path)
            lobe = first_sidelobe_db(amp)
            print(f"first sidelobe: {lobe:.2f} dB relative to carrier")
            if args.psd or args.jitter or args.normalize_to:
                sd = estimate_psd(amp, fs)
    except (ValueError, OSError) as exc:
        return _fail(EXIT_SEMANTIC, str(exc))

    out_base = Path(args.output) if args.output else path.with_suffix("")
    if sd is not None and args.psd:
        target = out_base.with_name(out_base.name + "_psd.csv")
        write_psd_csv(target, sd)
        print(f"psd: {len(sd.offsets_hz)} points at carrier {sd.carrier_hz:g} Hz -> {target}")

    if args.normalize_to and sd is not None:
        new_carrier = _parse_freq_hz(args.normalize_to, "carrier")
        shifted = normalize_carrier(sd, new_carrier)
        shift = shifted.levels_dbc_hz[0] - sd.levels_dbc_hz[0]
        target = out_base.with_name(out_base.name + "_normalized.csv")
        write_psd_csv(target, shifted)
        print(f"normalized {sd.carrier_hz:g} Hz -> {new_carrier:g} Hz "
              f"({shift:+.2f} dB) -> {target}")
        sd = shifted

    if args.jitter and sd is not None:
        lo, sep, hi = args.jitter.partition(":")
        if not sep:
            return _fail(EXIT_SEMANTIC, f"bad band {args.jitter!r} (expected f_lo:f_hi)")
        try:
            f_lo, f_hi = _parse_freq_hz(lo, "band edge"), _parse_freq_hz(hi, "band edge")
            sigma = integrate_jitter(sd, f_lo, f_hi)
        except (BandError, ManifestError) as exc:
            return _fail(EXIT_SEMANTIC, str(exc))
        print(f"rms jitter {f_lo:g}..{f_hi:g} Hz at {sd.carrier_hz:g} Hz: "
              f"{sigma * 1e15:.3f} fs")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ddssim", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a pulse program to its binary encoding")
    p.add_argument("source")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="run a manifest and emit trace CSVs")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--window", default=None, help="waveform dump window, e.g. 0ns..4us")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="spectrum / jitter analysis of a trace or PSD CSV")
    p.add_argument("input")
    p.add_argument("--psd", action="store_true", help="emit the estimated PSD as CSV")
    p.add_argument("--jitter", default=None, metavar="F_LO:F_HI")
    p.add_argument("--normalize-to", default=None, metavar="F")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_analyze)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
