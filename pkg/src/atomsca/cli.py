"""Command-line front end: ``atomsca <command> [options]``.

Commands and the files they exchange::

    kp        scalar (+ point)            -> affine kP on stdout
    simulate  scalar + leakage config     -> trace.atrc (+ trace.atrc.truth.json)
    segment   trace.atrc                  -> segments.json
    sync      trace.atrc + segments.json  -> segments.json with per-operation shifts
    scan      trace.atrc + segments.json  -> hits.csv
    attack    trace.atrc (+ segments)     -> attack.json, key and SUCCESS/FAILURE on stdout
    report    hits.csv (+ trace, segs)    -> buckets.csv, streaks.csv, *.svg

Output files land in ``$ATOMSCA_OUT`` when set, otherwise in ``./atomsca-out``.
Leakage settings come from a flat ``key = value`` file (``--config``) and can
be overridden one by one with ``--set key=value``. Nested dictionary fields use
dotted keys, e.g. ``delta1_cycle_offset.Addition = 500``.

Report CSV headers:
  buckets.csv  window,v<=0.002,0.002<v<=0.003,0.003<v<=0.004,v>0.004
  streaks.csv  window,s=2,s>2
  hits.csv     window,index,direction,gap
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from . import leakage as lk
from . import ssca
from . import tracekit as tk
from .fieldarith import FieldParams
from .scalarmul import (ADDITION, DOUBLING, AffinePoint, InvalidScalarError, KPEventLog,
                        PointAtInfinityError, PointNotOnCurveError, Scalar, jacobian_to_affine,
                        kp_atomic, kp_reference)

DEFAULT_SCALAR = "0b1001101101011111110111"
DEFAULT_SEED = lk.DEFAULT_SEED
# the CLI simulates at one sample per clock unless told otherwise; ten samples
# per clock for the 22-bit default scalar is a 780 MB file
CLI_SAMPLES_PER_CYCLE = 1


class CliError(Exception):
    pass


def out_dir() -> Path:
    return Path(os.environ.get("ATOMSCA_OUT", "atomsca-out"))


def _default(path, name: str) -> Path:
    return Path(path) if path else out_dir() / name


def _prepare(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# -- config ------------------------------------------------------------------

_CONFIG_FIELDS = {f.name: f for f in fields(lk.LeakageConfig)}


def _coerce(text: str):
    low = text.strip().lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip()


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError(f"config line {lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def build_config(settings: dict) -> lk.LeakageConfig:
    kw: dict = {}
    for key, value in settings.items():
        base, _, sub = key.partition(".")
        if base not in _CONFIG_FIELDS:
            raise CliError(f"unknown config key {key!r}")
        v = _coerce(value) if isinstance(value, str) else value
        if sub:
            kw.setdefault(base, {})[sub] = v
        elif base == "amplitude_window" and v is not None:
            kw[base] = tuple(v)
        else:
            kw[base] = v
    try:
        return lk.LeakageConfig(**kw)
    except (TypeError, lk.ConfigError) as exc:
        raise CliError(f"bad leakage config: {exc}") from None


def _settings(args) -> dict:
    s = {"samples_per_cycle": str(CLI_SAMPLES_PER_CYCLE), "rng_seed": str(DEFAULT_SEED)}
    if getattr(args, "config", None):
        s.update(parse_config_text(Path(args.config).read_text()))
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {item!r}")
        s[key.strip()] = value.strip()
    return s


# -- helpers -----------------------------------------------------------------

def _scalar(text: str) -> Scalar:
    try:
        return Scalar.parse(text)
    except InvalidScalarError as exc:
        raise CliError(str(exc)) from None


def _point(text, params) -> AffinePoint:
    if text is None:
        return AffinePoint.generator(params)
    try:
        return AffinePoint.from_hex(text)
    except ValueError as exc:
        raise CliError(f"bad point: {exc}") from None


def _load_trace(path) -> lk.Trace:
    p = Path(path)
    if not p.exists():
        raise CliError(f"trace file not found: {p}")
    return lk.read_trace(p)


def _load_segmentation(path, trace: lk.Trace) -> tk.Segmentation:
    p = Path(path)
    if not p.exists():
        raise CliError(f"segmentation file not found: {p} (run `atomsca segment` first)")
    return tk.Segmentation.from_json(p.read_text(), trace.samples)


def _delta1_sets(seg: tk.Segmentation, length=None, shifted: bool = True):
    """Δ1 sub-traces of both kinds; Doubling 1 is left out, as it starts from the input point."""
    d = seg.delta1_set(DOUBLING, exclude=("Doubling 1",))
    a = seg.delta1_set(ADDITION)
    if not d or not a:
        raise CliError("need at least one doubling (besides the first) and one addition")
    n = length or min(len(s) for s in d + a)
    d = [tk.SubTrace.cut(seg.samples, s.origin_offset, n, s.label) for s in d]
    a = [tk.SubTrace.cut(seg.samples, s.origin_offset, n, s.label) for s in a]
    if shifted and seg.shifts:
        d = [s.shifted(seg.shifts.get(s.label, 0)) for s in d]
        a = [s.shifted(seg.shifts.get(s.label, 0)) for s in a]
    return d, a


def _parse_range(text):
    if text is None:
        return None
    a, sep, b = text.partition(":")
    if not sep:
        raise CliError("--range expects START:END")
    return int(a), int(b)


def _windows(text: str) -> list:
    out = []
    for part in text.split(","):
        a, sep, b = part.partition("-")
        out.extend(range(int(a), int(b) + 1) if sep else [int(a)])
    return out


# -- commands ----------------------------------------------------------------

def cmd_kp(args) -> int:
    params = FieldParams.p256(args.word_bits)
    k = _scalar(args.scalar)
    P = _point(args.point, params)
    log = KPEventLog()
    try:
        Q = kp_atomic(k, P, params, log, patterns=args.patterns, markers=not args.no_markers)
        R = jacobian_to_affine(Q, params)
    except (InvalidScalarError, PointNotOnCurveError) as exc:
        raise CliError(str(exc)) from None
    except PointAtInfinityError:
        R = None
    if R is None:
        print("result: point at infinity")
    else:
        print(f"x = {R.x:064x}")
        print(f"y = {R.y:064x}")
    if args.log:
        kinds = log.kinds()
        print(f"{kinds.count(DOUBLING)} doublings, {kinds.count(ADDITION)} additions")
    if args.events:
        log.write_jsonl(_prepare(Path(args.events)))
    if args.verify:
        ref = kp_reference(k, P, params)
        if ref != R:
            print("oracle mismatch", file=sys.stderr)
            return 1
        print("oracle match")
    return 0


def cmd_simulate(args) -> int:
    params = FieldParams.p256()
    settings = _settings(args)
    if args.seed is not None:
        settings["rng_seed"] = str(args.seed)
    if args.delta1_offset:
        settings[f"delta1_cycle_offset.{ADDITION}"] = str(args.delta1_offset)
    if args.x_jitter:
        settings["x_jitter"] = "true"
    cfg = build_config(settings)
    k = _scalar(args.scalar)
    log = KPEventLog()
    try:
        kp_atomic(k, _point(args.point, params), params, log, markers=not args.no_markers)
    except (InvalidScalarError, PointNotOnCurveError) as exc:
        raise CliError(str(exc)) from None
    trace = lk.simulate_trace(log, cfg)
    path = _prepare(_default(args.out, "trace.atrc"))
    lk.write_trace(trace, path)
    if args.events:
        log.write_jsonl(_prepare(Path(args.events)))
    print(f"wrote {path} ({len(trace)} samples, {cfg.samples_per_cycle} samples/cycle)")
    return 0


def cmd_segment(args) -> int:
    trace = _load_trace(args.input)
    try:
        seg = tk.segment_trace(trace)
    except (tk.NoTroughsError, tk.AmbiguousBlockCountError) as exc:
        raise CliError(f"segmentation failed: {exc}") from None
    path = _prepare(_default(args.out, "segments.json"))
    path.write_text(seg.to_json())
    kinds = seg.kinds()
    print(f"wrote {path}: {len(kinds)} operations, "
          f"{kinds.count(DOUBLING)} doublings, {kinds.count(ADDITION)} additions")
    return 0


def _anchor(length: int, spc: int, start, alen):
    """Anchor defaults are for ten samples per cycle; scale them for other rates."""
    if start is None:
        start = 198_000 * spc // 10
    if alen is None:
        alen = max(4_000 * spc // 10, 400)
    return start, alen


def cmd_sync(args) -> int:
    trace = _load_trace(args.input)
    seg = _load_segmentation(args.segments or out_dir() / "segments.json", trace)
    d, a = _delta1_sets(seg, shifted=False)
    ref, targets = d[0], d[1:] + a
    start, alen = _anchor(len(ref), seg.samples_per_cycle, args.anchor_start, args.anchor_len)
    before = tk.sync_quality(d + a)
    kw = {"anchor_start": start, "anchor_len": alen, "max_shift": args.max_shift}
    spc = seg.samples_per_cycle
    if args.method == "B":
        kw["smooth"] = spc
    elif args.method == "C":
        kw["clock_period_samples"] = spc
    try:
        results = tk.synchronize(ref, targets, args.method, **kw)
    except (tk.AnchorOutOfBoundsError, tk.NoRisingSegmentsError, ValueError) as exc:
        raise CliError(f"sync failed: {exc}") from None
    seg.shifts = {ref.label: 0}
    seg.shifts.update({r.label: int(r.applied_shift) for r in results})
    after = tk.sync_quality([ref] + results)
    path = _prepare(_default(args.out, "segments.json"))
    path.write_text(seg.to_json())
    print(f"wrote {path}: method {args.method}, mean-trace rms {before:.6g} -> {after:.6g}")
    if after < before:
        print("atomsca sync: warning: the shifts lowered the mean-trace rms; the sync methods are "
              "tuned for 10 samples per clock", file=sys.stderr)
    return 0


def cmd_scan(args) -> int:
    trace = _load_trace(args.input)
    seg = _load_segmentation(args.segments or out_dir() / "segments.json", trace)
    d, a = _delta1_sets(seg, args.length)
    windows = _windows(args.window)
    try:
        res = ssca.separation_scan_windows(d, a, windows, _parse_range(args.range))
    except (ssca.WindowOutOfRangeError, ValueError) as exc:
        raise CliError(str(exc)) from None
    hits = [h for w in windows for h in res[w]]
    path = _prepare(_default(args.out, "hits.csv"))
    path.write_text(ssca.hits_csv(hits))
    print(f"wrote {path}: " + ", ".join(f"window {w}: {len(res[w])}" for w in windows))
    return 0


def cmd_attack(args) -> int:
    trace = _load_trace(args.input)
    if args.segments:
        seg = _load_segmentation(args.segments, trace)
    else:
        try:
            seg = tk.segment_trace(trace)
        except (tk.NoTroughsError, tk.AmbiguousBlockCountError) as exc:
            raise CliError(f"segmentation failed: {exc}") from None
    spc = seg.samples_per_cycle
    t_ref = None if args.t_ref is None else args.t_ref * spc
    truth = "".join(map(str, trace.truth.scalar_bits)) if trace.truth is not None else None
    res = ssca.duration_attack(seg, t_ref, args.tolerance * spc, truth)
    path = _prepare(_default(args.out, "attack.json"))
    path.write_text(json.dumps({
        "recovered_bits": res.bits, "t_ref_pd_samples": res.t_ref_pd,
        "tolerance_cycles": args.tolerance, "success": res.success, "desync": res.desync,
        "message": res.message,
        "decisions": [{"block": i, "delta1_samples": t, "kind": k} for i, t, k in res.decisions],
    }, indent=1) + "\n")
    print(f"recovered key: 0b{res.bits}")
    if res.message:
        print(res.message)
    if res.success is not None:
        print("SUCCESS" if res.success else "FAILURE")
    return 0


def cmd_report(args) -> int:
    hp = Path(args.hits) if args.hits else out_dir() / "hits.csv"
    if not hp.exists():
        raise CliError(f"hits file not found: {hp} (run `atomsca scan` first)")
    hits = ssca.read_hits_csv(hp.read_text())
    d = a = None
    if args.trace:
        trace = _load_trace(args.trace)
        seg = _load_segmentation(args.segments or out_dir() / "segments.json", trace)
        d, a = _delta1_sets(seg)
    dest = Path(args.out) if args.out else out_dir() / "report"
    for p in ssca.write_reports(dest, hits, d, a, _parse_range(args.range)):
        print(f"wrote {p}")
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="atomsca", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"atomsca {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kp", help="scalar multiplication with the atomic patterns")
    p.add_argument("--scalar", required=True, help="binary (optionally 0b-prefixed) or 0x-prefixed hex")
    p.add_argument("--point", help="affine point as 128 hex digits, x then y (default: generator)")
    p.add_argument("--patterns", choices=("corrected", "original"), default="corrected")
    p.add_argument("--verify", action="store_true", help="compare with the affine reference")
    p.add_argument("--log", action="store_true", help="print the doubling/addition counts")
    p.add_argument("--events", help="write the event log as JSON lines to this path")
    p.add_argument("--word-bits", type=int, choices=(32, 64), default=64)
    p.add_argument("--no-markers", action="store_true", help="omit the NOP runs")
    p.set_defaults(func=cmd_kp)

    p = sub.add_parser("simulate", help="simulate a leakage trace of one kP run")
    p.add_argument("--scalar", default=DEFAULT_SCALAR)
    p.add_argument("--point")
    p.add_argument("--config", help="flat key = value leakage config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, help=f"noise/jitter seed (default {DEFAULT_SEED})")
    p.add_argument("--delta1-offset", type=int, default=0, metavar="CYCLES",
                   help="extra cycles in the first block of every addition")
    p.add_argument("--x-jitter", action="store_true")
    p.add_argument("--no-markers", action="store_true",
                   help="omit the NOP runs (segmentation will then fail)")
    p.add_argument("--events", help="also write the event log here")
    p.add_argument("--out", help="trace path (default: $ATOMSCA_OUT/trace.atrc)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("segment", help="split a trace into operations and blocks")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", help="default: $ATOMSCA_OUT/segments.json")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("sync", help="align the first blocks of all operations")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--segments", help="default: $ATOMSCA_OUT/segments.json")
    p.add_argument("--method", choices=("A", "B", "C"), default="A")
    p.add_argument("--anchor-start", type=int)
    p.add_argument("--anchor-len", type=int)
    p.add_argument("--max-shift", type=int, default=200)
    p.add_argument("--out", help="default: $ATOMSCA_OUT/segments.json")
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("scan", help="find indices where doublings and additions separate")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--segments", help="default: $ATOMSCA_OUT/segments.json")
    p.add_argument("--window", default="1-6", help="e.g. 1, 1-6 or 2,5")
    p.add_argument("--range", help="START:END within the first block")
    p.add_argument("--length", type=int, help="sub-trace length (default: shortest first block)")
    p.add_argument("--out", help="default: $ATOMSCA_OUT/hits.csv")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("attack", help="recover the scalar from first-block durations")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--segments", help="segmentation to use (default: segment the trace now)")
    p.add_argument("--tolerance", type=float, default=100, metavar="CYCLES")
    p.add_argument("--t-ref", type=float, metavar="CYCLES",
                   help="doubling first-block duration (default: calibrate from the trace)")
    p.add_argument("--out", help="default: $ATOMSCA_OUT/attack.json")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="write the bucket/streak CSVs and envelope SVGs")
    p.add_argument("--hits", help="default: $ATOMSCA_OUT/hits.csv")
    p.add_argument("--trace", help="trace for the envelope plots")
    p.add_argument("--segments")
    p.add_argument("--range", help="START:END for the envelope plot")
    p.add_argument("--out", help="directory (default: $ATOMSCA_OUT/report)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, lk.TraceFormatError) as exc:
        print(f"atomsca {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
