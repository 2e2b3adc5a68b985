"""Single-trace analysis of doubling versus addition sub-traces.

The separation scan looks for sample indices where the doubling and addition
sets do not overlap at all. At window ``w`` the doubling set is taken at index
``i`` only, while the addition set may use any index ``j`` of the window
``[i - (w-1)//2, i + w//2]``::

    AdditionAbove:  max_j min_a(j) - max_d(i) > 0
    DoublingAbove:  min_d(i) - min_j max_a(j) > 0

A wider window can only add hits. The duration attack classifies the first
block of every operation by its length and walks the flat block list.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .leakage import LeakageConfig, _split_shape
from .scalarmul import ADDITION, DOUBLING, scalar_from_kinds
from .tracekit import EmptySetError, Segmentation, SubTrace

ADDITION_ABOVE = "AdditionAbove"
DOUBLING_ABOVE = "DoublingAbove"
THRESHOLDS = (0.002, 0.003, 0.004)
BUCKET_LABELS = ("v<=0.002", "0.002<v<=0.003", "0.003<v<=0.004", "v>0.004")
MAX_WINDOW = 6


class WindowOutOfRangeError(ValueError):
    pass


class BlockTooShortError(ValueError):
    pass


class WalkDesyncError(RuntimeError):
    pass


@dataclass(frozen=True)
class SeparationHit:
    index: int
    direction: str
    gap: float
    window: int


def window_bounds(w: int) -> tuple:
    """Offsets ``(left, right)`` of a ``w``-wide window around its centre sample."""
    return (w - 1) // 2, w // 2


def _stack(subtraces: Sequence[SubTrace], lo: int, hi: int) -> np.ndarray:
    return np.stack([np.asarray(s.samples[lo:hi], dtype=np.float64) for s in subtraces])


def _envelopes(d_set, a_set, lo, hi):
    d = _stack(d_set, lo, hi)
    a = _stack(a_set, lo, hi)
    return d.max(0), d.min(0), a.min(0), a.max(0)


def _slide(x: np.ndarray, left: int, right: int, fn) -> np.ndarray:
    """``fn`` over ``x[i-left : i+right+1]`` clipped at the array ends."""
    out = x.copy()
    n = len(x)
    for k in range(1, left + 1):
        out[k:] = fn(out[k:], x[:n - k])
    for k in range(1, right + 1):
        out[:n - k] = fn(out[:n - k], x[k:])
    return out


def _validate(d_set, a_set, window, max_window):
    if not d_set or not a_set:
        raise EmptySetError("both sub-trace sets must be non-empty")
    if not 1 <= window <= max_window:
        raise WindowOutOfRangeError(f"window must lie in [1, {max_window}]")


def separation_scan(d_set: Sequence[SubTrace], a_set: Sequence[SubTrace], window: int = 1,
                    index_range: Optional[tuple] = None, max_window: int = MAX_WINDOW) -> list:
    """Indices in ``index_range`` where the two sets are completely separated.

    Only strict separations count; when both directions hold at one index
    the larger gap is reported.
    """
    return separation_scan_windows(d_set, a_set, [window], index_range, max_window)[window]


def separation_scan_windows(d_set, a_set, windows: Iterable[int] = range(1, MAX_WINDOW + 1),
                            index_range: Optional[tuple] = None, max_window: int = MAX_WINDOW) -> dict:
    """Scan several window widths at once, sharing the per-index set extrema."""
    windows = list(windows)
    for w in windows:
        _validate(d_set, a_set, w, max_window)
    n = min(min(len(s) for s in d_set), min(len(s) for s in a_set))
    start, end = index_range if index_range is not None else (0, n)
    if not 0 <= start <= end <= n:
        raise ValueError("index range exceeds the sub-traces")
    pad = max_window
    lo, hi = max(0, start - pad), min(n, end + pad)
    max_d, min_d, min_a, max_a = _envelopes(d_set, a_set, lo, hi)
    core = slice(start - lo, end - lo)
    out = {}
    for w in windows:
        left, right = window_bounds(w)
        up = (_slide(min_a, left, right, np.maximum) - max_d)[core]
        down = (min_d - _slide(max_a, left, right, np.minimum))[core]
        hits = []
        idx = np.flatnonzero((up > 0) | (down > 0))
        for k in idx.tolist():
            if up[k] >= down[k]:
                hits.append(SeparationHit(start + k, ADDITION_ABOVE, float(up[k]), w))
            else:
                hits.append(SeparationHit(start + k, DOUBLING_ABOVE, float(down[k]), w))
        out[w] = hits
    return out


def bucket_histogram(hits: Iterable[SeparationHit], thresholds: Sequence[float] = THRESHOLDS,
                     windows: Iterable[int] = range(1, MAX_WINDOW + 1)) -> dict:
    """Count hits per window in the buckets ``v<=t0``, ``t0<v<=t1``, ..., ``v>t_last``."""
    table = {w: [0] * (len(thresholds) + 1) for w in windows}
    th = np.asarray(thresholds)
    for h in hits:
        row = table.setdefault(h.window, [0] * (len(thresholds) + 1))
        row[int(np.searchsorted(th, h.gap, side="left"))] += 1
    return table


def streak_histogram(hits: Iterable[SeparationHit]) -> dict:
    """Maximal runs of consecutive hit indices: ``{window: Counter({run_length: count})}``."""
    by_window: dict = {}
    for h in hits:
        by_window.setdefault(h.window, set()).add(h.index)
    out = {}
    for w, idx in sorted(by_window.items()):
        runs = Counter()
        if idx:
            xs = sorted(idx)
            length = 1
            for a, b in zip(xs, xs[1:]):
                if b == a + 1:
                    length += 1
                else:
                    runs[length] += 1
                    length = 1
            runs[length] += 1
        out[w] = runs
    return out


def streak_runs(hits: Iterable[SeparationHit], window: int) -> list:
    """The runs themselves as ``(first index, length)``."""
    xs = sorted({h.index for h in hits if h.window == window})
    runs = []
    for x in xs:
        if runs and runs[-1][0] + runs[-1][1] == x:
            runs[-1][1] += 1
        else:
            runs.append([x, 1])
    return [tuple(r) for r in runs]


# -- Δ1 annotation -----------------------------------------------------------

def annotate_block_operations(block: Union[SubTrace, int], cfg: Optional[LeakageConfig] = None,
                              shape: str = "XX'NAXX'NAA") -> list:
    """Tile a block with its opcode intervals from the nominal cycle counts.

    Intervals are relative to the block start. The block must be at least as
    long as the nominal block; any excess (a lengthened last opcode, say) is
    left unannotated.
    """
    cfg = cfg or LeakageConfig()
    spc = cfg.samples_per_cycle
    length = block if isinstance(block, int) else len(block)
    ops = _split_shape(shape)
    need = sum(cfg.cycles(op) for op in ops) * spc
    if length < need:
        raise BlockTooShortError(f"block has {length} samples, the pattern needs {need}")
    out, pos = [], 0
    for op in ops:
        n = cfg.cycles(op) * spc
        out.append((op, pos, pos + n))
        pos += n
    return out


# -- duration attack ---------------------------------------------------------

@dataclass
class AttackResult:
    bits: str
    decisions: list = field(default_factory=list)  # (block index, Δ1 samples, kind)
    success: Optional[bool] = None
    desync: bool = False
    t_ref_pd: float = 0.0
    message: str = ""


def _walk(durations: list, t_ref: float, tol: float):
    decisions, i = [], 0
    n = len(durations)
    while i < n:
        t = durations[i]
        kind = DOUBLING if abs(t - t_ref) <= tol else ADDITION
        step = 4 if kind == DOUBLING else 6
        decisions.append((i, t, kind))
        if i + step > n:
            return decisions, True
        i += step
    return decisions, False


def duration_attack(seg: Union[Segmentation, Sequence[tuple]], t_ref_pd: Optional[float] = None,
                    tolerance: float = 1000, truth_bits: Optional[str] = None,
                    strict: bool = False) -> AttackResult:
    """Recover the scalar from the lengths of the first blocks of the operations.

    ``seg`` only contributes its flat block list; the operation grouping is not
    used. ``tolerance`` and ``t_ref_pd`` are in samples. Without ``t_ref_pd`` the
    reference is calibrated in two passes: the first block (always a doubling)
    seeds a walk, then the median Δ1 of the next three doublings found replaces it.
    A walk that runs past the last block mid-operation is reported as a desync
    (raised as :class:`WalkDesyncError` when ``strict``).
    """
    blocks = seg.flat_blocks() if isinstance(seg, Segmentation) else list(seg)
    durations = [e - s for s, e in blocks]
    if not durations:
        return AttackResult("1", [], None if truth_bits is None else truth_bits == "1", False, 0.0)
    if t_ref_pd is None:
        t_ref = float(durations[0])
        decisions, _ = _walk(durations, t_ref, tolerance)
        later = [t for _, t, k in decisions[1:] if k == DOUBLING][:3]
        if later:
            t_ref = float(np.median(later))
    else:
        t_ref = float(t_ref_pd)
    decisions, desync = _walk(durations, t_ref, tolerance)
    kinds = [k for _, _, k in decisions]
    message = ""
    try:
        bits = scalar_from_kinds(kinds).binary()
    except ValueError as exc:
        bits, message = "1", str(exc)
    if desync:
        message = "walk desync: block pointer ran past the end mid-operation"
        if strict:
            raise WalkDesyncError(message)
    ok = None
    if truth_bits is not None:
        ok = not desync and not message and bits == truth_bits
    return AttackResult(bits, decisions, ok, desync, t_ref, message)


# -- reports -----------------------------------------------------------------

def buckets_csv(hist: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window", *BUCKET_LABELS])
    for win in range(1, MAX_WINDOW + 1):
        w.writerow([win, *hist.get(win, [0, 0, 0, 0])])
    return buf.getvalue()


def streaks_csv(streaks: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window", "s=2", "s>2"])
    for win in range(1, MAX_WINDOW + 1):
        runs = streaks.get(win, Counter())
        w.writerow([win, runs.get(2, 0), sum(c for s, c in runs.items() if s > 2)])
    return buf.getvalue()


def hits_csv(hits: Iterable[SeparationHit]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window", "index", "direction", "gap"])
    for h in hits:
        w.writerow([h.window, h.index, h.direction, f"{h.gap:.9f}"])
    return buf.getvalue()


def read_hits_csv(text: str) -> list:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [SeparationHit(int(r["index"]), r["direction"], float(r["gap"]), int(r["window"])) for r in rows]


def _binned(x: np.ndarray, bins: int, fn) -> np.ndarray:
    if len(x) <= bins:
        return x
    edges = np.linspace(0, len(x), bins + 1).astype(int)
    return np.array([fn(x[a:b]) for a, b in zip(edges[:-1], edges[1:])])


def envelope_svg(d_set: Sequence[SubTrace], a_set: Sequence[SubTrace], index_range: Optional[tuple] = None,
                 hits: Sequence[SeparationHit] = (), title: str = "min/max envelopes",
                 width: int = 900, height: int = 360, bins: int = 1500) -> str:
    """Standalone SVG of the min/max envelopes of both sets, hits marked in red.

    Long ranges are reduced to ``bins`` columns (min of minima, max of maxima)
    so the envelope is preserved. Output is fully determined by the inputs.
    """
    n = min(len(s) for s in list(d_set) + list(a_set))
    start, end = index_range if index_range is not None else (0, n)
    max_d, min_d, min_a, max_a = _envelopes(d_set, a_set, start, end)
    curves = {
        "dmax": _binned(max_d, bins, np.max), "dmin": _binned(min_d, bins, np.min),
        "amax": _binned(max_a, bins, np.max), "amin": _binned(min_a, bins, np.min),
    }
    lo = min(float(c.min()) for c in curves.values())
    hi = max(float(c.max()) for c in curves.values())
    if hi <= lo:
        hi = lo + 1e-9
    m = 40

    def px(k, count):
        return m + (width - 2 * m) * (k / max(1, count - 1))

    def py(v):
        return height - m - (height - 2 * m) * (v - lo) / (hi - lo)

    def poly(c, colour):
        pts = " ".join(f"{px(k, len(c)):.2f},{py(float(v)):.2f}" for k, v in enumerate(c))
        return f'<polyline fill="none" stroke="{colour}" stroke-width="0.8" points="{pts}"/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{m}" y="20" font-family="sans-serif" font-size="13">{title}</text>',
        f'<text x="{m}" y="{height - 10}" font-family="sans-serif" font-size="11">samples {start}..{end}</text>',
        poly(curves["dmax"], "#1f4e9e"), poly(curves["dmin"], "#1f4e9e"),
        poly(curves["amax"], "#d9822b"), poly(curves["amin"], "#d9822b"),
    ]
    span = max(1, end - start)
    for h in hits:
        if start <= h.index < end:
            x = m + (width - 2 * m) * (h.index - start) / span
            parts.append(f'<line x1="{x:.2f}" y1="{m}" x2="{x:.2f}" y2="{height - m}" '
                         f'stroke="red" stroke-width="0.6"/>')
    parts.append(f'<text x="{width - 260}" y="20" font-family="sans-serif" font-size="11">'
                 f'blue: doublings, orange: additions</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_reports(out_dir: Union[str, Path], hits: Sequence[SeparationHit], d_set=None, a_set=None,
                  index_range: Optional[tuple] = None) -> list:
    """Write the bucket and streak CSVs plus envelope SVGs; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    p = out / "buckets.csv"
    p.write_text(buckets_csv(bucket_histogram(hits)))
    paths.append(p)
    p = out / "streaks.csv"
    p.write_text(streaks_csv(streak_histogram(hits)))
    paths.append(p)
    if d_set and a_set:
        p = out / "envelope.svg"
        p.write_text(envelope_svg(d_set, a_set, index_range, hits))
        paths.append(p)
        # one zoomed plot around the longest streak, if any
        best = None
        for w in range(1, MAX_WINDOW + 1):
            for first, length in streak_runs(hits, w):
                if best is None or length > best[1]:
                    best = (first, length, w)
        if best is not None:
            n = min(len(s) for s in list(d_set) + list(a_set))
            a, b = max(0, best[0] - 20), min(n, best[0] + best[1] + 20)
            p = out / "envelope_streak.svg"
            p.write_text(envelope_svg(d_set, a_set, (a, b), [h for h in hits if h.window == best[2]],
                                      title=f"longest streak, window {best[2]}"))
            paths.append(p)
    return paths
