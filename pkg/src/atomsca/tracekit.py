"""Attacker-side trace processing: trough segmentation and sub-trace alignment.

Shift convention: a sub-trace shifted by ``s`` satisfies
``aligned[n] == original[n - s]``. A target that lags the reference by +7
samples therefore comes back with ``applied_shift == -7``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .leakage import Trace

DOUBLING, ADDITION = "Doubling", "Addition"
KIND_BY_BLOCKS = {4: DOUBLING, 6: ADDITION}


class NoTroughsError(ValueError):
    pass


class AmbiguousBlockCountError(ValueError):
    pass


class AnchorOutOfBoundsError(ValueError):
    pass


class NoRisingSegmentsError(ValueError):
    pass


class EmptySetError(ValueError):
    pass


@dataclass
class SubTrace:
    samples: np.ndarray
    origin_offset: int = 0
    applied_shift: int = 0
    label: Optional[str] = None
    source: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self):
        return len(self.samples)

    @classmethod
    def cut(cls, parent: np.ndarray, start: int, length: int, label: Optional[str] = None) -> "SubTrace":
        if start < 0 or start + length > len(parent):
            raise ValueError("sub-trace extends past its parent")
        return cls(parent[start:start + length], start, 0, label, parent)

    def shifted(self, s: int) -> "SubTrace":
        """Return a copy with ``aligned[n] = self[n - s]``.

        When the parent array is known the window is re-cut from it, so no
        padding is involved; otherwise edge values fill the vacated samples.
        """
        n = len(self.samples)
        start = self.origin_offset - s
        if self.source is not None and 0 <= start and start + n <= len(self.source):
            data = self.source[start:start + n]
        else:
            data = np.empty_like(self.samples)
            if s >= 0:
                data[s:] = self.samples[:n - s] if s < n else self.samples[:0]
                data[:min(s, n)] = self.samples[0]
            else:
                data[:n + s] = self.samples[-s:]
                data[max(n + s, 0):] = self.samples[-1]
        return SubTrace(data, start, self.applied_shift + s, self.label, self.source)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "amplitude"])
        for i, v in enumerate(self.samples):
            w.writerow([self.origin_offset + i, repr(float(v))])
        return buf.getvalue()


# -- segmentation ------------------------------------------------------------

@dataclass
class OperationSegment:
    kind: str
    ordinal: int
    blocks: list  # [(start, end)] in parent-trace samples, half-open

    @property
    def start(self) -> int:
        return self.blocks[0][0]

    @property
    def end(self) -> int:
        return self.blocks[-1][1]


@dataclass
class Segmentation:
    operations: list
    samples: np.ndarray = field(repr=False)
    samples_per_cycle: int = 1
    shifts: dict = field(default_factory=dict)  # label -> applied shift

    def kinds(self) -> list:
        return [op.kind for op in self.operations]

    def flat_blocks(self) -> list:
        """Every atomic block in trace order as ``(start, end)``, ignoring the grouping."""
        return [b for op in self.operations for b in op.blocks]

    def block(self, op_index: int, block_index: int = 0, length: Optional[int] = None) -> SubTrace:
        op = self.operations[op_index]
        s, e = op.blocks[block_index]
        label = f"{op.kind} {op.ordinal} Δ{block_index + 1}"
        return SubTrace.cut(self.samples, s, (e - s) if length is None else length, label)

    def delta1_set(self, kind: str, length: Optional[int] = None, exclude: Sequence[str] = ()) -> list:
        out = []
        for i, op in enumerate(self.operations):
            if op.kind == kind and f"{op.kind} {op.ordinal}" not in exclude:
                out.append(self.block(i, 0, length))
        return out

    def to_json(self) -> str:
        ops = [{"kind": op.kind, "ordinal": op.ordinal, "blocks": [list(b) for b in op.blocks]}
               for op in self.operations]
        return json.dumps({"samples_per_cycle": self.samples_per_cycle, "operations": ops,
                           "shifts": self.shifts}, indent=1)

    @classmethod
    def from_json(cls, text: str, samples: np.ndarray) -> "Segmentation":
        d = json.loads(text)
        ops = [OperationSegment(o["kind"], o["ordinal"], [tuple(b) for b in o["blocks"]])
               for o in d["operations"]]
        return cls(ops, samples, d["samples_per_cycle"], d.get("shifts", {}))


def _runs(mask: np.ndarray):
    """Half-open ``(start, end)`` runs where ``mask`` is true."""
    m = np.concatenate(([False], mask, [False])).astype(np.int8)
    d = np.diff(m)
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


def _split_lengths(lengths: list) -> float:
    """Cut between short (intra-operation) and long (inter-operation) troughs.

    The cut sits at the largest ratio between consecutive sorted lengths when
    that ratio exceeds 1.5; otherwise every trough counts as short.
    """
    u = sorted(set(lengths))
    if len(u) < 2:
        return float("inf")
    ratios = [(u[i + 1] / u[i], i) for i in range(len(u) - 1)]
    r, i = max(ratios)
    return float("inf") if r <= 1.5 else (u[i] * u[i + 1]) ** 0.5


def segment_trace(t: Trace, trough_level: Optional[float] = None,
                  min_trough_samples: Optional[int] = None) -> Segmentation:
    """Split a marker-rich trace into atomic blocks and group them into operations.

    A trough is a run of at least ``min_trough_samples`` where the moving
    average (width one clock period) stays below ``trough_level``. Edges are
    then placed on the raw samples so boundaries are exact on clean traces.
    """
    x = np.asarray(t.samples)
    spc = max(1, t.samples_per_cycle)
    if min_trough_samples is None:
        min_trough_samples = 1000 * spc
    if len(x) == 0:
        return Segmentation([], t.samples, spc)
    ma = np.convolve(x, np.full(spc, 1.0 / spc, dtype=x.dtype), mode="same") if spc > 1 else x
    # level estimates use a strided subsample to stay cheap on long traces
    stride = max(1, len(x) // 2_000_000)
    if trough_level is None:
        lo, hi = np.percentile(ma[::stride], [1, 99])
        if hi <= lo:  # no contrast, nothing ran
            return Segmentation([], t.samples, spc)
        trough_level = 0.5 * (lo + hi)
    troughs = [(s, e) for s, e in _runs(ma < trough_level) if e - s >= min_trough_samples]
    active = _runs(ma >= trough_level)
    if not active:
        return Segmentation([], t.samples, spc)
    if not troughs:
        raise NoTroughsError("no NOP troughs found; cannot separate atomic blocks")

    # raw-sample threshold halfway between the trough and active populations
    in_trough = np.zeros(len(x), bool)
    for s, e in troughs:
        in_trough[s:e] = True
    xs, ts = x[::stride], in_trough[::stride]
    raw_level = 0.5 * (np.median(xs[ts]) + np.median(xs[~ts])) if ts.any() and (~ts).any() else trough_level
    hot = x > raw_level

    def refine_start(s):
        # one past the last active sample near the smoothed edge
        lo, hi = max(0, s - spc), min(len(x), s + spc + 1)
        idx = np.flatnonzero(hot[lo:hi])
        return lo + int(idx[-1]) + 1 if idx.size else s

    def refine_end(e):
        lo, hi = max(0, e - spc), min(len(x), e + spc + 1)
        idx = np.flatnonzero(hot[lo:hi])
        return lo + int(idx[0]) if idx.size else e

    troughs = [(refine_start(s) if s > 0 else 0, refine_end(e) if e < len(x) else len(x))
               for s, e in troughs]

    # blocks are the active stretches between troughs
    edges = [0] + [v for tr in troughs for v in tr] + [len(x)]
    blocks, gaps = [], []
    for i in range(0, len(edges), 2):
        s, e = edges[i], edges[i + 1]
        if e > s:
            blocks.append((s, e))
            nxt = i + 2
            gaps.append(edges[nxt] - edges[nxt - 1] if nxt < len(edges) - 1 else None)
    cut = _split_lengths([g for g in gaps if g is not None])

    groups, cur_group = [], []
    for blk, g in zip(blocks, gaps):
        cur_group.append(blk)
        if g is None or g > cut:
            groups.append(cur_group)
            cur_group = []

    ops, counts = [], {DOUBLING: 0, ADDITION: 0}
    for g in groups:
        kind = KIND_BY_BLOCKS.get(len(g))
        if kind is None:
            raise AmbiguousBlockCountError(f"operation at sample {g[0][0]} has {len(g)} blocks")
        counts[kind] += 1
        ops.append(OperationSegment(kind, counts[kind], [(int(s), int(e)) for s, e in g]))
    return Segmentation(ops, t.samples, spc)


# -- synchronisation ---------------------------------------------------------

def _check_anchor(reference: SubTrace, target: SubTrace, start: int, length: int, max_shift: int) -> None:
    if length < 1 or max_shift < 0:
        raise AnchorOutOfBoundsError("anchor length must be positive and max_shift non-negative")
    if start < 0 or start + length > len(reference):
        raise AnchorOutOfBoundsError("anchor window exceeds the reference")
    if start - max_shift < 0 or start + length + max_shift > len(target):
        raise AnchorOutOfBoundsError("anchor window plus shift range exceeds the target")


def _windows(reference, target, start, length, max_shift):
    ref = np.asarray(reference.samples[start:start + length], dtype=np.float64)
    lo = start - max_shift
    ext = np.asarray(target.samples[lo:start + length + max_shift], dtype=np.float64)
    # target window for shift s is ext[max_shift - s : max_shift - s + length]
    return ref, ext


def _sse(ref, ext, s, max_shift):
    a = max_shift - s
    d = ref - ext[a:a + len(ref)]
    return float(d @ d)


def _best(shifts, key):
    return min(shifts, key=key)


def _extrema(x: np.ndarray):
    """Strict 3-point maxima and minima, kept only when they sit in the outer quintiles."""
    mid = x[1:-1]
    is_max = np.zeros(len(x), bool)
    is_min = np.zeros(len(x), bool)
    is_max[1:-1] = (mid > x[:-2]) & (mid > x[2:])
    is_min[1:-1] = (mid < x[:-2]) & (mid < x[2:])
    if len(x) >= 5:
        hi, lo = np.percentile(x, [80, 20])
        is_max &= x > hi
        is_min &= x < lo
    return is_max, is_min


def sync_extrema(reference: SubTrace, target: SubTrace, anchor_start: int = 198_000,
                 anchor_len: int = 4_000, max_shift: int = 200) -> SubTrace:
    """Method A: line up salient local maxima and minima.

    A shift scores one point per reference extremum that meets a target
    extremum of the same type within one sample. Exact coincidences break
    ties, then the smaller ``|shift|``, then the squared error.
    """
    _check_anchor(reference, target, anchor_start, anchor_len, max_shift)
    ref, ext = _windows(reference, target, anchor_start, anchor_len, max_shift)
    rmax, rmin = _extrema(ref)
    tmax, tmin = _extrema(ext)
    pmax, pmin = np.flatnonzero(rmax), np.flatnonzero(rmin)
    if pmax.size + pmin.size == 0:
        raise NoRisingSegmentsError("no salient extrema in the reference anchor")

    def dilate(m):
        d = m.copy()
        d[1:] |= m[:-1]
        d[:-1] |= m[1:]
        return d

    dmax, dmin = dilate(tmax), dilate(tmin)
    best, best_key = 0, None
    for s in range(-max_shift, max_shift + 1):
        a = max_shift - s
        near = int(dmax[pmax + a].sum() + dmin[pmin + a].sum())
        exact = int(tmax[pmax + a].sum() + tmin[pmin + a].sum())
        key = (-near, -exact, abs(s))
        if best_key is None or key < best_key:
            best, best_key = s, key
        elif key == best_key and _sse(ref, ext, s, max_shift) < _sse(ref, ext, best, max_shift):
            best = s
    return target.shifted(best)


def _rising_mask(x: np.ndarray, min_run: int) -> np.ndarray:
    up = np.zeros(len(x), bool)
    up[1:] = x[1:] > x[:-1]
    mask = np.zeros(len(x), bool)
    for s, e in _runs(up):
        # a run of k increases covers k + 1 samples starting one before it
        if e - s + 1 >= min_run:
            mask[s - 1:e] = True
    return mask


def sync_rising(reference: SubTrace, target: SubTrace, anchor_start: int = 198_000,
                anchor_len: int = 4_000, max_shift: int = 200, min_run: int = 5,
                smooth: int = 10) -> SubTrace:
    """Method B: line up the rising stretches of both traces.

    Both anchors are first smoothed with a ``smooth``-sample moving average,
    which flattens the per-cycle ripple so that the rises left over are the
    cycle-to-cycle level changes. Strictly increasing runs covering at least
    ``min_run`` samples are kept; the shift maximises the overlap of the two
    rising-sample index sets.
    """
    _check_anchor(reference, target, anchor_start, anchor_len, max_shift)
    ref, ext = _windows(reference, target, anchor_start, anchor_len, max_shift)
    if smooth > 1:
        k = np.full(smooth, 1.0 / smooth)
        ref, ext = np.convolve(ref, k, mode="same"), np.convolve(ext, k, mode="same")
    rm = _rising_mask(ref, min_run)
    tm = _rising_mask(ext, min_run)
    if not rm.any() or not tm.any():
        raise NoRisingSegmentsError("anchor window has no rising segments")
    pos = np.flatnonzero(rm)
    best, best_key = 0, None
    for s in range(-max_shift, max_shift + 1):
        a = max_shift - s
        key = (-int(tm[pos + a].sum()), abs(s))
        if best_key is None or key < best_key:
            best, best_key = s, key
    return target.shifted(best)


def sync_clock_minima(reference: SubTrace, target: SubTrace, anchor_start: int = 198_000,
                      anchor_len: int = 4_000, clock_period_samples: int = 10,
                      max_shift: int = 200) -> SubTrace:
    """Method C: compare the reference's per-period minima against the target.

    The grid phase is where the reference anchor, folded onto one clock
    period, is lowest on average; the grid then steps by one period. A shift
    costs the summed absolute difference between the reference on the grid
    and the target on the grid moved back by the shift.
    """
    if clock_period_samples < 2:
        raise ValueError("clock_period_samples must be at least 2")
    _check_anchor(reference, target, anchor_start, anchor_len, max_shift)
    ref, ext = _windows(reference, target, anchor_start, anchor_len, max_shift)
    P = clock_period_samples
    whole = (len(ref) // P) * P
    if whole == 0:
        raise AnchorOutOfBoundsError("anchor is shorter than one clock period")
    r0 = int(np.argmin(ref[:whole].reshape(-1, P).mean(axis=0)))
    grid = np.arange(r0, len(ref), P)
    best, best_key = 0, None
    for s in range(-max_shift, max_shift + 1):
        a = max_shift - s
        cost = float(np.abs(ref[grid] - ext[grid + a]).sum())
        key = (cost, abs(s))
        if best_key is None or key < best_key:
            best, best_key = s, key
    return target.shifted(best)


SYNC_METHODS = {"A": sync_extrema, "B": sync_rising, "C": sync_clock_minima}


def synchronize(reference: SubTrace, targets: list, method: str = "A", **kw) -> list:
    fn = SYNC_METHODS[method.upper()]
    return [fn(reference, t, **kw) for t in targets]


def mean_trace(subtraces: list, length: Optional[int] = None) -> SubTrace:
    if not subtraces:
        raise EmptySetError("cannot average an empty set")
    n = min(len(s) for s in subtraces) if length is None else length
    if any(len(s) < n for s in subtraces):
        raise ValueError("a member is shorter than the requested length")
    acc = np.zeros(n)
    for s in subtraces:
        acc += np.asarray(s.samples[:n], dtype=np.float64)
    return SubTrace(acc / len(subtraces), 0, 0, "mean")


def _rms(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean((x - x.mean()) ** 2)))


def sync_quality(subtraces: list, window: Optional[tuple] = None) -> float:
    """RMS of the DC-free mean trace; desynchronised sets average towards flat."""
    m = mean_trace(subtraces).samples
    if window is not None:
        m = m[window[0]:window[1]]
    return _rms(m)
