"""End-to-end acceptance checks, one marked group per criterion.

Run with ``pytest tests/test_acceptance.py``; the terminal summary prints one
PASS/FAIL line per criterion.
"""

import random
import time

import numpy as np
import pytest
from conftest import P, check_pattern, oracle_mul

from atomsca import atomicpat as ap
from atomsca import cli
from atomsca import ssca
from atomsca import tracekit as tk
from atomsca.leakage import LeakageConfig, operation_cycles, simulate_trace
from atomsca.scalarmul import (ADDITION, DOUBLING, AffinePoint, KPEventLog, NopRun, Scalar,
                               jacobian_to_affine, kinds_from_scalar, kp_atomic, kp_reference)

KEY = "1001101101011111110111"

REVISED = {
    "mnamnaa_doubling": ("doubling", None),
    "mnamnaa_mixed_add": ("mixed_add", None),
    "mana_mixed_add": ("mixed_add", None),
    "mnamnaa_tripling": ("tripling", None),
    "mana_tripling": ("tripling", None),
    "mnamnaa_special_add": ("special_add", "mnamnaa_mixed_add"),
    "mana_special_add": ("special_add", "mana_mixed_add"),
}


def criterion(n, title):
    return pytest.mark.criterion(n, title)


def _log(k, params, **kw):
    log = KPEventLog()
    kp_atomic(k, AffinePoint.generator(params), params, log, **kw)
    return log


# -- 1 -----------------------------------------------------------------------

@criterion(1, "atomic kP equals the affine reference on 500 scalars below 2^64")
def test_group_law(params, record_property):
    rnd = random.Random(1)
    G = AffinePoint.generator(params)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(500):
        k = rnd.randrange(1, 2**64)
        got = jacobian_to_affine(kp_atomic(k, G, params), params)
        ref = kp_reference(k, G, params)
        bad += got != ref or (ref.x, ref.y) != oracle_mul(k)
    elapsed = time.perf_counter() - t0
    record_property("note", f"{500 - bad}/500 equal in {elapsed:.1f}s")
    assert bad == 0
    assert elapsed < 60


# -- 2 -----------------------------------------------------------------------

@criterion(2, "uncorrected tables disagree with the oracle; each reverted fix breaks it")
@pytest.mark.parametrize("which", ["doubling", "mixed_add"])
def test_uncorrected_tables(which, params, record_property):
    pat = ap.pattern_doubling_original() if which == "doubling" else ap.pattern_mixed_add_original()
    rnd = random.Random(2)
    wrong = sum(not check_pattern(pat, which, params, rnd) for _ in range(100))
    record_property("note", f"{which} original wrong on {wrong}/100")
    assert wrong >= 99


def _corrections():
    pairs = [(ap.pattern_doubling_original(), ap.pattern_doubling_mnamnaa(), "doubling"),
             (ap.pattern_mixed_add_original(), ap.pattern_mixed_add_mnamnaa(), "mixed_add")]
    out = []
    for orig, fixed, role in pairs:
        for b, block in enumerate(fixed.blocks, 1):
            for i, slot in enumerate(block, 1):
                if orig.slot(b, i) != slot:
                    out.append((fixed, b, i, orig.slot(b, i), role))
    return out


@criterion(2, "uncorrected tables disagree with the oracle; each reverted fix breaks it")
@pytest.mark.parametrize("idx", range(4))
def test_reverted_correction(idx, params):
    fixes = _corrections()
    assert len(fixes) == 4
    fixed, b, i, old, role = fixes[idx]
    rnd = random.Random(20 + idx)
    assert check_pattern(fixed, role, params, rnd, trials=5)
    assert not check_pattern(fixed.with_slot(b, i, old), role, params, rnd, trials=5)


# -- 3 -----------------------------------------------------------------------

@criterion(3, "22-bit key gives 21 doublings and 15 additions")
def test_pattern_counts(params):
    log = _log(Scalar.from_binary(KEY), params)
    kinds = log.kinds()
    assert (kinds.count(DOUBLING), kinds.count(ADDITION)) == (21, 15)


# -- 4 -----------------------------------------------------------------------

@criterion(4, "doubling 290,924 and addition 436,386 cycles, within 0.01% of 290,944 / 436,416")
def test_timing_model(params):
    t = simulate_trace(_log(5, params), LeakageConfig(samples_per_cycle=1))
    spans = [sum(e - s for pi, _, s, e in t.truth.blocks if pi == i) for i in range(3)]
    assert spans == [290_924, 290_924, 436_386]
    assert operation_cycles(DOUBLING) == 290_924 and operation_cycles(ADDITION) == 436_386
    assert abs(spans[0] - 290_944) / 290_944 < 1e-4
    assert abs(spans[2] - 436_416) / 436_416 < 1e-4


# -- 5 -----------------------------------------------------------------------

@criterion(5, "seven revised patterns match the oracle on 100 inputs each")
@pytest.mark.parametrize("name", sorted(REVISED))
def test_revised_patterns(name, params):
    role, first = REVISED[name]
    rnd = random.Random(name)
    assert check_pattern(ap._builtin(name), role, params, rnd, trials=100,
                         first=ap._builtin(first) if first else None)


# -- 6 -----------------------------------------------------------------------

@criterion(6, "every block has the XX'NAXX'NAA (MNAMNAA) or XX'ANA (MANA) opcode sequence")
@pytest.mark.parametrize("shape,expected", [("MNAMNAA", "XX'NAXX'NAA"), ("MANA", "XX'ANA")])
def test_block_shapes(shape, expected, params, record_property):
    pats = [ap._builtin(n) for n in sorted(REVISED) if ap._builtin(n).pattern_string == shape]
    rnd = random.Random(shape)
    blocks = bad = 0
    while blocks < 10_000:
        for pat in pats:
            events = []
            coords = {c: rnd.randrange(P) for c in pat.input_binding}
            ap.run_pattern(pat, params, events, **coords)
            for b in range(len(pat)):
                bad += ap.opcode_string(events, b) != expected
                blocks += 1
    record_property("note", f"{shape}: {blocks} blocks, {bad} off-shape")
    assert bad == 0


# -- 7 -----------------------------------------------------------------------

@criterion(7, "segmentation recovers every block boundary and kind on 100 scalars")
def test_segmentation_fidelity(params, record_property):
    rnd = random.Random(7)
    errors = 0
    for i in range(100):
        bits = rnd.randint(2, 24)
        k = rnd.randrange(2 ** (bits - 1), 2 ** bits)
        t = simulate_trace(_log(k, params), LeakageConfig(samples_per_cycle=1, rng_seed=i))
        seg = tk.segment_trace(t)
        truth = [(s, e) for _, _, s, e in t.truth.blocks]
        errors += seg.flat_blocks() != truth or seg.kinds() != kinds_from_scalar(Scalar.from_int(k).bits)
    record_property("note", f"{100 - errors}/100 exact")
    assert errors == 0


# -- 8 -----------------------------------------------------------------------

def _first_block(params):
    """Events of the first Δ1 only: a single block of a doubling."""
    log = _log(2, params)
    events = []
    for e in log.events:
        if isinstance(e, NopRun):
            break
        events.append(e)
    return KPEventLog(events, log.scalar_bits)


@pytest.fixture(scope="module")
def one_block(params):
    return _first_block(params)


@criterion(8, "sync methods A/B/C: exact on noiseless copies, within 1 sample in 95% of noisy pairs")
@pytest.mark.parametrize("method", "ABC")
def test_sync_noiseless(method, one_block):
    t = simulate_trace(one_block, LeakageConfig(noise_sigma=0.0))
    ref = tk.SubTrace.cut(t.samples, 300, 700_000)
    fn = tk.SYNC_METHODS[method]
    wrong = [s for s in range(-200, 201)
             if fn(ref, tk.SubTrace.cut(t.samples, 300 - s, 700_000)).applied_shift != -s]
    assert wrong == []


def _xp_start(t):
    return next(s for op, s, _ in t.truth.ops if op == "X'")


@criterion(8, "sync methods A/B/C: exact on noiseless copies, within 1 sample in 95% of noisy pairs")
@pytest.mark.parametrize("method", "ABC")
def test_sync_noisy(method, one_block, record_property):
    cfg = dict(noise_sigma=0.001, x_jitter=True)
    ref_trace = simulate_trace(one_block, LeakageConfig(rng_seed=1000, **cfg))
    ref = tk.SubTrace.cut(ref_trace.samples, 300, 700_000)
    fn = tk.SYNC_METHODS[method]
    rnd = random.Random(method)
    good = 0
    for trial in range(100):
        tgt_trace = simulate_trace(one_block, LeakageConfig(rng_seed=trial, **cfg))
        s = rnd.randint(-150, 150)
        want = (_xp_start(ref_trace) - _xp_start(tgt_trace)) - s
        got = fn(ref, tk.SubTrace.cut(tgt_trace.samples, 300 - s, 700_000)).applied_shift
        good += abs(got - want) <= 1
    record_property("note", f"{method}: {good}/100 within 1")
    assert good >= 95


# -- 9 -----------------------------------------------------------------------

@criterion(9, "separation scan: window monotonicity, null false positives, injected gap found")
def test_window_monotonicity():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d = [tk.SubTrace(x) for x in rng.normal(0, 1e-3, (5, 1000))]
        a = [tk.SubTrace(x) for x in rng.normal(rng.uniform(0, 2e-3), 1e-3, (5, 1000))]
        res = ssca.separation_scan_windows(d, a)
        for w in range(1, ssca.MAX_WINDOW):
            assert {h.index for h in res[w]} <= {h.index for h in res[w + 1]}


def _delta1_sets(t, n=10):
    """Δ1 of Doublings 2..n+1 and Additions 1..n, straight from the segmentation."""
    seg = tk.segment_trace(t)
    length = min(e - s for s, e in (op.blocks[0] for op in seg.operations))
    d = seg.delta1_set(DOUBLING, length, exclude=("Doubling 1",))[:n]
    return d, seg.delta1_set(ADDITION, length)[:n]


@criterion(9, "separation scan: window monotonicity, null false positives, injected gap found")
def test_null_fixture(params, record_property):
    t = simulate_trace(_log(Scalar.from_binary(KEY), params), LeakageConfig())
    d, a = _delta1_sets(t)
    hits = ssca.separation_scan(d, a, 1)
    rate = len(hits) / len(d[0])
    record_property("note", f"null window-1 hits {len(hits)}/{len(d[0])}")
    assert rate < 0.01


@criterion(9, "separation scan: window monotonicity, null false positives, injected gap found")
def test_injected_gap(params, record_property):
    cfg = LeakageConfig(delta1_amplitude_offset={ADDITION: 0.004}, amplitude_window=(338_000, 338_600))
    t = simulate_trace(_log(Scalar.from_binary(KEY), params), cfg)
    d, a = _delta1_sets(t)
    hits = ssca.separation_scan_windows(d, a, index_range=(337_000, 339_600))
    top = [h for w in hits for h in hits[w] if h.gap > 0.004 and 338_000 <= h.index < 338_600]
    record_property("note", f"{len(top)} hits with v>0.004 in the injected region")
    assert len(top) >= 1


# -- 10 ----------------------------------------------------------------------

def _attack(params, seed, offset):
    cfg = LeakageConfig(samples_per_cycle=1, rng_seed=seed, x_jitter=True,
                        delta1_cycle_offset={ADDITION: offset} if offset else {})
    t = simulate_trace(_log(Scalar.from_binary(KEY), params), cfg)
    return ssca.duration_attack(tk.segment_trace(t), tolerance=100, truth_bits=KEY)


@criterion(10, "duration attack recovers the key with a 500-cycle offset and fails without it")
def test_duration_attack(params, record_property):
    with_offset = [_attack(params, seed, 500).success for seed in range(20)]
    without = [_attack(params, seed, 0).success for seed in range(20)]
    record_property("note", f"+500: {sum(with_offset)}/20 SUCCESS, 0: {sum(map(bool, without))}/20 SUCCESS")
    assert all(with_offset)
    assert not any(without)


# -- 11 ----------------------------------------------------------------------

def _pipeline(out, monkeypatch):
    monkeypatch.setenv("ATOMSCA_OUT", str(out))
    trace = str(out / "trace.atrc")
    for argv in (["simulate"], ["segment", "--in", trace],
                 ["sync", "--in", trace, "--method", "A", "--anchor-start", "20000", "--anchor-len", "2000"],
                 ["scan", "--in", trace], ["attack", "--in", trace], ["report", "--trace", trace]):
        assert cli.main(argv) == 0
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


@criterion(11, "two pipeline runs with the default seed give byte-identical files")
def test_determinism(tmp_path, monkeypatch, capsys, record_property):
    first = _pipeline(tmp_path / "one", monkeypatch)
    second = _pipeline(tmp_path / "two", monkeypatch)
    capsys.readouterr()
    record_property("note", f"{len(first)} files compared")
    assert "trace.atrc" in first and "report/buckets.csv" in first
    assert first == second
