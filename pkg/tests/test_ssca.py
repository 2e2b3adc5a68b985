from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atomsca import ssca
from atomsca.leakage import LeakageConfig, simulate_trace
from atomsca.scalarmul import ADDITION, DOUBLING, AffinePoint, KPEventLog, kp_atomic
from atomsca.ssca import ADDITION_ABOVE, DOUBLING_ABOVE, SeparationHit, separation_scan
from atomsca.tracekit import EmptySetError, SubTrace, segment_trace


def _set(arrays):
    return [SubTrace(np.asarray(a, dtype=np.float64)) for a in arrays]


def _brute(d, a, w):
    """Direct evaluation of the window rule, for cross-checking."""
    d, a = np.array(d), np.array(a)
    n = d.shape[1]
    left, right = (w - 1) // 2, w // 2
    out = []
    for i in range(n):
        js = range(max(0, i - left), min(n, i + right + 1))
        up = max(a[:, j].min() for j in js) - d[:, i].max()
        down = d[:, i].min() - min(a[:, j].max() for j in js)
        if up > 0 or down > 0:
            out.append((i, ADDITION_ABOVE if up >= down else DOUBLING_ABOVE, max(up, down)))
    return out


def test_constant_sets():
    d = _set([np.zeros(50)] * 3)
    a = _set([np.full(50, 0.005)] * 4)
    for w in range(1, 7):
        hits = separation_scan(d, a, w)
        assert len(hits) == 50
        assert all(h.direction == ADDITION_ABOVE and h.gap == pytest.approx(0.005) for h in hits)
    assert all(h.direction == DOUBLING_ABOVE for h in separation_scan(a, d, 3))


def test_identical_sets_never_separate_pointwise():
    rng = np.random.default_rng(0)
    x = _set(rng.normal(size=(5, 300)))
    assert separation_scan(x, x, 1) == []


def test_window_rule_matches_brute_force():
    rng = np.random.default_rng(1)
    d = rng.normal(0, 1, (3, 400))
    a = rng.normal(0.8, 1, (3, 400))
    for w in range(1, 7):
        got = [(h.index, h.direction, round(h.gap, 12)) for h in separation_scan(_set(d), _set(a), w)]
        want = [(i, s, round(g, 12)) for i, s, g in _brute(d, a, w)]
        assert got == want


def test_window_shape():
    assert [ssca.window_bounds(w) for w in range(1, 7)] == [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3)]
    # only the addition set is windowed: a lone high addition sample reaches index i-1 at w=2
    d = _set([np.zeros(5)])
    a = _set([[0, 0, 1, 0, 0]])
    assert [h.index for h in separation_scan(d, a, 1)] == [2]
    assert [h.index for h in separation_scan(d, a, 2)] == [1, 2]
    assert [h.index for h in separation_scan(d, a, 3)] == [1, 2, 3]


def test_strict_inequality():
    d = _set([np.zeros(10)])
    a = _set([np.zeros(10)])
    assert separation_scan(d, a, 1) == []


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_wider_windows_only_add_hits(seed):
    rng = np.random.default_rng(seed)
    d = _set(rng.normal(0, 1e-3, (4, 1000)))
    a = _set(rng.normal(5e-4, 1e-3, (4, 1000)))
    res = ssca.separation_scan_windows(d, a)
    for w in range(1, 6):
        assert {h.index for h in res[w]} <= {h.index for h in res[w + 1]}


def test_index_range_and_errors():
    rng = np.random.default_rng(2)
    d = rng.normal(0, 1, (2, 300))
    a = rng.normal(1, 1, (2, 300))
    full = separation_scan(_set(d), _set(a), 4)
    part = separation_scan(_set(d), _set(a), 4, (100, 200))
    assert part == [h for h in full if 100 <= h.index < 200]
    with pytest.raises(EmptySetError):
        separation_scan([], _set(a), 1)
    with pytest.raises(ssca.WindowOutOfRangeError):
        separation_scan(_set(d), _set(a), 7)
    with pytest.raises(ssca.WindowOutOfRangeError):
        separation_scan(_set(d), _set(a), 0)
    with pytest.raises(ValueError):
        separation_scan(_set(d), _set(a), 1, (0, 301))


def test_buckets():
    assert ssca.bucket_histogram([]) == {w: [0, 0, 0, 0] for w in range(1, 7)}
    hist = ssca.bucket_histogram([SeparationHit(1, ADDITION_ABOVE, 0.0035, 5)])
    assert hist[5] == [0, 0, 1, 0] and sum(map(sum, hist.values())) == 1
    gaps = [0.001, 0.002, 0.0025, 0.003, 0.004, 0.0041]
    hist = ssca.bucket_histogram([SeparationHit(i, ADDITION_ABOVE, g, 1) for i, g in enumerate(gaps)])
    assert hist[1] == [2, 2, 1, 1]


def test_streaks():
    hits = [SeparationHit(i, ADDITION_ABOVE, 0.001, 1) for i in (10, 11, 12)]
    assert ssca.streak_histogram(hits) == {1: Counter({3: 1})}
    hits = [SeparationHit(i, ADDITION_ABOVE, 0.001, 2) for i in (10, 12)]
    assert ssca.streak_histogram(hits) == {2: Counter({1: 2})}
    assert ssca.streak_runs(hits, 2) == [(10, 1), (12, 1)]


def test_two_sample_streak_fixture():
    rng = np.random.default_rng(7)
    d = rng.normal(0, 1e-3, (20, 200_000))
    a = rng.normal(0, 1e-3, (14, 200_000))
    a[:, 186_810:186_812] += 0.01
    hits = separation_scan(_set(d), _set(a), 1)
    assert [h.index for h in hits] == [186_810, 186_811]
    assert ssca.streak_runs(hits, 1) == [(186_810, 2)]
    assert ssca.streaks_csv(ssca.streak_histogram(hits)).splitlines()[1] == "1,1,0"


def test_annotation():
    ann = ssca.annotate_block_operations(727_310)
    assert [op for op, _, _ in ann] == ["X", "X'", "N", "A", "X", "X'", "N", "A", "A"]
    assert ann[0] == ("X", 0, 165_700) and ann[-1][2] == 727_310
    with pytest.raises(ssca.BlockTooShortError):
        ssca.annotate_block_operations(1000)
    mana = ssca.annotate_block_operations(10**6, shape="XX'ANA")
    assert [op for op, _, _ in mana] == ["X", "X'", "A", "N", "A"]


def test_annotation_matches_ground_truth(params):
    log = KPEventLog()
    kp_atomic(2, AffinePoint.generator(params), params, log)
    t = simulate_trace(log, LeakageConfig(samples_per_cycle=3))
    s0, e0 = t.truth.blocks[0][2:]
    ann = ssca.annotate_block_operations(e0 - s0, LeakageConfig(samples_per_cycle=3))
    truth = [(op, s - s0, e - s0) for op, s, e in t.truth.ops[:9]]
    assert ann == truth


# -- duration attack ---------------------------------------------------------

def _blocks(kinds, t_d=100, t_a=110, other=90):
    out, pos = [], 0
    for k in kinds:
        first = t_d if k == DOUBLING else t_a
        for j in range(4 if k == DOUBLING else 6):
            n = first if j == 0 else other
            out.append((pos, pos + n))
            pos += n + 5
    return out


def test_walk_on_synthetic_blocks():
    kinds = [DOUBLING, DOUBLING, ADDITION, DOUBLING, ADDITION, DOUBLING]
    res = ssca.duration_attack(_blocks(kinds), tolerance=3, truth_bits="10110")
    assert res.bits == "10110" and res.success
    assert [k for _, _, k in res.decisions] == kinds
    assert res.t_ref_pd == 100


def test_walk_without_offset_fails():
    kinds = [DOUBLING, ADDITION, DOUBLING]
    res = ssca.duration_attack(_blocks(kinds, t_a=100), tolerance=3, truth_bits="110")
    assert res.success is False and res.bits != "110"
    # D A: the walk reads two doublings, then runs out of blocks mid-operation
    res = ssca.duration_attack(_blocks(kinds[:2], t_a=100), tolerance=3, truth_bits="11")
    assert res.success is False
    assert res.desync and "desync" in res.message
    with pytest.raises(ssca.WalkDesyncError):
        ssca.duration_attack(_blocks(kinds[:2], t_a=100), tolerance=3, strict=True)


def test_walk_with_fixed_reference():
    kinds = [DOUBLING, ADDITION]
    res = ssca.duration_attack(_blocks(kinds), t_ref_pd=110, tolerance=3)
    assert res.success is None
    assert [k for _, _, k in res.decisions][0] == ADDITION
    assert res.message  # an addition cannot open the walk


def test_walk_on_empty_input():
    assert ssca.duration_attack([], truth_bits="1").bits == "1"


def test_attack_on_simulated_trace(params):
    log = KPEventLog()
    kp_atomic(0b101101, AffinePoint.generator(params), params, log)
    t = simulate_trace(log, LeakageConfig(samples_per_cycle=1, delta1_cycle_offset={ADDITION: 500}))
    res = ssca.duration_attack(segment_trace(t), tolerance=100, truth_bits=t.truth.scalar_bits)
    assert res.success and res.bits == "101101"


# -- reports -----------------------------------------------------------------

def test_csv_shapes():
    t10 = ssca.buckets_csv(ssca.bucket_histogram([]))
    assert t10.splitlines()[0] == "window,v<=0.002,0.002<v<=0.003,0.003<v<=0.004,v>0.004"
    assert t10.splitlines()[1:] == [f"{w},0,0,0,0" for w in range(1, 7)]
    t11 = ssca.streaks_csv({})
    assert t11.splitlines() == ["window,s=2,s>2"] + [f"{w},0,0" for w in range(1, 7)]
    hits = [SeparationHit(3, DOUBLING_ABOVE, 0.0021, 2)]
    assert ssca.read_hits_csv(ssca.hits_csv(hits)) == hits
    assert ssca.hits_csv([]) == "window,index,direction,gap\n"


def test_single_hit_gives_one_nonzero_cell(tmp_path):
    paths = ssca.write_reports(tmp_path, [SeparationHit(3, ADDITION_ABOVE, 0.0035, 5)])
    rows = [r.split(",") for r in paths[0].read_text().splitlines()[1:]]
    cells = [int(c) for r in rows for c in r[1:]]
    assert sum(cells) == 1 and rows[4][3] == "1"


def test_envelope_svg(tmp_path):
    rng = np.random.default_rng(3)
    d = _set(rng.normal(0, 1, (3, 5000)))
    a = _set(rng.normal(0, 1, (3, 5000)))
    svg = ssca.envelope_svg(d, a)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg == ssca.envelope_svg(d, a)
    paths = ssca.write_reports(tmp_path, [], d, a)
    assert [p.name for p in paths] == ["buckets.csv", "streaks.csv", "envelope.svg"]
    hits = [SeparationHit(i, ADDITION_ABOVE, 0.001, 5) for i in (100, 101)]
    paths = ssca.write_reports(tmp_path, hits, d, a)
    assert paths[-1].name == "envelope_streak.svg"
