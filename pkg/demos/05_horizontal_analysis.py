# coding: utf-8

# # Single-trace analysis of the first blocks
#
# The separation scan looks for sample indices where every doubling block sits
# strictly above or below every addition block. The duration attack reads the
# key from how long the first block of each operation takes.

# In[1]:

from pathlib import Path
import tempfile

from atomsca import ssca
from atomsca import tracekit as tk
from atomsca.fieldarith import FieldParams
from atomsca.leakage import LeakageConfig, simulate_trace
from atomsca.scalarmul import AffinePoint, KPEventLog, Scalar, kp_atomic

F = FieldParams.p256()
key = Scalar.from_binary("1001101101011111110111")
log = KPEventLog()
kp_atomic(key, AffinePoint.generator(F), F, log)


# In[2]:

# Additions get a small amplitude bump over 600 samples of their first block.
# Ten samples per clock: about 194 million samples, a few seconds to build.

cfg = LeakageConfig(delta1_amplitude_offset={"Addition": 0.004}, amplitude_window=(338_000, 338_600))
t = simulate_trace(log, cfg)
seg = tk.segment_trace(t)
length = min(e - s for s, e in (op.blocks[0] for op in seg.operations))
d_set = seg.delta1_set("Doubling", length, exclude=("Doubling 1",))
a_set = seg.delta1_set("Addition", length)
hits = ssca.separation_scan_windows(d_set, a_set)
for w, found in hits.items():
    inside = sum(338_000 <= h.index < 338_600 for h in found)
    print(f"window {w}: {len(found)} hits, {inside} in the bumped region")


# In[3]:

every = [h for w in hits for h in hits[w]]
print(ssca.buckets_csv(ssca.bucket_histogram(every)))
print(ssca.streaks_csv(ssca.streak_histogram(every)))


# In[4]:

with tempfile.TemporaryDirectory() as tmp:
    for p in ssca.write_reports(Path(tmp), every, d_set, a_set, index_range=(337_000, 339_600)):
        print(p.name, p.stat().st_size, "bytes")


# In[5]:

# A first block that runs 500 cycles longer for additions gives the key away.

for offset in (500, 0):
    cfg = LeakageConfig(samples_per_cycle=1, x_jitter=True, delta1_cycle_offset={"Addition": offset})
    res = ssca.duration_attack(tk.segment_trace(simulate_trace(log, cfg)), tolerance=100,
                               truth_bits=key.binary())
    print(f"offset {offset}: recovered {res.bits}, success {res.success}")
