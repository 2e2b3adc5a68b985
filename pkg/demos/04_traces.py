# coding: utf-8

# # Simulated traces, segmentation and alignment
#
# The simulator turns the event log into one amplitude per sample. Segmentation
# finds the blocks from the NOP troughs; the three alignment methods line up
# sub-traces cut from different runs.

# In[1]:

import numpy as np

from atomsca import tracekit as tk
from atomsca.fieldarith import FieldParams
from atomsca.leakage import LeakageConfig, simulate_trace
from atomsca.scalarmul import AffinePoint, KPEventLog, kp_atomic

F = FieldParams.p256()
log = KPEventLog()
kp_atomic(0b10110, AffinePoint.generator(F), F, log)
t = simulate_trace(log, LeakageConfig(samples_per_cycle=1))
print(len(t), "samples at", t.sample_rate_hz / 1e6, "MS/s")


# In[2]:

seg = tk.segment_trace(t)
print(seg.kinds())
print("boundaries exact:", seg.flat_blocks() == [(s, e) for _, _, s, e in t.truth.blocks])


# In[3]:

# Two noisy runs at ten samples per clock, the second cut 57 samples early.

a = simulate_trace(log, LeakageConfig(rng_seed=1))
b = simulate_trace(log, LeakageConfig(rng_seed=2))
start = a.truth.blocks[4][2]
ref = tk.SubTrace.cut(a.samples, start, 700_000)
tgt = tk.SubTrace.cut(b.samples, start - 57, 700_000)
for name, fn in tk.SYNC_METHODS.items():
    print("method", name, "shift", fn(ref, tgt).applied_shift)


# In[4]:

targets = [tk.SubTrace.cut(b.samples, start + s, 700_000) for s in (-120, -30, 45, 160)]
window = (190_000, 210_000)
print("before:", tk.sync_quality([ref] + targets, window))
print("after: ", tk.sync_quality([ref] + tk.synchronize(ref, targets, "c"), window))
