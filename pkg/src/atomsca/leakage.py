"""Cycle-level synthetic leakage traces for a kP event log.

Every opcode event lasts a fixed number of clock cycles. During each cycle the
amplitude is::

    baseline_active + hw_coeff * HW(word) / word_bits + profile_coeff * profile[opcode][cycle]

where ``word`` cycles round-robin through the destination value's words and
``profile`` is a fixed pseudo-random shape per opcode (the same code always
draws the same current, whatever the data). NOP cycles sit at
``baseline_nop``. Each cycle expands to ``samples_per_cycle`` samples, with a
clock ripple added on top and Gaussian noise on every sample.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .atomicpat import OpEvent
from .scalarmul import KPEventLog, NopRun, PatternBegin

DEFAULT_SEED = 2024
MAGIC = b"ATRC0001"
VERSION = 1
_HEADER = struct.Struct("<8sIddQ")
_CHUNK_CYCLES = 1 << 20


class ConfigError(ValueError):
    pass


class TraceFormatError(ValueError):
    pass


@dataclass
class LeakageConfig:
    cycles_X: int = 16570
    cycles_Xp: int = 16569
    cycles_N: int = 1197
    cycles_A: int = 1353
    # first X of every Δ1 takes x_jitter_cycles with probability x_jitter_prob
    x_jitter: bool = False
    x_jitter_cycles: int = 16565
    x_jitter_prob: float = 0.75
    cycles_per_nop: int = 14
    nop_jitter: bool = False  # adds a uniform {-1, 0, +1} cycle to every NOP
    samples_per_cycle: int = 10
    clock_hz: float = 100e6
    noise_sigma: float = 0.001
    hw_coeff: float = 0.001
    profile_coeff: float = 0.003
    ripple_coeff: float = 0.0012
    baseline_active: float = 0.03
    baseline_nop: float = 0.0
    leak_word_bits: int = 32
    smooth_transitions: bool = True  # ramp between consecutive active cycles
    profile_seed: int = DEFAULT_SEED
    rng_seed: int = DEFAULT_SEED
    first_doubling_offset_cycles: int = 0
    delta1_cycle_offset: dict = field(default_factory=dict)      # kind -> cycles
    delta1_amplitude_offset: dict = field(default_factory=dict)  # kind -> amplitude
    amplitude_window: Optional[tuple] = None  # Δ1-relative [start, end) samples

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("cycles_X", "cycles_Xp", "cycles_N", "cycles_A", "x_jitter_cycles", "cycles_per_nop"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.samples_per_cycle < 1:
            raise ConfigError("samples_per_cycle must be at least 1")
        if self.baseline_nop >= self.baseline_active:
            raise ConfigError("baseline_nop must lie below baseline_active")
        if self.noise_sigma < 0 or not 0 <= self.x_jitter_prob <= 1:
            raise ConfigError("noise_sigma and x_jitter_prob out of range")
        if self.leak_word_bits not in (8, 16, 32, 64):
            raise ConfigError("leak_word_bits must be 8, 16, 32 or 64")
        if self.amplitude_window is not None:
            a, b = self.amplitude_window
            if not 0 <= a < b:
                raise ConfigError("amplitude_window must be an increasing [start, end) pair")

    @property
    def sample_rate_hz(self) -> float:
        return self.clock_hz * self.samples_per_cycle

    def cycles(self, opcode: str) -> int:
        return {"X": self.cycles_X, "X'": self.cycles_Xp, "N": self.cycles_N, "A": self.cycles_A}[opcode]

    def block_cycles(self, shape: str = "XX'NAXX'NAA") -> int:
        return sum(self.cycles(op) for op in _split_shape(shape))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["amplitude_window"] = list(self.amplitude_window) if self.amplitude_window else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LeakageConfig":
        d = dict(d)
        if d.get("amplitude_window") is not None:
            d["amplitude_window"] = tuple(d["amplitude_window"])
        return cls(**d)


def _split_shape(shape: str) -> list:
    ops, i = [], 0
    while i < len(shape):
        if shape[i] == "X" and shape[i + 1:i + 2] == "'":
            ops.append("X'")
            i += 2
        else:
            ops.append(shape[i])
            i += 1
    return ops


@dataclass
class GroundTruth:
    """Evaluation labels. Boundaries are half-open sample ranges."""

    scalar_bits: str
    patterns: list   # [kind, ordinal, start, end]
    blocks: list     # [pattern index, block index, start, end]
    ops: list        # [opcode, start, end]

    def kinds(self) -> list:
        return [p[0] for p in self.patterns]

    def block_bounds(self, pattern_index: int) -> list:
        return [(b[2], b[3]) for b in self.blocks if b[0] == pattern_index]

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        return cls(**json.loads(text))


@dataclass
class Trace:
    samples: np.ndarray
    sample_rate_hz: float
    clock_hz: float
    truth: Optional[GroundTruth] = None

    @property
    def samples_per_cycle(self) -> int:
        return int(round(self.sample_rate_hz / self.clock_hz))

    def __len__(self):
        return len(self.samples)


# -- simulation --------------------------------------------------------------

_OPCODES = ("X", "X'", "N", "A")


def _profiles(cfg: LeakageConfig) -> dict:
    rng = np.random.default_rng(cfg.profile_seed)
    return {op: rng.uniform(-1.0, 1.0, cfg.cycles(op)) for op in _OPCODES}


def _word_hw(value: int, bits: int) -> np.ndarray:
    mask = (1 << bits) - 1
    words = [(value >> (bits * i)) & mask for i in range(256 // bits)]
    return np.array([bin(w).count("1") / bits for w in words])


def simulate_trace(log: KPEventLog, cfg: Optional[LeakageConfig] = None) -> Trace:
    """Render ``log`` into a sampled trace with ground truth attached.

    Jitter and noise come from independent streams seeded by ``cfg.rng_seed``,
    so turning jitter on does not change the noise realisation.
    """
    cfg = cfg or LeakageConfig()
    cfg.validate()
    spc = cfg.samples_per_cycle
    jit = np.random.default_rng([cfg.rng_seed, 1])
    prof = _profiles(cfg)

    pieces = []          # per-cycle amplitude arrays
    active = []          # per-cycle flag: opcode (True) or NOP (False)
    patterns, blocks, ops = [], [], []
    cyc = 0
    pat_idx = -1
    cur_kind = None
    cur_block = -1
    events = list(log)

    # index of the last event of Δ1 for every pattern, for the duration offset
    last_d1 = {}
    p = -1
    for i, ev in enumerate(events):
        if isinstance(ev, PatternBegin):
            p += 1
        elif isinstance(ev, OpEvent) and ev.block == 0:
            last_d1[p] = i

    first_x_pending = False
    for i, ev in enumerate(events):
        if isinstance(ev, PatternBegin):
            pat_idx += 1
            cur_kind = ev.kind
            cur_block = -1
            first_x_pending = True
            patterns.append([ev.kind, ev.ordinal, cyc, None])
        elif isinstance(ev, NopRun):
            n = ev.count * cfg.cycles_per_nop
            if cfg.nop_jitter:
                n += int(jit.integers(-1, 2, ev.count).sum())
            pieces.append(np.full(n, cfg.baseline_nop))
            active.append(np.zeros(n, bool))
            cyc += n
        elif isinstance(ev, OpEvent):
            if ev.block != cur_block:
                if blocks and blocks[-1][3] is None:
                    blocks[-1][3] = cyc
                cur_block = ev.block
                blocks.append([pat_idx, ev.block, cyc, None])
            n = cfg.cycles(ev.opcode)
            if ev.opcode == "X" and first_x_pending and ev.block == 0:
                if cfg.x_jitter and jit.random() < cfg.x_jitter_prob:
                    n = cfg.x_jitter_cycles
                if cur_kind == "Doubling" and patterns[-1][1] == 1:
                    n += cfg.first_doubling_offset_cycles
                first_x_pending = False
            if last_d1.get(pat_idx) == i:
                n += int(cfg.delta1_cycle_offset.get(cur_kind, 0))
            if n <= 0:
                raise ConfigError("offsets make an opcode duration non-positive")
            words = _word_hw(ev.value, cfg.leak_word_bits)
            hw = np.tile(words, -(-n // len(words)))[:n]
            pr = prof[ev.opcode]
            pr = pr[:n] if n <= len(pr) else np.resize(pr, n)
            level = cfg.baseline_active + cfg.hw_coeff * hw + cfg.profile_coeff * pr
            pieces.append(level)
            active.append(np.ones(n, bool))
            ops.append([ev.opcode, cyc, cyc + n])
            cyc += n
            # blocks and patterns end with their last opcode, before any NOPs
            blocks[-1][3] = cyc
            patterns[-1][3] = cyc
    level = np.concatenate(pieces) if pieces else np.zeros(0)
    act = np.concatenate(active) if active else np.zeros(0, bool)
    samples = _render(level, act, cfg)

    # amplitude injection on Δ1, per operation kind
    if cfg.delta1_amplitude_offset:
        for pi, (kind, _, _, _) in enumerate(patterns):
            off = cfg.delta1_amplitude_offset.get(kind, 0.0)
            if not off:
                continue
            d1 = next(b for b in blocks if b[0] == pi and b[1] == 0)
            s0, s1 = d1[2] * spc, d1[3] * spc
            if cfg.amplitude_window is not None:
                s0, s1 = s0 + cfg.amplitude_window[0], min(s1, s0 + cfg.amplitude_window[1])
            samples[s0:s1] += np.float32(off)

    truth = GroundTruth(
        "".join(map(str, log.scalar_bits)),
        [[k, o, s * spc, e * spc] for k, o, s, e in patterns],
        [[pi, bi, s * spc, e * spc] for pi, bi, s, e in blocks],
        [[op, s * spc, e * spc] for op, s, e in ops],
    )
    return Trace(samples, cfg.sample_rate_hz, cfg.clock_hz, truth)


def _render(level: np.ndarray, act: np.ndarray, cfg: LeakageConfig) -> np.ndarray:
    """Expand per-cycle levels to samples, add the clock ripple and the noise.

    With ``smooth_transitions`` the level inside a cycle ramps linearly towards
    the next cycle's level when both cycles execute code, which mimics a
    band-limited probe. Edges between code and NOPs stay sharp.
    """
    spc = cfg.samples_per_cycle
    out = np.empty(len(level) * spc, dtype=np.float32)
    if spc > 1:
        phase = np.arange(spc) / spc
        ripple = -cfg.ripple_coeff * np.cos(2 * np.pi * phase)
    else:
        phase = np.zeros(1)
        ripple = np.zeros(1)
    nxt = level
    if spc > 1 and cfg.smooth_transitions and len(level) > 1:
        nxt = level.copy()
        cont = act[:-1] & act[1:]
        nxt[:-1] = np.where(cont, level[1:], level[:-1])
    noise_rng = np.random.default_rng([cfg.rng_seed, 2])
    sigma = np.float32(cfg.noise_sigma)
    for c0 in range(0, len(level), _CHUNK_CYCLES):
        c1 = min(len(level), c0 + _CHUNK_CYCLES)
        if spc == 1:
            block = level[c0:c1].astype(np.float32)
        else:
            lv, nx = level[c0:c1, None], nxt[c0:c1, None]
            block = (lv + (nx - lv) * phase[None, :] + ripple[None, :]).astype(np.float32).ravel()
        if cfg.noise_sigma > 0:
            noise = noise_rng.standard_normal(block.size, dtype=np.float32)
            noise *= sigma
            block += noise
        out[c0 * spc:c1 * spc] = block
    return out


def operation_cycles(kind: str, cfg: Optional[LeakageConfig] = None) -> int:
    """Jitter-free duration of one operation without its intra-operation NOPs."""
    cfg = cfg or LeakageConfig()
    nblocks = {"Doubling": 4, "Addition": 6}[kind]
    return nblocks * cfg.block_cycles()


# -- file format -------------------------------------------------------------

def truth_path(path: Union[str, Path]) -> Path:
    return Path(str(path) + ".truth.json")


def write_trace(t: Trace, path: Union[str, Path]) -> None:
    path = Path(path)
    data = np.ascontiguousarray(t.samples, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, float(t.sample_rate_hz), float(t.clock_hz), len(data)))
        fh.write(data.tobytes())
    side = truth_path(path)
    if t.truth is not None:
        side.write_text(t.truth.to_json())
    elif side.exists():
        side.unlink()


def read_trace(path: Union[str, Path], with_truth: bool = True) -> Trace:
    """Load a trace. ``with_truth=False`` gives the attacker view and ignores any sidecar."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise TraceFormatError("truncated header")
        magic, version, rate, clock, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise TraceFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise TraceFormatError(f"unsupported version {version}")
        body = fh.read()
    if len(body) != 4 * count:
        raise TraceFormatError(f"expected {count} samples, found {len(body) // 4}")
    samples = np.frombuffer(body, dtype="<f4").astype(np.float32)
    truth = None
    side = truth_path(path)
    if with_truth and side.exists():
        truth = GroundTruth.from_json(side.read_text())
    return Trace(samples, rate, clock, truth)
