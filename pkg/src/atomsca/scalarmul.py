"""Left-to-right double-and-add kP over the atomic patterns, plus an affine oracle.

``kp_atomic`` starts from Q = P and walks the scalar from bit l-2 down to 0:
one doubling per bit, followed by a mixed addition when the bit is set. The
optional event log records every pattern start, every field-level opcode and
the NOP runs inserted as segmentation markers between blocks and operations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from . import atomicpat as ap
from .fieldarith import FieldParams

INTRA_BLOCK = "intra-block"
INTER_OPERATION = "inter-operation"
DOUBLING_DOUBLING = "doubling-doubling"

DOUBLING = "Doubling"
ADDITION = "Addition"


class InvalidScalarError(ValueError):
    pass


class PointNotOnCurveError(ValueError):
    pass


class PointAtInfinityError(ValueError):
    pass


@dataclass(frozen=True)
class Scalar:
    bits: tuple  # MSB first, leading bit is 1

    def __post_init__(self):
        if not self.bits or self.bits[0] != 1 or any(b not in (0, 1) for b in self.bits):
            raise InvalidScalarError("scalar bits must be 0/1 with a leading 1")

    @classmethod
    def from_int(cls, k: int) -> "Scalar":
        if k < 1:
            raise InvalidScalarError("scalar must be positive")
        return cls(tuple(int(c) for c in bin(k)[2:]))

    @classmethod
    def from_binary(cls, text: str) -> "Scalar":
        text = text.strip().lower().removeprefix("0b").replace("_", "")
        if not text or set(text) - {"0", "1"}:
            raise InvalidScalarError(f"not a binary string: {text!r}")
        return cls.from_int(int(text, 2))

    @classmethod
    def from_hex(cls, text: str) -> "Scalar":
        text = text.strip().lower().removeprefix("0x")
        try:
            return cls.from_int(int(text, 16))
        except ValueError:
            raise InvalidScalarError(f"not a hex string: {text!r}") from None

    @classmethod
    def parse(cls, text: str) -> "Scalar":
        """``0x``-prefixed text is hex; anything else must be binary."""
        if text.strip().lower().startswith("0x"):
            return cls.from_hex(text)
        return cls.from_binary(text)

    @property
    def value(self) -> int:
        return int("".join(map(str, self.bits)), 2)

    def __len__(self):
        return len(self.bits)

    def binary(self) -> str:
        return "".join(map(str, self.bits))

    def check(self, params: FieldParams) -> None:
        if not 1 <= self.value < params.q:
            raise InvalidScalarError("scalar must lie in [1, q)")


@dataclass(frozen=True)
class AffinePoint:
    x: int
    y: int

    def on_curve(self, params: FieldParams) -> bool:
        p = params.p
        return 0 <= self.x < p and 0 <= self.y < p and \
            (self.y * self.y - (self.x ** 3 + params.a * self.x + params.b)) % p == 0

    @classmethod
    def generator(cls, params: FieldParams) -> "AffinePoint":
        return cls(params.gx, params.gy)

    @classmethod
    def from_hex(cls, text: str) -> "AffinePoint":
        """64 bytes of hex, x then y, each 32 bytes big-endian."""
        raw = bytes.fromhex(text.strip().lower().removeprefix("0x"))
        if len(raw) != 64:
            raise ValueError("affine point hex must encode exactly 64 bytes")
        return cls(int.from_bytes(raw[:32], "big"), int.from_bytes(raw[32:], "big"))

    def to_hex(self) -> str:
        return f"{self.x:064x}{self.y:064x}"


@dataclass(frozen=True)
class JacobianPoint:
    X: int
    Y: int
    Z: int


def jacobian_to_affine(Q: JacobianPoint, params: FieldParams) -> AffinePoint:
    p = params.p
    if Q.Z % p == 0:
        raise PointAtInfinityError("Z = 0 encodes the point at infinity")
    zi = pow(Q.Z, -1, p)
    zi2 = zi * zi % p
    return AffinePoint(Q.X * zi2 % p, Q.Y * zi2 * zi % p)


# -- event log ---------------------------------------------------------------

@dataclass
class PatternBegin:
    kind: str
    ordinal: int  # 1-based, counted separately per kind
    pattern: str

    def to_dict(self) -> dict:
        return {"type": "pattern", "kind": self.kind, "ordinal": self.ordinal, "pattern": self.pattern}


@dataclass
class NopRun:
    count: int
    position: str

    def to_dict(self) -> dict:
        return {"type": "nop", "count": self.count, "position": self.position}


@dataclass(frozen=True)
class NopSchedule:
    intra_block: int = 2000
    inter_operation: int = 5000
    doubling_doubling: int = 10000

    @classmethod
    def none(cls) -> "NopSchedule":
        return cls(0, 0, 0)


@dataclass
class KPEventLog:
    """Ordered record of one kP run. The scalar's implicit MSB is kept in ``scalar_bits``."""

    events: list = field(default_factory=list)
    scalar_bits: tuple = ()
    patterns: str = "corrected"

    def append(self, event) -> None:
        self.events.append(event)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def pattern_events(self) -> list:
        return [e for e in self.events if isinstance(e, PatternBegin)]

    def kinds(self) -> list:
        return [e.kind for e in self.events if isinstance(e, PatternBegin)]

    def op_events(self) -> list:
        return [e for e in self.events if isinstance(e, ap.OpEvent)]

    def nop_runs(self) -> list:
        return [e for e in self.events if isinstance(e, NopRun)]

    def reconstruct_scalar(self) -> Scalar:
        return scalar_from_kinds(self.kinds())

    def to_jsonl(self) -> str:
        head = {"type": "meta", "scalar_bits": "".join(map(str, self.scalar_bits)),
                "implicit_msb": 1, "patterns": self.patterns}
        lines = [json.dumps(head)] + [json.dumps(e.to_dict()) for e in self.events]
        return "\n".join(lines) + "\n"

    def write_jsonl(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "KPEventLog":
        log = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            t = d.pop("type")
            if t == "meta":
                log.scalar_bits = tuple(int(c) for c in d["scalar_bits"])
                log.patterns = d.get("patterns", "corrected")
            elif t == "pattern":
                log.append(PatternBegin(**d))
            elif t == "nop":
                log.append(NopRun(**d))
            elif t == "op":
                log.append(ap.OpEvent(d["opcode"], d["dummy"], d["block"], d["pattern"], d["dst"],
                                      tuple(d["srcs"]), int(d["value"], 16), d.get("cycles")))
            else:
                raise ValueError(f"unknown event type {t!r}")
        return log

    @classmethod
    def read_jsonl(cls, path: Union[str, Path]) -> "KPEventLog":
        return cls.from_jsonl(Path(path).read_text())


def kinds_from_scalar(bits) -> list:
    """Operation sequence that the double-and-add loop performs for ``bits``."""
    out = []
    for b in list(bits)[1:]:
        out.append(DOUBLING)
        if b:
            out.append(ADDITION)
    return out


def scalar_from_kinds(kinds) -> Scalar:
    """Invert :func:`kinds_from_scalar`: each doubling opens a bit, a following addition sets it."""
    bits = [1]
    for i, kind in enumerate(kinds):
        if kind == DOUBLING:
            bits.append(0)
        elif kind == ADDITION:
            if i == 0 or kinds[i - 1] != DOUBLING:
                raise ValueError("an addition must directly follow a doubling")
            bits[-1] = 1
        else:
            raise ValueError(f"unknown operation kind {kind!r}")
    return Scalar(tuple(bits))


# -- scalar multiplication ---------------------------------------------------

def _pattern_set(which: str):
    if which == "corrected":
        return ap.pattern_doubling_mnamnaa(), ap.pattern_mixed_add_mnamnaa()
    if which == "original":
        return ap.pattern_doubling_original(), ap.pattern_mixed_add_original()
    raise ValueError(f"unknown pattern set {which!r}")


def kp_atomic(k: Union[Scalar, int], P: AffinePoint, params: FieldParams, recorder=None,
              patterns: str = "corrected", nops: Optional[NopSchedule] = None,
              markers: bool = True) -> JacobianPoint:
    """kP with the MNAMNAA doubling and mixed-addition patterns.

    ``recorder`` (typically a :class:`KPEventLog`) receives pattern, opcode and
    NOP events. NOP runs go between blocks and between operations only, never
    before the first or after the last block. ``markers=False`` drops them.
    """
    if isinstance(k, int):
        k = Scalar.from_int(k)
    k.check(params)
    if not P.on_curve(params):
        raise PointNotOnCurveError("base point does not satisfy the curve equation")
    sched = nops if nops is not None else NopSchedule()
    if not markers:
        sched = NopSchedule.none()
    dbl, add = _pattern_set(patterns)

    if recorder is not None and hasattr(recorder, "scalar_bits"):
        recorder.scalar_bits = tuple(k.bits)
        recorder.patterns = patterns

    regs = ap.RegisterFile(params, T1=P.x, T2=P.y, T3=1, Tx=P.x, Ty=P.y)
    counts = {DOUBLING: 0, ADDITION: 0}
    prev = None

    def nop(count, position):
        if recorder is not None and count > 0:
            recorder.append(NopRun(count, position))

    def between_blocks(bi):
        if bi > 0:
            nop(sched.intra_block, INTRA_BLOCK)

    for kind in kinds_from_scalar(k.bits):
        if prev is not None:
            both_dbl = prev == DOUBLING and kind == DOUBLING
            nop(sched.doubling_doubling if both_dbl else sched.inter_operation,
                DOUBLING_DOUBLING if both_dbl else INTER_OPERATION)
        counts[kind] += 1
        pat = dbl if kind == DOUBLING else add
        if recorder is not None:
            recorder.append(PatternBegin(kind, counts[kind], pat.name))
        ap.execute_pattern(pat, regs, params, recorder, on_block=between_blocks)
        prev = kind
    return JacobianPoint(int(regs["T1"]), int(regs["T2"]), int(regs["T3"]))


# -- affine oracle -----------------------------------------------------------

def affine_add(P: Optional[AffinePoint], Q: Optional[AffinePoint], params: FieldParams):
    """Textbook affine group law; ``None`` is the point at infinity."""
    if P is None:
        return Q
    if Q is None:
        return P
    p = params.p
    if P.x == Q.x:
        if (P.y + Q.y) % p == 0:
            return None
        lam = (3 * P.x * P.x + params.a) * pow(2 * P.y, -1, p) % p
    else:
        lam = (Q.y - P.y) * pow(Q.x - P.x, -1, p) % p
    x3 = (lam * lam - P.x - Q.x) % p
    return AffinePoint(x3, (lam * (P.x - x3) - P.y) % p)


def kp_reference(k: Union[Scalar, int], P: AffinePoint, params: FieldParams) -> AffinePoint:
    """Plain left-to-right double-and-add in affine coordinates."""
    if isinstance(k, int):
        k = Scalar.from_int(k)
    k.check(params)
    if not P.on_curve(params):
        raise PointNotOnCurveError("base point does not satisfy the curve equation")
    R = None
    for b in k.bits:
        R = affine_add(R, R, params)
        if b:
            R = affine_add(R, P, params)
    return R
