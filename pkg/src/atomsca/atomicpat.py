"""Atomic-pattern tables and the executor that runs them over a register file.

Tables live as text assets under ``patterns/``, one slot per line::

    <block> <kind> <dummy?> <dst> <src1> [<src2>] [; note]

``kind`` is ``M``, ``N`` or ``A``; the dummy flag is ``*`` for a dummy slot and
``-`` for a real one. Header lines start with ``@`` and carry the pattern name,
the block shape and the input/output register bindings.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from .fieldarith import FieldElement, FieldParams, field_add, field_mul, field_neg

REGISTER_NAMES = tuple(f"T{i}" for i in range(11)) + ("Tx", "Ty")
SHAPES = ("MNAMNAA", "MANA")
DUMMY_REG = "T0"


class MalformedPatternError(ValueError):
    pass


@dataclass(frozen=True)
class AtomicSlot:
    kind: str
    dummy: bool
    dst: str
    src1: str
    src2: Optional[str] = None
    note: str = ""

    @property
    def sources(self) -> tuple:
        return (self.src1,) if self.src2 is None else (self.src1, self.src2)


@dataclass(frozen=True)
class AtomicPattern:
    name: str
    pattern_string: str
    blocks: tuple
    input_binding: dict = field(default_factory=dict, hash=False)
    output_binding: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        validate_pattern(self)

    def __len__(self):
        return len(self.blocks)

    def slot(self, block: int, index: int) -> AtomicSlot:
        """Slot ``i`` of block ``b``, both 1-based."""
        return self.blocks[block - 1][index - 1]

    def with_slot(self, block: int, index: int, slot: AtomicSlot) -> "AtomicPattern":
        blocks = [list(b) for b in self.blocks]
        blocks[block - 1][index - 1] = slot
        return replace(self, blocks=tuple(tuple(b) for b in blocks))


def validate_pattern(pattern: AtomicPattern) -> None:
    if pattern.pattern_string not in SHAPES:
        raise MalformedPatternError(f"unknown block shape {pattern.pattern_string!r}")
    if not pattern.blocks:
        raise MalformedPatternError("pattern has no blocks")
    for bi, block in enumerate(pattern.blocks, 1):
        kinds = "".join(s.kind for s in block)
        if kinds != pattern.pattern_string:
            raise MalformedPatternError(
                f"{pattern.name}: block {bi} has shape {kinds}, expected {pattern.pattern_string}")
        for slot in block:
            regs = (slot.dst,) + slot.sources
            if any(r not in REGISTER_NAMES for r in regs):
                raise MalformedPatternError(f"{pattern.name}: unknown register in {slot}")
            if (slot.kind == "N") != (slot.src2 is None):
                raise MalformedPatternError(f"{pattern.name}: wrong operand count in {slot}")
            if slot.dummy and slot.dst != DUMMY_REG:
                raise MalformedPatternError(f"{pattern.name}: dummy slot must write {DUMMY_REG}")
            if not slot.dummy and DUMMY_REG in regs:
                raise MalformedPatternError(f"{pattern.name}: real slot touches {DUMMY_REG}")


# -- text asset format -------------------------------------------------------

def _parse_binding(tokens) -> dict:
    out = {}
    for tok in tokens:
        key, _, reg = tok.partition("=")
        if not reg:
            raise MalformedPatternError(f"bad binding {tok!r}")
        out[key] = reg
    return out


def loads_pattern(text: str) -> AtomicPattern:
    name = shape = None
    inputs: dict = {}
    outputs: dict = {}
    blocks: list = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("@"):
            key, *rest = line[1:].split()
            if key == "name":
                name = rest[0]
            elif key == "shape":
                shape = rest[0]
            elif key == "in":
                inputs = _parse_binding(rest)
            elif key == "out":
                outputs = _parse_binding(rest)
            else:
                raise MalformedPatternError(f"line {lineno}: unknown header {key!r}")
            continue
        body, _, note = line.partition(";")
        tok = body.split()
        if len(tok) not in (5, 6) or tok[2] not in ("*", "-"):
            raise MalformedPatternError(f"line {lineno}: cannot parse {raw!r}")
        bno = int(tok[0])
        if bno == len(blocks) + 1:
            blocks.append([])
        elif bno != len(blocks):
            raise MalformedPatternError(f"line {lineno}: blocks must be numbered consecutively")
        blocks[-1].append(AtomicSlot(tok[1], tok[2] == "*", tok[3], tok[4],
                                     tok[5] if len(tok) == 6 else None, note.strip()))
    if name is None or shape is None:
        raise MalformedPatternError("missing @name or @shape header")
    return AtomicPattern(name, shape, tuple(tuple(b) for b in blocks), inputs, outputs)


def dumps_pattern(pattern: AtomicPattern) -> str:
    lines = [f"@name {pattern.name}", f"@shape {pattern.pattern_string}",
             "@in " + " ".join(f"{k}={v}" for k, v in pattern.input_binding.items()),
             "@out " + " ".join(f"{k}={v}" for k, v in pattern.output_binding.items())]
    for bi, block in enumerate(pattern.blocks, 1):
        for s in block:
            parts = [str(bi), s.kind, "*" if s.dummy else "-", s.dst, s.src1]
            if s.src2 is not None:
                parts.append(s.src2)
            line = " ".join(parts)
            if s.note:
                line += " ; " + s.note
            lines.append(line)
    return "\n".join(lines) + "\n"


def load_pattern(path: Union[str, Path]) -> AtomicPattern:
    return loads_pattern(Path(path).read_text())


def save_pattern(pattern: AtomicPattern, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_pattern(pattern))


_cache: dict = {}


def _builtin(name: str) -> AtomicPattern:
    if name not in _cache:
        text = resources.files(__package__).joinpath("patterns", f"{name}.pat").read_text()
        _cache[name] = loads_pattern(text)
    return _cache[name]


def pattern_doubling_mnamnaa() -> AtomicPattern:
    return _builtin("mnamnaa_doubling")


def pattern_mixed_add_mnamnaa() -> AtomicPattern:
    return _builtin("mnamnaa_mixed_add")


def pattern_mixed_add_mana() -> AtomicPattern:
    return _builtin("mana_mixed_add")


def pattern_special_add_mana() -> AtomicPattern:
    return _builtin("mana_special_add")


def pattern_special_add_mnamnaa() -> AtomicPattern:
    return _builtin("mnamnaa_special_add")


def pattern_tripling_mana() -> AtomicPattern:
    return _builtin("mana_tripling")


def pattern_tripling_mnamnaa() -> AtomicPattern:
    return _builtin("mnamnaa_tripling")


def pattern_doubling_original() -> AtomicPattern:
    """Doubling with the faulty last slot left in. Results are wrong."""
    return _builtin("original_doubling")


def pattern_mixed_add_original() -> AtomicPattern:
    """Mixed addition with its three faulty slots left in. Results are wrong."""
    return _builtin("original_mixed_add")


# -- execution ---------------------------------------------------------------

class RegisterFile:
    """Working registers T0..T10, Tx, Ty, all initialised to zero."""

    def __init__(self, params: FieldParams, **values):
        self.params = params
        self._regs = {name: params.zero for name in REGISTER_NAMES}
        for name, v in values.items():
            self[name] = v

    def __getitem__(self, name: str) -> FieldElement:
        return self._regs[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self._regs:
            raise KeyError(name)
        if isinstance(value, int):
            value = self.params.element(value)
        self._regs[name] = value

    def values(self) -> dict:
        return {k: int(v) for k, v in self._regs.items()}

    def copy(self) -> "RegisterFile":
        other = RegisterFile(self.params)
        other._regs = dict(self._regs)
        return other


@dataclass
class OpEvent:
    opcode: str          # X, X', N or A
    dummy: bool
    block: int           # 0-based block index within the pattern
    pattern: str
    dst: str
    srcs: tuple
    value: int           # destination value after the step (leakage input)
    cycles: Optional[int] = None

    def to_dict(self) -> dict:
        return {"type": "op", "opcode": self.opcode, "dummy": self.dummy, "block": self.block,
                "pattern": self.pattern, "dst": self.dst, "srcs": list(self.srcs),
                "value": f"{self.value:064x}", "cycles": self.cycles}


def load_registers(pattern: AtomicPattern, params: FieldParams, **coords) -> RegisterFile:
    """Build a register file from coordinate values keyed as in ``pattern.input_binding``."""
    missing = set(pattern.input_binding) - set(coords)
    if missing:
        raise KeyError(f"missing inputs {sorted(missing)}")
    regs = RegisterFile(params)
    for coord, reg in pattern.input_binding.items():
        regs[reg] = coords[coord]
    return regs


def read_outputs(pattern: AtomicPattern, regs: RegisterFile) -> dict:
    return {coord: int(regs[reg]) for coord, reg in pattern.output_binding.items()}


def execute_pattern(pattern: AtomicPattern, regs: RegisterFile, params: FieldParams,
                    recorder=None, zero_dummy_between_blocks: bool = False,
                    on_block=None) -> RegisterFile:
    """Run every slot of ``pattern`` in order, mutating and returning ``regs``.

    Dummy slots execute a real field operation into T0. ``recorder``, if given,
    must have an ``append`` method and receives one :class:`OpEvent` per step:
    an M slot yields ``X`` then ``X'``.

    ``on_block(i)`` is called before block ``i`` starts, which is where the
    caller can interleave its own events (NOP runs, for instance).

    Undefined inputs (P = ±Q, Z = 0) are not detected; the output is garbage.
    """
    validate_pattern(pattern)
    name = pattern.name
    for bi, block in enumerate(pattern.blocks):
        if on_block is not None:
            on_block(bi)
        if zero_dummy_between_blocks:
            regs[DUMMY_REG] = params.zero
        for slot in block:
            if slot.kind == "M":
                hook = None
                if recorder is not None:
                    def hook(op, v, _s=slot, _b=bi):
                        recorder.append(OpEvent(op, _s.dummy, _b, name, _s.dst, _s.sources, int(v)))
                out = field_mul(regs[slot.src1], regs[slot.src2], params, hook)
            elif slot.kind == "N":
                out = field_neg(regs[slot.src1], params)
            else:
                out = field_add(regs[slot.src1], regs[slot.src2], params)
            if slot.kind != "M" and recorder is not None:
                recorder.append(OpEvent(slot.kind, slot.dummy, bi, name, slot.dst, slot.sources, int(out)))
            regs[slot.dst] = out
    return regs


def run_pattern(pattern: AtomicPattern, params: FieldParams, recorder=None, **coords) -> dict:
    """Convenience wrapper: load inputs, execute, return the output coordinates."""
    regs = load_registers(pattern, params, **coords)
    execute_pattern(pattern, regs, params, recorder)
    return read_outputs(pattern, regs)


def opcode_string(events, block: Optional[int] = None) -> str:
    return "".join(e.opcode for e in events if block is None or e.block == block)
