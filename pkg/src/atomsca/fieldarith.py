"""Fixed-width prime-field arithmetic for the P-256 field.

Elements are stored as ``s`` little-endian words of ``w`` bits. Every public
operation runs the same sequence of word-level steps regardless of the
operand values: carries are propagated over the full width and the final
conditional subtraction is a borrow-mask select.

Passing a list as ``steps`` to any of the primitives records the kind of each
word-level step, which is how the uniformity of the operation shape is checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd
from typing import Callable, Optional

P256_P = 2**256 - 2**224 + 2**192 + 2**96 - 1
P256_A = P256_P - 3
P256_B = 0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B
P256_Q = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
P256_GX = 0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296
P256_GY = 0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5

StepLog = Optional[list]
OpHook = Optional[Callable[[str, "FieldElement"], None]]


@dataclass(frozen=True)
class FieldElement:
    """A reduced residue held as ``len(limbs)`` words of ``w`` bits, least significant first."""

    limbs: tuple
    w: int = 64

    @classmethod
    def from_int(cls, x: int, params: "FieldParams") -> "FieldElement":
        if not 0 <= x < params.p:
            raise ValueError("value is not reduced mod p")
        return cls(_split(x, params.w, params.s), params.w)

    def __int__(self) -> int:
        v = 0
        for limb in reversed(self.limbs):
            v = (v << self.w) | limb
        return v

    def to_bytes(self) -> bytes:
        return int(self).to_bytes(32, "big")

    @classmethod
    def from_bytes(cls, data: bytes, params: "FieldParams") -> "FieldElement":
        if len(data) != 32:
            raise ValueError("field elements serialize as exactly 32 bytes")
        return cls.from_int(int.from_bytes(data, "big"), params)

    def __repr__(self) -> str:
        return f"FieldElement(0x{int(self):064x})"


def _split(x: int, w: int, s: int) -> tuple:
    mask = (1 << w) - 1
    return tuple((x >> (w * i)) & mask for i in range(s))


@dataclass(frozen=True)
class FieldParams:
    """Prime field and short-Weierstrass curve parameters plus Montgomery constants."""

    p: int
    a: int
    b: int
    q: int
    gx: int
    gy: int
    w: int = 64
    s: int = field(init=False)
    R_mod_p: int = field(init=False)
    R2_mod_p: int = field(init=False)
    p_inv_neg: int = field(init=False)
    mask: int = field(init=False, repr=False)
    p_limbs: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.w not in (32, 64):
            raise ValueError("word size must be 32 or 64")
        s = -(-self.p.bit_length() // self.w)
        R = 1 << (s * self.w)
        if R <= self.p or gcd(R, self.p) != 1:
            raise ValueError("R must exceed p and be coprime to it")
        if (4 * pow(self.a, 3, self.p) + 27 * pow(self.b, 2, self.p)) % self.p == 0:
            raise ValueError("singular curve")
        if (self.gy * self.gy - (self.gx**3 + self.a * self.gx + self.b)) % self.p:
            raise ValueError("base point is not on the curve")
        set_ = object.__setattr__
        set_(self, "s", s)
        set_(self, "R_mod_p", R % self.p)
        set_(self, "R2_mod_p", R * R % self.p)
        set_(self, "p_inv_neg", (-pow(self.p, -1, 1 << self.w)) % (1 << self.w))
        set_(self, "mask", (1 << self.w) - 1)
        set_(self, "p_limbs", _split(self.p, self.w, s))

    @classmethod
    def p256(cls, w: int = 64) -> "FieldParams":
        return cls(P256_P, P256_A, P256_B, P256_Q, P256_GX, P256_GY, w)

    def element(self, x: int) -> FieldElement:
        return FieldElement.from_int(x % self.p, self)

    @property
    def zero(self) -> FieldElement:
        return FieldElement((0,) * self.s, self.w)

    @property
    def one(self) -> FieldElement:
        return self.element(1)

    @property
    def R2(self) -> FieldElement:
        return self.element(self.R2_mod_p)


def _select(mask: int, if_set: list, if_clear: list, m: int) -> tuple:
    inv = ~mask & m
    return tuple((x & mask) | (y & inv) for x, y in zip(if_set, if_clear))


def _sub_limbs(x: list, y: tuple, w: int, m: int, steps: StepLog):
    out = []
    borrow = 0
    for xi, yi in zip(x, y):
        d = xi - yi - borrow
        out.append(d & m)
        borrow = (d >> w) & 1
        if steps is not None:
            steps.append("sub")
    return out, borrow


def mont_mul(a: FieldElement, b: FieldElement, params: FieldParams, steps: StepLog = None) -> FieldElement:
    """Montgomery product ``a*b*R^-1 mod p`` by separated operand scanning.

    The schoolbook product is formed first, then reduced one word at a time;
    the carry chain always runs to the top word so the step count is fixed.
    """
    s, w, m = params.s, params.w, params.mask
    pl, n0 = params.p_limbs, params.p_inv_neg
    al, bl = a.limbs, b.limbs
    t = [0] * (2 * s + 1)
    for i in range(s):
        carry = 0
        ai = al[i]
        for j in range(s):
            x = t[i + j] + ai * bl[j] + carry
            t[i + j] = x & m
            carry = x >> w
            if steps is not None:
                steps.append("mac")
        t[i + s] = carry
    for i in range(s):
        carry = 0
        u = (t[i] * n0) & m
        for j in range(s):
            x = t[i + j] + u * pl[j] + carry
            t[i + j] = x & m
            carry = x >> w
            if steps is not None:
                steps.append("mac")
        for k in range(i + s, 2 * s + 1):
            x = t[k] + carry
            t[k] = x & m
            carry = x >> w
            if steps is not None:
                steps.append("add")
    hi = t[s:2 * s]
    diff, borrow = _sub_limbs(hi, pl, w, m, steps)
    # keep hi only when the top word is clear and hi < p
    keep = borrow & ((t[2 * s] ^ 1) & 1)
    if steps is not None:
        steps.append("select")
    return FieldElement(_select(-keep & m, hi, diff, m), w)


def field_add(a: FieldElement, b: FieldElement, params: FieldParams, steps: StepLog = None) -> FieldElement:
    """``(a + b) mod p`` as add, full-width subtract of p, then masked select."""
    w, m = params.w, params.mask
    total = []
    carry = 0
    for x, y in zip(a.limbs, b.limbs):
        v = x + y + carry
        total.append(v & m)
        carry = v >> w
        if steps is not None:
            steps.append("add")
    diff, borrow = _sub_limbs(total, params.p_limbs, w, m, steps)
    keep = borrow & (carry ^ 1)
    if steps is not None:
        steps.append("select")
    return FieldElement(_select(-keep & m, total, diff, m), w)


def field_neg(a: FieldElement, params: FieldParams, steps: StepLog = None) -> FieldElement:
    """``(p - a) mod p``; the ``a == 0`` case is masked to zero, not branched on."""
    w, m = params.w, params.mask
    diff, _ = _sub_limbs(list(params.p_limbs), a.limbs, w, m, steps)
    acc = 0
    for x in a.limbs:
        acc |= x
    nonzero = (acc + m) >> w
    if steps is not None:
        steps.append("select")
    zero = [0] * params.s
    return FieldElement(_select(-nonzero & m, diff, zero, m), w)


def field_mul(a: FieldElement, b: FieldElement, params: FieldParams, hook: OpHook = None,
              steps: StepLog = None) -> FieldElement:
    """Standard-domain product ``a*b mod p`` as two Montgomery products.

    ``c = a*b*R^-1`` (opcode ``X``) followed by ``c*R^2*R^-1`` (opcode ``X'``).
    ``hook`` receives ``(opcode, value)`` after each of the two sub-products.
    """
    c = mont_mul(a, b, params, steps)
    if hook is not None:
        hook("X", c)
    c = mont_mul(c, params.R2, params, steps)
    if hook is not None:
        hook("X'", c)
    return c


def to_mont(a: FieldElement, params: FieldParams) -> FieldElement:
    return mont_mul(a, params.R2, params)


def from_mont(a: FieldElement, params: FieldParams) -> FieldElement:
    return mont_mul(a, params.one, params)


def field_inv(a: FieldElement, params: FieldParams) -> FieldElement:
    """Fermat inverse ``a^(p-2)``; not constant-shape, used only for coordinate conversion."""
    v = int(a)
    if v == 0:
        raise ZeroDivisionError("zero has no inverse")
    return params.element(pow(v, params.p - 2, params.p))
