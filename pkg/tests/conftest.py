"""Shared fixtures and an independent affine oracle for the curve arithmetic.

The oracle below deliberately avoids everything in ``atomsca``: textbook
affine formulas over Python integers with Fermat inverses.
"""

import random

import pytest

from atomsca.fieldarith import FieldParams

P = 2**256 - 2**224 + 2**192 + 2**96 - 1
A = P - 3
GX = 0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296
GY = 0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5
G = (GX, GY)


def inv(x):
    return pow(x, P - 2, P)


def oracle_add(p1, p2):
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    (x1, y1), (x2, y2) = p1, p2
    if x1 == x2:
        if (y1 + y2) % P == 0:
            return None
        lam = (3 * x1 * x1 + A) * inv(2 * y1) % P
    else:
        lam = (y2 - y1) * inv(x2 - x1) % P
    x3 = (lam * lam - x1 - x2) % P
    return x3, (lam * (x1 - x3) - y1) % P


def oracle_mul(k, pt=G):
    acc = None
    for b in bin(k)[2:]:
        acc = oracle_add(acc, acc)
        if b == "1":
            acc = oracle_add(acc, pt)
    return acc


def to_jacobian(pt, z):
    return pt[0] * z * z % P, pt[1] * pow(z, 3, P) % P, z


def to_affine(X, Y, Z):
    zi = inv(Z)
    return X * zi * zi % P, Y * pow(zi, 3, P) % P


def random_point(rng):
    return oracle_mul(rng.randrange(2, 2**64))


@pytest.fixture(scope="session")
def params():
    return FieldParams.p256()


@pytest.fixture
def rng():
    return random.Random(20240)


def check_pattern(pattern, role, params, rng, trials=1, first=None):
    """True when ``pattern`` agrees with the oracle on ``trials`` random inputs.

    ``role`` is doubling, mixed_add, tripling or special_add. A special addition
    is fed the output of the mixed addition ``first`` and must give (P+Q)+P.
    """
    from atomsca.atomicpat import run_pattern
    for _ in range(trials):
        p1, q, z = random_point(rng), random_point(rng), rng.randrange(2, P)
        X1, Y1, Z1 = to_jacobian(p1, z)
        if role == "doubling":
            o, want = run_pattern(pattern, params, X1=X1, Y1=Y1, Z1=Z1), oracle_add(p1, p1)
        elif role == "mixed_add":
            o = run_pattern(pattern, params, X1=X1, Y1=Y1, Z1=Z1, X2=q[0], Y2=q[1])
            want = oracle_add(p1, q)
        elif role == "tripling":
            o = run_pattern(pattern, params, X1=X1, Y1=Y1, Z1=Z1)
            want = oracle_add(p1, oracle_add(p1, p1))
        else:
            m = run_pattern(first, params, X1=X1, Y1=Y1, Z1=Z1, X2=q[0], Y2=q[1])
            o = run_pattern(pattern, params, X2=m["X3"], Y2=m["Y3"], Z=m["Z3"],
                            X1p=m["X1p"], Y1p=m["Y1p"])
            want = oracle_add(oracle_add(p1, q), p1)
        if o["Z3"] % P == 0 or to_affine(o["X3"], o["Y3"], o["Z3"]) != want:
            return False
    return True


# -- acceptance summary ------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "notes": []})
    if not rep.passed:
        entry["ok"] = False
    entry["notes"].extend(v for k, v in item.user_properties if k == "note" and rep.when == "call")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] else "FAIL"
        line = f"criterion {number:2d}: {status}  {entry['title']}"
        if entry["notes"]:
            line += "  [" + "; ".join(dict.fromkeys(entry["notes"])) + "]"
        terminalreporter.write_line(line)
