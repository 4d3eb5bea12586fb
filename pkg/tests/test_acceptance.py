"""The thirteen acceptance criteria at their pinned sizes.

Each test runs one criterion once (cached per session), prints its
one-line verdict and then re-checks the pinned tolerance against the raw
numbers the criterion reports, independently of its own pass flag.
"""

import math

import pytest

from msle.acceptance import CRITERIA

pytestmark = pytest.mark.acceptance

LINES: dict = {}
_CACHE: dict = {}


def result(n):
    if n not in _CACHE:
        import time

        t = time.perf_counter()
        c = CRITERIA[n](scale="full", seed=0, workers=None)
        c.seconds = time.perf_counter() - t
        _CACHE[n] = c
        LINES[n] = f"{c.line()}  ({c.seconds:.1f}s)"
        print(LINES[n])
    return _CACHE[n]


def test_01_positivity_and_ordering():
    c = result(1)
    assert c.detail["bessel_paths"] == 3 * 10_000 and c.detail["dyson_paths"] == 2 * 1000
    assert c.detail["nonpositive"] == 0 and c.detail["unordered"] == 0
    assert c.passed


def test_02_besq_moment():
    c = result(2)
    assert c.detail["target"] == 4.0
    assert abs(c.detail["mean"] - 4.0) <= 3.0 * c.detail["se"]
    assert c.passed


def test_03_infimum_law():
    c = result(3)
    assert c.detail["n"] == 10_000 and c.detail["t_long"] == 100.0
    assert c.detail["ks"] < 0.02
    assert c.passed


def test_04_separation_identity():
    c = result(4)
    assert c.detail["limit"] == pytest.approx(1e-2 * 0.1)
    assert c.detail["max_residual"] < 1e-3
    assert 1.5 <= c.detail["min_ratio"] and c.detail["max_ratio"] <= 2.5
    assert c.passed


def test_05_initial_value_bounds():
    c = result(5)
    assert c.detail["paths"] == 1000
    assert c.detail["separation_violations"] == 0
    assert c.detail["caratheodory_violations"] == 0
    assert c.passed


def test_06_diffusivity_lemma():
    c = result(6)
    assert c.detail["paths"] == 1000
    assert c.detail["violations"] == 0
    assert c.passed


def test_07_diffusivity_tail():
    c = result(7)
    d = c.detail
    assert d["paths"] == 1000
    assert not d["vacuous"] and d["zeta"] < 1
    assert d["deviation_freq"] <= d["zeta"] + 2 * d["deviation_se"]
    p = d["E1_pred"]
    se = math.sqrt(max(p * (1 - p), 1e-12) / d["paths"])
    assert abs(d["E1_freq"] - p) <= 3 * se
    assert c.passed


def test_08_round_trip():
    c = result(8)
    assert c.detail["points"] + c.detail["excluded_swallowed"] == 20 * 100
    assert c.detail["max_residual"] < 1e-4
    assert c.passed


def test_09_capacity():
    c = result(9)
    assert c.detail["max_rel_error"] < 0.05
    assert c.passed


def test_10_backward_lipschitz():
    c = result(10)
    assert c.detail["paths"] == 100 and c.detail["violations"] == 0
    assert c.passed


def test_11_hausdorff():
    c = result(11)
    d = c.detail
    assert d["checked"] + d["excluded_unverified"] == 50
    assert d["checked"] > 0 and d["violations"] == 0
    assert c.passed


def test_12_koebe():
    c = result(12)
    assert c.detail["maps"] == 11 and c.detail["violations"] == 0
    assert c.passed


def test_13_determinism():
    c = result(13)
    assert c.detail["mismatched"] == 0
    assert c.passed
