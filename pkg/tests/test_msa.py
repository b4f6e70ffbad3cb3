from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom

from dynloc.disorder import DisorderSpec
from dynloc.lattice import GeometryError
from dynloc.msa import (
    MsaParams,
    clopper_pearson,
    deterministic_certificate,
    estimate_m1_probability,
    estimate_m2_probability,
    example3_params,
    k_of_eps,
    lemma44_bound,
    msa_lemma_bound,
    probabilistic_certificate,
    remark23_bound,
    schedule,
)


def test_schedule_values():
    s = schedule(3, 1.5, 3)
    # 3, 3 sqrt(3), 9 * 3^(1/4), 27 * 3^(3/8)
    expected = [3.0, 3 * math.sqrt(3), 9 * math.sqrt(math.sqrt(3)), 27 * 3 ** 0.375]
    np.testing.assert_allclose(s.scales, expected, rtol=1e-14)
    assert s.radius(1) == 6
    with pytest.raises(ValueError):
        schedule(1, 1.5, 3)


@given(st.floats(1e-12, 0.1), st.floats(1.2, 2.0))
@settings(max_examples=60, deadline=None)
def test_k_of_eps_sandwich_log(eps, alpha):
    s = schedule(2, alpha, 5)
    k = k_of_eps(eps, s, nu=1.0)
    assert s.scale(k - 1) <= math.log(1 / eps) < s.scale(k)


@given(st.floats(1e-9, 0.2), st.floats(1.0, 3.0))
@settings(max_examples=60, deadline=None)
def test_k_of_eps_sandwich_algebraic(eps, n):
    s = schedule(1.5, 1.5, 5)
    try:
        k = k_of_eps(eps, s, n=n)
    except ValueError:
        assert 1 / eps <= s.L0**n
        return
    assert s.scale(k - 1) ** n < 1 / eps <= s.scale(k) ** n


def test_k_of_eps_argument_checks():
    s = schedule(2, 1.5, 3)
    with pytest.raises(ValueError):
        k_of_eps(0.1, s)
    with pytest.raises(ValueError):
        k_of_eps(1.5, s, nu=1)


def test_remark23():
    b = remark23_bound(1.5, 1, 9)
    assert b.value == 0.5 and b.hypothesis
    assert not remark23_bound(1.5, 1, 4).hypothesis


def test_params_violations():
    assert not MsaParams(variant="M2", m=6, p=2).hypotheses_hold
    assert MsaParams(variant="M2", m=6, p=5).hypotheses_hold
    assert MsaParams(variant="M1", p=5).hypotheses_hold
    assert MsaParams(rho_kind="algebraic", m=6).threshold(4.0) == pytest.approx(4.0**-3)
    with pytest.raises(ValueError):
        MsaParams(rho_kind="gaussian")


def _cp_oracle(k, n, level):
    """Exact two-sided interval by bisection on the binomial tail."""
    a = (1 - level) / 2

    def solve(f):
        lo, hi = 0.0, 1.0
        for _ in range(200):
            mid = (lo + hi) / 2
            lo, hi = (mid, hi) if f(mid) else (lo, mid)
        return (lo + hi) / 2

    low = 0.0 if k == 0 else solve(lambda p: binom.sf(k - 1, n, p) < a)
    high = 1.0 if k == n else solve(lambda p: binom.cdf(k, n, p) > a)
    return low, high


@pytest.mark.parametrize("k,n", [(0, 10), (3, 10), (10, 10), (481, 500), (500, 500)])
def test_clopper_pearson_against_bisection(k, n):
    np.testing.assert_allclose(clopper_pearson(k, n), _cp_oracle(k, n, 0.95), atol=1e-10)


def test_all_pass_lower_bound_closed_form():
    assert clopper_pearson(500, 500)[0] == pytest.approx(0.025 ** (1 / 500), rel=1e-12)


def test_example3_condition():
    det = deterministic_certificate(example3_params(), 1e4)
    assert det.condition and det.condition_lhs == 82.5 and det.condition_rhs == 60.0


def _chain_holds_float(p, L):
    """Chain bound in plain log arithmetic (float), independent of the mpmath path."""
    a = Fraction(p.alpha).limit_denominator(1000)
    log_ell = (math.log(L) - math.log(p.N)) / float(a)
    log_inner = (1 - 1 / float(a)) * (p.d - 1) * math.log(L) + p.w * math.log(L) - p.m * log_ell
    lhs = (p.S + 1) * math.log(p.c_check) + p.S * math.log(p.c_dN) + p.S * log_inner + p.w * math.log(L)
    return lhs <= -p.m * math.log(L)


def test_smallest_chain_L_against_log_oracle():
    p = example3_params()
    L_star = deterministic_certificate(p, 2.0).smallest_L
    # gap 22.5 from exact rationals, threshold log L = S m log N / gap
    gap = (p.S - Fraction(3, 2)) * 33 - (Fraction(3, 2) * 5 * 8)
    assert gap == Fraction(45, 2)
    assert math.log(L_star) == pytest.approx(p.S * p.m * math.log(p.N) / float(gap), rel=1e-12)
    assert _chain_holds_float(p, L_star * 1.001)
    assert not _chain_holds_float(p, L_star * 0.999)
    ell_star = (L_star / p.N) ** (1 / p.alpha)
    assert deterministic_certificate(p, ell_star * 1.01).passed
    assert not deterministic_certificate(p, ell_star * 0.99).passed


def test_smallest_L_monotone_in_m():
    values = [deterministic_certificate(example3_params(m=m), 2.0).smallest_L for m in (30, 33, 40, 60)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert deterministic_certificate(example3_params(m=20), 2.0).smallest_L is None


def test_probabilistic_certificate_exponents():
    pc = probabilistic_certificate(example3_params(), 10)
    assert pc.wegner_exponent == -6
    assert pc.hypothesis and pc.hypothesis_window == (0.0, 6.0)
    assert pc.L1 == pytest.approx(14 * 10**1.5)
    assert not example3_params(S=3).violations == ()


def test_m2_estimate_threshold_monotone():
    spec = DisorderSpec(half_width=4.0, seed=3, samples=30)
    s = schedule(4, 1.5, 2)
    strict = estimate_m2_probability(MsaParams(m=8), s, 0, 4.5, spec, 30, eps_min=1e-4)
    loose = estimate_m2_probability(MsaParams(m=4), s, 0, 4.5, spec, 30, eps_min=1e-4)
    assert loose.passes >= strict.passes
    for a, b in zip(strict.records, loose.records):
        assert (not a[3]) or b[3]
        assert a[1] == b[1]
    with pytest.raises(GeometryError):
        estimate_m2_probability(MsaParams(), s, 0, 4.5, spec, 5, q=(3,))
    with pytest.raises(ValueError):
        estimate_m2_probability(MsaParams(), s, 0, 4.5, spec, 31)


def test_m1_inclusion():
    spec = DisorderSpec(half_width=4.0, seed=5, samples=20)
    s = schedule(3, 1.5, 1)
    est = estimate_m1_probability(
        MsaParams(variant="M1", m=3), s, 0, np.linspace(4.0, 4.01, 41), ((-4,), (4,)), spec, 20, eps_min=1e-3
    )
    assert est.inclusion_holds
    assert est.gap >= 0


def test_lemma_bounds():
    s = schedule(2, 1.5, 8)
    p = MsaParams(rho_kind="remark23", n=9.0, dim=1)
    r = msa_lemma_bound(s, 1e-3, p, 1.0)
    assert s.scale(r["k"] - 1) ** 9 < 1e3 <= s.scale(r["k"]) ** 9
    assert r["bound"] >= s.scale(r["k"]) ** 3
    lat = msa_lemma_bound(s, 1e-3, p, 1.0, lattice_form=True)
    assert lat["k"] == r["k"]
    with pytest.raises(ValueError):
        msa_lemma_bound(s, 1e-3, MsaParams(), 1.0)
    b = lemma44_bound(schedule(2, 1.5, 12), 1e-6, 2.0, 2, 1.0)
    assert b["upsilon"] == pytest.approx(min(2.0 * 1.5**-3, 1 - 2 * 1.5**-2))
    s12 = schedule(2, 1.5, 12)
    assert s12.scale(b["J"]) < 1e6 <= s12.scale(b["J"] + 1)
