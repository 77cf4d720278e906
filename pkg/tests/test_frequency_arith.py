import csv
import math
from decimal import Decimal, getcontext
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from mikado_forge.errors import ParameterError
from mikado_forge.frequency_arith import (audit_parameters, ceil_sqrt, check_plan, select_sigma,
                                          theta_to_e, write_audit_csv)
from mikado_forge.nash_geometry import build_catalog

getcontext().prec = 80


@pytest.fixture(scope="module")
def cat2():
    return build_catalog(2)


def brute_force_sigma(lam, e, catalog):
    """Linear scan over b with 80-digit decimals; independent of the integer route."""
    c = Decimal(catalog.c_lambda_sq).sqrt()
    norms = [Decimal(sum(x * x for x in p)).sqrt() for p in catalog.perpendiculars]
    b = 45 * lam**e
    while True:
        lo, hi = Decimal(11) / 9 * b * c, Decimal(9) / 5 * b * c
        j = int(lo.ln() / Decimal(2).ln())
        for sigma in (2**j, 2 ** (j + 1), 2 ** (j + 2)):
            if lo < sigma < hi and sigma > 50 * lam**e:
                sk = [int((b * c / n).to_integral_value(rounding="ROUND_CEILING")) for n in norms]
                ok = all(Decimal(sigma) / 2 + 2 * lam < s * n < Decimal(9 * sigma) / 10 - 2 * lam
                         for s, n in zip(sk, norms))
                if ok:
                    return b, sigma, tuple(sk)
        b += 1


FROZEN = {
    (2, 4): (720, 2048, (1440, 1440, 1019, 1019)),
    (4, 4): (11520, 32768, (23040, 23040, 16292, 16292)),
    (16, 4): (2949120, 8388608, (5898240, 5898240, 4170686, 4170686)),
    (2, 1): (90, 256, (180, 180, 128, 128)),
    (4, 1): (180, 512, (360, 360, 255, 255)),
    (16, 1): (720, 2048, (1440, 1440, 1019, 1019)),
}


@pytest.mark.parametrize("lam,e", sorted(FROZEN))
def test_select_sigma_frozen(cat2, lam, e):
    plan = select_sigma(lam, e, cat2)
    assert (plan.b, plan.sigma, plan.sigma_k) == FROZEN[(lam, e)]
    assert all(check_plan(plan).values())


@pytest.mark.parametrize("lam,e", [(2, 1), (4, 1), (2, 4), (16, 1)])
def test_select_sigma_oracle(cat2, lam, e):
    assert brute_force_sigma(lam, e, cat2) == FROZEN[(lam, e)]


def test_select_sigma_d3():
    cat = build_catalog(3)
    plan = select_sigma(4, 2, cat)
    assert all(check_plan(plan).values())
    assert (plan.b, plan.sigma, plan.sigma_k) == brute_force_sigma(4, 2, cat)


def test_select_sigma_errors(cat2):
    with pytest.raises(ParameterError):
        select_sigma(3, 2, cat2)
    with pytest.raises(ParameterError):
        select_sigma(4, 0, cat2)


def test_ceil_sqrt_and_e():
    assert ceil_sqrt(0) == 0
    assert ceil_sqrt(16) == 4
    assert ceil_sqrt(17) == 5
    assert ceil_sqrt(Fraction(9, 4)) == 2
    assert ceil_sqrt(Fraction(1, 100)) == 1
    assert theta_to_e(Fraction(1, 2)) == 4
    assert theta_to_e(0.3) == 8
    with pytest.raises(ParameterError):
        theta_to_e(1)


@given(q=st.fractions(min_value=0, max_value=10**12, max_denominator=10**6))
def test_ceil_sqrt_property(q):
    t = ceil_sqrt(q)
    assert t * t >= q
    assert t == 0 or (t - 1) ** 2 < q


def test_audit_all_pass(cat2, tmp_path):
    rows, info = audit_parameters(4**6, Fraction(3, 2), Fraction(1, 2), 2, 1, cat2)
    assert all(r.passed for r in rows)
    assert all(info["plan_checks"].values())
    assert info["mu"] == 8 and info["gamma"] == 64
    assert info["eps"] == Fraction(1, 24) and info["beta"] == Fraction(1, 4)
    for r in rows:
        assert (r.slack >= 0) == r.passed
    path = tmp_path / "audit.csv"
    write_audit_csv(path, rows, info)
    lines = list(csv.reader(open(path)))
    assert lines[0][0].startswith("#")
    assert len(lines) == 1 + len(rows) + len(info["plan_checks"])


@pytest.mark.parametrize("lam", [4, 16, 4**3])
def test_audit_scale_free(cat2, lam):
    # every exponent is a multiple of log2 lambda, so the verdicts do not depend on it
    rows, _ = audit_parameters(lam, Fraction(3, 2), Fraction(1, 2), 2, 1, cat2)
    ref, _ = audit_parameters(4**6, Fraction(3, 2), Fraction(1, 2), 2, 1, cat2)
    assert [r.passed for r in rows] == [r.passed for r in ref]


def test_audit_errors(cat2):
    with pytest.raises(ParameterError):
        audit_parameters(8, Fraction(3, 2), Fraction(1, 2), 2, 1, cat2)
    with pytest.raises(ParameterError):
        audit_parameters(16, Fraction(5, 2), Fraction(1, 2), 2, 1, cat2)
