"""Exact integer arithmetic for the frequency plan and parameter audit.

All verdicts are decided in integer or rational arithmetic. Irrational
lengths |k_perp| only ever appear squared.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction

from .errors import ParameterError
from .spectral_core import is_dyadic


def ceil_sqrt(q):
    """Smallest integer t >= 0 with t^2 >= q, for a nonnegative rational q."""
    q = Fraction(q)
    if q < 0:
        raise ParameterError("negative argument")
    t = math.isqrt(q.numerator // q.denominator)
    while t * t < q:
        t += 1
    while t > 0 and (t - 1) ** 2 >= q:
        t -= 1
    return t


def theta_to_e(theta):
    """e = 2 ceil(1/theta), computed exactly for rational theta."""
    theta = Fraction(str(theta)) if not isinstance(theta, Fraction) else theta
    if not 0 < theta < 1:
        raise ParameterError("theta must lie in (0, 1)")
    return 2 * math.ceil(1 / theta)


@dataclass(frozen=True)
class FrequencyPlan:
    lam: int
    e: int
    c_lambda_sq: int
    b: int
    sigma: int
    sigma_k: tuple
    kperp_sq: tuple

    @property
    def annulus(self):
        return (Fraction(self.sigma, 2), Fraction(9 * self.sigma, 10))

    @property
    def c_lambda(self):
        return math.sqrt(self.c_lambda_sq)

    def carriers(self, catalog):
        """sigma_k k_perp for each direction, as integer tuples."""
        return [tuple(s * c for c in p) for s, p in zip(self.sigma_k, catalog.perpendiculars)]

    def to_json(self):
        out = asdict(self)
        out["annulus"] = [str(a) for a in self.annulus]
        return json.dumps(out, indent=2, sort_keys=True)


def _interval_contains(b, c2, sigma):
    """(11/9) b c < sigma < (9/5) b c with c = sqrt(c2), squared exactly."""
    return 121 * b * b * c2 < 81 * sigma * sigma and 25 * sigma * sigma < 81 * b * b * c2


def _containment(sigma, lam, sk, n2):
    """B(sigma_k k_perp, 2 lam) inside the open annulus (sigma/2, 9 sigma/10).

    With r = sigma_k |k_perp|: r - 2 lam > sigma/2 and r + 2 lam < 9 sigma/10.
    """
    r2 = sk * sk * n2
    inner = Fraction(sigma, 2) + 2 * lam
    outer = Fraction(9 * sigma, 10) - 2 * lam
    return outer > 0 and r2 > inner * inner and r2 < outer * outer


def check_plan(plan):
    """Every invariant of a plan, each decided exactly."""
    lam, e = plan.lam, plan.e
    out = {
        "sigma_gt_50_lam_e": plan.sigma > 50 * lam**e,
        "b_ge_45_lam_e": plan.b >= 45 * lam**e,
        "sigma_dyadic": is_dyadic(plan.sigma),
        "interval": _interval_contains(plan.b, plan.c_lambda_sq, plan.sigma),
    }
    for i, (sk, n2) in enumerate(zip(plan.sigma_k, plan.kperp_sq)):
        out[f"containment_{i}"] = _containment(plan.sigma, lam, sk, n2)
        # sigma_k = ceil(b c / |k_perp|)
        out[f"sigma_k_{i}"] = sk == ceil_sqrt(Fraction(plan.b**2 * plan.c_lambda_sq, n2))
    return out


def select_sigma(lam, e, catalog, max_iter=10_000):
    """Smallest b >= ceil(45 lam^e) whose interval ((11/9)bc, (9/5)bc) holds a power of 2.

    Candidates are visited power by power: for sigma = 2^j the admissible b
    form an interval, so the first b found equals the result of a linear
    scan upward from the start value.
    """
    if not is_dyadic(lam) or lam < 2:
        raise ParameterError(f"lambda must be dyadic and >= 2, got {lam}")
    lam = int(lam)
    e = int(e)
    if e < 1:
        raise ParameterError("exponent e must be >= 1")
    c2 = catalog.c_lambda_sq
    n2s = tuple(sum(c * c for c in p) for p in catalog.perpendiculars)
    b0 = 45 * lam**e
    # first power of two above (11/9) b0 c
    j = 1
    while not 121 * b0 * b0 * c2 < 81 * (2**j) ** 2:
        j += 1
    for _ in range(max_iter):
        sigma = 2**j
        # admissible b for this sigma: 25 sigma^2 < 81 b^2 c2 and 121 b^2 c2 < 81 sigma^2
        b = max(b0, ceil_sqrt(Fraction(25 * sigma * sigma, 81 * c2)))
        while 121 * b * b * c2 < 81 * sigma * sigma:
            if _interval_contains(b, c2, sigma):
                sk = tuple(ceil_sqrt(Fraction(b * b * c2, n2)) for n2 in n2s)
                plan = FrequencyPlan(lam, e, c2, b, sigma, sk, n2s)
                if all(check_plan(plan).values()):
                    return plan
            b += 1
        j += 1
    raise ParameterError("frequency search exceeded its iteration cap")


# parameter audit

def _frac(x):
    return x if isinstance(x, Fraction) else Fraction(str(x))


@dataclass(frozen=True)
class AuditRow:
    ident: str
    lhs_log2: Fraction
    rhs_log2: Fraction
    passed: bool

    @property
    def lhs(self):
        return 2.0 ** float(self.lhs_log2)

    @property
    def rhs(self):
        return 2.0 ** float(self.rhs_log2)

    @property
    def slack(self):
        """log2(rhs / lhs); nonnegative iff the inequality holds."""
        return float(self.rhs_log2 - self.lhs_log2)


def besov_parameters(lam, p, d, alpha):
    """Exponents (as log2 of powers of lambda) of the Besov step parameters."""
    p = _frac(p)
    eps = (2 - p) / 12
    beta = p / (6 * (d - 1))
    s = Fraction(d, 2) + 2 * _frac(alpha) + 1
    return eps, beta, s


def audit_parameters(lam, p, theta, d, alpha, catalog=None):
    """Evaluate each displayed inequality chain of the parameter lemma.

    All quantities are powers of two when lambda = 4^j, so each comparison is
    an exact comparison of rational base-2 exponents.
    """
    lam = int(lam)
    if lam < 4 or not is_dyadic(lam) or (lam.bit_length() - 1) % 2:
        raise ParameterError(f"lambda must be a power of 4, got {lam}")
    p = _frac(p)
    theta = _frac(theta)
    alpha = _frac(alpha)
    if not 1 < p < 2:
        raise ParameterError("p must lie in (1, 2)")
    if 1 / p - Fraction(1, 2) > Fraction(1, d - 1):
        raise ParameterError("1/p - 1/2 must not exceed 1/(d-1)")
    if catalog is None:
        from .nash_geometry import build_catalog
        catalog = build_catalog(d)
    e = theta_to_e(theta)
    eps, beta, s = besov_parameters(lam, p, d, alpha)
    L = Fraction(lam.bit_length() - 1)  # log2 lambda
    mu = beta * L
    gamma = L / 2
    plan = select_sigma(lam, e, catalog)
    sg = Fraction(plan.sigma.bit_length() - 1)
    tube = Fraction(d - 1, 2) * mu  # log2 mu^{(d-1)/2}
    target = -eps * L
    rows = []

    def chain(name, terms):
        for a, (lname, lhs), (rname, rhs) in zip(range(len(terms) - 1), terms[:-1], terms[1:]):
            rows.append(AuditRow(f"{name}:{lname}<={rname}", lhs, rhs, lhs <= rhs))

    chain("mu", [("gamma^-1", -gamma), ("mu^-1", -mu), ("lambda^-eps", target)])
    chain("lp", [("mu^((d-1)(1/2-1/p))", (d - 1) * (Fraction(1, 2) - 1 / p) * mu),
                 ("lambda^-eps", target)])
    chain("loc", [("lambda^-1 gamma mu", -L + gamma + mu),
                  ("lambda^-1 gamma mu^(1+(d-1)/2)", -L + gamma + mu + tube),
                  ("lambda^-eps", target)])
    chain("gamma_s", [("gamma^-s mu^((d-1)/2)", -s * gamma + tube), ("lambda^-eps", target)])
    chain("sigma", [("sigma^-s mu^((d-1)/2)", -s * sg + tube),
                    ("sigma^-1 mu^((d-1)/2)", -sg + tube),
                    ("sigma^-theta mu^((d-1)/2)", -theta * sg + tube),
                    ("lambda^-eps", target)])
    info = {"lambda": lam, "e": e, "eps": eps, "beta": beta, "s": s,
            "mu": 2.0 ** float(mu), "gamma": 2.0 ** float(gamma), "sigma": plan.sigma,
            "plan": plan, "plan_checks": check_plan(plan)}
    return rows, info


def write_audit_csv(path, rows, info):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["# inequality id", "lhs (dimensionless)", "rhs (dimensionless)",
                    "slack log2(rhs/lhs)", "verdict (exact)"])
        for r in rows:
            w.writerow([r.ident, f"{r.lhs:.12e}", f"{r.rhs:.12e}", f"{r.slack:.12e}",
                        "pass" if r.passed else "fail"])
        for key, ok in info["plan_checks"].items():
            w.writerow([f"plan:{key}", "", "", "", "pass" if ok else "fail"])
