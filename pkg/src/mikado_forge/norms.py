"""Lebesgue, Sobolev and Besov norms of discrete fields.

Vector and matrix fields are measured with the pointwise Euclidean
(Frobenius) norm over components.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .spectral_core import (chi, dyadic_blocks, pointwise_product, project_band)


@dataclass(frozen=True)
class NormSpec:
    kind: str  # "Lp", "Hs", "HsDot" or "Besov"
    s: float = 0.0
    p: float = 2.0
    q: float = 2.0
    r: float = 2.0

    def __post_init__(self):
        if self.kind not in ("Lp", "Hs", "HsDot", "Besov"):
            raise ParameterError(f"unknown norm kind {self.kind!r}")
        for v in (self.p, self.q, self.r):
            if not v >= 1:
                raise ParameterError("integrability exponents must be >= 1")

    def __call__(self, f):
        if self.kind == "Lp":
            return lp_norm(f, self.p)
        if self.kind == "Hs":
            return sobolev_norm(f, self.s, homogeneous=False)
        if self.kind == "HsDot":
            return sobolev_norm(f, self.s, homogeneous=True)
        return besov_norm(f, self.s, self.q, self.r)


def pointwise_magnitude(f):
    """|f(x)| on the physical grid (Euclidean over components)."""
    x = f.physical()
    if f.rank == 0:
        return np.abs(x)
    x = x.reshape((-1,) + f.grid.shape)
    return np.sqrt(np.einsum("i...,i...->...", x, x))


def lp_from_samples(mag, p):
    if p == math.inf:
        return float(mag.max())
    if p == 1:
        return float(mag.mean())
    return float(np.mean(mag**p) ** (1.0 / p))


def lp_norm(f, p):
    """L^p over the unit torus: Parseval for p = 2, grid quadrature otherwise.

    p = inf is the maximum over grid samples, a lower bound for the true sup.
    """
    if p < 1:
        raise ParameterError("p must be >= 1")
    if p == 2:
        return f.l2_norm()
    return lp_from_samples(pointwise_magnitude(f), p)


def _energy_density(f):
    a = np.abs(f.coeffs) ** 2
    return a.reshape((-1,) + f.grid.half_shape).sum(axis=0) * f.grid.parseval_weights()


def sobolev_norm(f, s, homogeneous=False):
    """Sobolev norm with weight |m|^{2s} (homogeneous, m != 0) or <m>^{2s}."""
    m2 = f.grid.mode_norm2()
    e = _energy_density(f)
    if homogeneous:
        live = m2 > 0
        return float(np.sqrt(np.sum(e[live] * m2[live] ** s)))
    return float(np.sqrt(np.sum(e * (1.0 + m2) ** s)))


def hs_neg(f, s):
    """Inhomogeneous H^{-s} norm."""
    return sobolev_norm(f, -s, homogeneous=False)


def besov_blocks(f, q):
    """(N, ||P_N f||_{L^q}) for every dyadic block of the grid.

    Blocks carrying no energy are reported as 0 without a transform.
    """
    out = []
    for N, e in _block_energies(f).items():
        out.append((N, lp_norm(project_band(N, f), q) if e > 0 else 0.0))
    return out


def besov_norm(f, s, q, r):
    """(sum_N N^{s r} ||P_N f||_{L^q}^r)^{1/r}; r = inf takes the supremum."""
    if q < 1 or r < 1:
        raise ParameterError("q and r must be >= 1")
    terms = [N**s * v for N, v in besov_blocks(f, q)]
    if r == math.inf:
        return float(max(terms))
    return float(sum(t**r for t in terms) ** (1.0 / r))


def _block_energies(f):
    e = _energy_density(f)
    live = e > 0
    r = np.sqrt(f.grid.mode_norm2()[live])
    e = e[live]
    out = {}
    for N in dyadic_blocks(f.grid):
        sym = chi(r / N) - (chi(2 * r / N) if N > 1 else 0.0)
        out[N] = float(np.sum(e * sym * sym))
    return out


def present_bands(u, rtol=1e-13):
    """Dyadic blocks in which u has non-negligible energy.

    Only the present blocks are projected.
    """
    energy = _block_energies(u)
    top = max(energy.values()) if energy else 0.0
    if top == 0:
        return {}
    keep = [N for N in sorted(energy) if math.sqrt(energy[N]) > rtol * math.sqrt(top)]
    return {N: project_band(N, u) for N in keep}


def paraproduct_audit(u, s, max_padding=2):
    """Table of ||P_N u (x) P_M u||_{H^-s dot} over present band pairs, and their sum."""
    bands = present_bands(u)
    table = []
    for N, bn in bands.items():
        for M, bm in bands.items():
            prod = pointwise_product(bn, bm, max_padding=max_padding)
            table.append((N, M, sobolev_norm(prod, -s, homogeneous=True)))
    total = float(sum(v for _, _, v in table))
    return total, table


def write_audit_csv(path, table):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "M", "value"])
        for N, M, v in table:
            w.writerow([N, M, f"{v:.12e}"])
