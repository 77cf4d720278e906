"""Direction catalogue for decomposing near-identity symmetric matrices.

A symmetric matrix R close to the identity is written as
R = sum_k Gamma_k(R)^2 k (x) k over a fixed set of lattice directions. The
squares Gamma_k^2 are affine in the entries of R: every off-diagonal pair
(i, j) is carried by the directions e_i + e_j and e_i - e_j, which share a
fixed budget beta0 on the diagonal, and the axis directions take what is
left of each diagonal entry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DomainError, ParameterError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# pair budget per dimension; the admissible interval is
# (rho_dom, (1 - rho_dom) / (d - 1)) for the ball of radius rho_dom
BETA0 = {2: Fraction(3, 8), 3: Fraction(5, 16)}
RHO_DOM = Fraction(1, 4)


@dataclass(frozen=True)
class DirectionCatalog:
    d: int
    directions: tuple  # tuple of integer tuples
    perpendiculars: tuple
    offsets: np.ndarray = field(compare=False)
    beta0: Fraction
    rho_dom: Fraction
    margin: Fraction  # analytic lower bound of min Gamma_k^2 on the domain
    sampled_margin: float

    def __len__(self):
        return len(self.directions)

    def k(self, i):
        return np.array(self.directions[i], dtype=float)

    def kperp(self, i):
        return np.array(self.perpendiculars[i], dtype=float)

    @property
    def c_lambda_sq(self):
        """(prod |k_perp|)^2 as an exact integer."""
        out = 1
        for p in self.perpendiculars:
            out *= sum(c * c for c in p)
        return out

    def to_json(self):
        return json.dumps({
            "d": self.d,
            "directions": [list(k) for k in self.directions],
            "perpendiculars": [list(p) for p in self.perpendiculars],
            "offsets": [[float(x) for x in p] for p in self.offsets],
            "beta0": str(self.beta0),
            "rho_dom": str(self.rho_dom),
            "margin": str(self.margin),
            "sampled_margin": self.sampled_margin,
        }, indent=2, sort_keys=True)


def _directions(d):
    axes = [tuple(int(i == j) for j in range(d)) for i in range(d)]
    plus, minus = [], []
    for i in range(d):
        for j in range(i + 1, d):
            e = [0] * d
            e[i], e[j] = 1, 1
            plus.append(tuple(e))
            e = [0] * d
            e[i], e[j] = 1, -1
            minus.append(tuple(e))
    if d == 2:
        dirs = axes + plus + minus
    else:
        dirs = axes + [v for pair in zip(plus, minus) for v in pair]
    return dirs


def _perpendicular(k):
    d = len(k)
    nz = [i for i, c in enumerate(k) if c != 0]
    if len(nz) == 1:
        i = nz[0]
        # d = 2: e_1 <-> e_2; d = 3: cyclic successor
        j = (i + 1) % d
        return tuple(int(t == j) for t in range(d))
    i, j = nz
    out = [0] * d
    out[i] = k[i]
    out[j] = -k[j]
    return tuple(out)


def _offsets(n, d):
    out = np.empty((n, d))
    for idx in range(n):
        for c in range(d):
            out[idx, c] = (GOLDEN ** (c + 1) * (idx + 1)) % 1.0
    return out


def _affine_rows(directions, beta0):
    """Return (A, b) with Gamma^2 = A @ vec(R) + b, vec over (i <= j) entries."""
    d = len(directions[0])
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    A = [[Fraction(0)] * len(pairs) for _ in directions]
    b = [Fraction(0)] * len(directions)
    for n, k in enumerate(directions):
        nz = [i for i, c in enumerate(k) if c != 0]
        if len(nz) == 1:
            i = nz[0]
            A[n][pairs.index((i, i))] = Fraction(1)
            b[n] = -(d - 1) * beta0
        else:
            i, j = nz
            sign = k[i] * k[j]
            A[n][pairs.index((i, j))] = Fraction(sign, 2)
            b[n] = beta0 / 2
    return pairs, A, b


def _span_rank(directions):
    d = len(directions[0])
    rows = []
    for k in directions:
        rows.append([k[i] * k[j] for i in range(d) for j in range(i, d)])
    return np.linalg.matrix_rank(np.array(rows, dtype=float))


def _ball_samples(d, n, radius, rng):
    """Symmetric matrices uniformly spread in the operator-norm ball around I."""
    out = []
    while len(out) < n:
        A = rng.uniform(-1, 1, size=(d, d))
        A = (A + A.T) / 2
        r = np.abs(np.linalg.eigvalsh(A)).max()
        if r == 0:
            continue
        t = rng.uniform(0, 1) ** (1.0 / (d * (d + 1) / 2))
        out.append(np.eye(d) + A / r * radius * t)
    return np.array(out)


def build_catalog(d):
    if d not in (2, 3):
        raise ParameterError(f"unsupported dimension d={d}")
    directions = _directions(d)
    perps = [_perpendicular(k) for k in directions]
    for k, p in zip(directions, perps):
        dot = sum(a * b for a, b in zip(k, p))
        if dot != 0 or sum(c * c for c in p) > sum(c * c for c in k):
            raise AssertionError(f"bad perpendicular {p} for {k}")
    if _span_rank(directions) != d * (d + 1) // 2:
        raise AssertionError("directions do not span the symmetric matrices")
    beta0 = BETA0[d]
    rho = RHO_DOM
    # exact lower bounds: axes >= 1 - rho - (d-1) beta0, pairs >= (beta0 - rho) / 2
    margin = min(1 - rho - (d - 1) * beta0, (beta0 - rho) / 2)
    if margin <= 0:
        raise AssertionError("pair budget leaves no positivity margin")
    offsets = _offsets(len(directions), d)
    _check_offsets(directions, offsets)
    cat = DirectionCatalog(d, tuple(directions), tuple(perps), offsets, beta0, rho,
                           margin, 0.0)
    samples = _ball_samples(d, 2000, float(rho), np.random.default_rng(12345))
    sq = gamma_squares(cat, samples)
    sampled = float(sq.min())
    if sampled < float(margin) - 1e-12:
        raise AssertionError("sampled margin below the analytic bound")
    return DirectionCatalog(d, tuple(directions), tuple(perps), offsets, beta0, rho,
                            margin, sampled)


def _check_offsets(directions, offsets):
    dirs = [tuple(k) for k in directions]
    for i, k in enumerate(dirs):
        neg = tuple(-c for c in k)
        if neg in dirs:
            j = dirs.index(neg)
            from .mikado import torus_line_distance
            if torus_line_distance(k, offsets[j], offsets[i]) < 1e-9:
                raise AssertionError("offset lies on the opposite line")
    if len({tuple(np.round(p, 12)) for p in offsets}) != len(offsets):
        raise AssertionError("offsets are not distinct")


def gamma_squares(catalog, R, check=True, atol=1e-12):
    """Gamma_k(R)^2 for a matrix or an array of matrices (..., d, d)."""
    R = np.asarray(R, dtype=float)
    d = catalog.d
    if R.shape[-2:] != (d, d):
        raise ParameterError(f"expected (..., {d}, {d}) matrices")
    if check:
        dev = R - np.eye(d)
        dev = (dev + np.swapaxes(dev, -1, -2)) / 2
        # the Frobenius norm bounds the operator norm; refine only where needed
        frob = np.sqrt(np.sum(dev * dev, axis=(-2, -1)))
        bad = frob > float(catalog.rho_dom) + atol
        opn = np.abs(np.linalg.eigvalsh(dev[bad])).max(axis=-1) if np.any(bad) else 0.0
        if np.any(opn > float(catalog.rho_dom) + atol):
            raise DomainError(
                f"matrix at operator distance {np.max(opn):.6g} from I exceeds "
                f"{float(catalog.rho_dom)}")
    beta0 = float(catalog.beta0)
    out = np.empty(R.shape[:-2] + (len(catalog),))
    for n, k in enumerate(catalog.directions):
        nz = [i for i, c in enumerate(k) if c != 0]
        if len(nz) == 1:
            i = nz[0]
            out[..., n] = R[..., i, i] - (d - 1) * beta0
        else:
            i, j = nz
            out[..., n] = (beta0 + k[i] * k[j] * R[..., i, j]) / 2
    return out


def gamma_coefficients(catalog, R, check=True):
    return np.sqrt(gamma_squares(catalog, R, check=check))


def gamma_squares_exact(catalog, R):
    """Exact rational Gamma_k^2 for a matrix of Fractions (reassembly oracle)."""
    d = catalog.d
    pairs, A, b = _affine_rows(list(catalog.directions), catalog.beta0)
    vec = [Fraction(R[i][j]) for i, j in pairs]
    return [sum(a * v for a, v in zip(row, vec)) + bb for row, bb in zip(A, b)]


def reassemble(catalog, squares):
    """sum_k squares_k k (x) k for an array (..., |Lambda|)."""
    K = np.array(catalog.directions, dtype=float)
    return np.einsum("...n,ni,nj->...ij", squares, K, K)


def lipschitz_bound(catalog):
    """Bound on the Lipschitz constant of Gamma_k over the domain (diagnostic).

    Gamma = sqrt(x) with x affine of slope at most 1 in R, so
    |grad Gamma| <= 1 / (2 sqrt(margin)).
    """
    return 1.0 / (2.0 * math.sqrt(float(catalog.margin)))
