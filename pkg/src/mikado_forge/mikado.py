"""Mikado building blocks: thin periodic tubes around rational lines.

For each direction k of a catalogue, psi_k is a radial profile of the
distance to the periodic line through p_k with direction k, concentrated at
scale 1/mu. W_k = psi_k k is a stationary pressureless Euler flow and
Omega_k = k (x) grad Lap^{-1} psi_k - grad Lap^{-1} psi_k (x) k is an
antisymmetric potential with Div Omega_k = W_k.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import ParameterError, ResolutionError
from .spectral_core import (SpectralField, TorusGrid, derivative_symbol,
                            dilate, forward_transform, inverse_laplacian_symbol)


def _bump(t):
    """Standard smooth bump on (0, 1), equal to 1 at t = 1/2."""
    t = np.asarray(t, dtype=float)
    s = 2.0 * t - 1.0
    out = np.zeros_like(t)
    inside = np.abs(s) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def eta(r):
    return _bump((np.asarray(r, dtype=float) - 0.5) / 0.5)


def tau(r):
    return eta(r) ** 3


@dataclass(frozen=True)
class TubeProfile:
    """psi = eta - (I_eta / I_tau) tau with vanishing moment against r^{d-2}."""
    d: int
    ratio: float

    @classmethod
    def for_dimension(cls, d):
        w = lambda r: r ** (d - 2)
        i_eta = integrate.quad(lambda r: eta(r) * w(r), 0.5, 1.0, epsabs=1e-15)[0]
        i_tau = integrate.quad(lambda r: tau(r) * w(r), 0.5, 1.0, epsabs=1e-15)[0]
        return cls(d, i_eta / i_tau)

    def __call__(self, r):
        return eta(r) - self.ratio * tau(r)

    def moment(self):
        return integrate.quad(lambda r: self(r) * r ** (self.d - 2), 0.5, 1.0,
                              epsabs=1e-14, limit=200)[0]


def torus_line_distance(k, p, x):
    """Distance on T^d from points x (..., d) to the line {p + t k}.

    Minimum over integer translates z with |z|_inf <= ceil(1 + |k|).
    """
    k = np.asarray(k, dtype=float)
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    d = k.size
    khat = k / np.linalg.norm(k)
    Z = int(math.ceil(1.0 + np.linalg.norm(k)))
    y0 = x - p
    best = np.full(x.shape[:-1], np.inf)
    rng = range(-Z, Z + 1)
    for z in np.array(np.meshgrid(*[rng] * d, indexing="ij")).reshape(d, -1).T:
        y = y0 - z
        along = y @ khat
        dist2 = np.einsum("...i,...i->...", y, y) - along**2
        np.minimum(best, dist2, out=best)
    return np.sqrt(np.maximum(best, 0.0))


def mu_min(catalog):
    return 4.0 * max(np.linalg.norm(k) for k in catalog.directions)


def required_grid(catalog, mu):
    """Smallest even grid that resolves the tubes: G >= 8 mu max|k|."""
    need = 8.0 * mu * max(np.linalg.norm(k) for k in catalog.directions)
    # mu = mu_min gives need = 64 up to rounding; do not let 64 + 1ulp round up
    G = int(math.ceil(need * (1.0 - 1e-12)))
    return G + (G % 2)


def _line_samples(catalog, idx, mu, grid, profile, chunk=1 << 18):
    """Samples of profile(mu * dist(x, line)) that are exactly constant along k.

    Every grid point is moved along k to the hyperplane x_j = 0 of an axis
    with k_j = +-1; the profile is evaluated once per discrete line.
    """
    k = catalog.directions[idx]
    p = catalog.offsets[idx]
    G, d = grid.G, grid.d
    unit = [j for j, c in enumerate(k) if abs(c) == 1]
    if not unit:
        raise ParameterError(f"direction {k} has no unit component")
    j = unit[0]
    # values on the hyperplane i_j = 0
    free = [a for a in range(d) if a != j]
    plane = np.stack(np.meshgrid(*[np.arange(G)] * (d - 1), indexing="ij"),
                     axis=-1).reshape(-1, d - 1)
    pts = np.zeros((plane.shape[0], d))
    pts[:, free] = plane / G
    vals = np.empty(plane.shape[0])
    for s in range(0, pts.shape[0], chunk):
        vals[s:s + chunk] = profile(mu * torus_line_distance(k, p, pts[s:s + chunk]))
    vals = vals.reshape((G,) * (d - 1))
    # gather: canonical point of index i is i - (i_j k_j) k mod G
    idx_grid = np.meshgrid(*[np.arange(G)] * d, indexing="ij")
    t = idx_grid[j] * k[j]
    canon = [(idx_grid[a] - t * k[a]) % G for a in free]
    return vals[tuple(canon)]


@dataclass
class MikadoFamily:
    """Normalised tube profiles psi_k sampled on ``base_grid``.

    ``gamma`` records the rescaling x -> gamma x: the fields on ``grid``
    (``grid.G = gamma * base_grid.G``) are psi_k(gamma x).
    """
    catalog: object
    mu: float
    base_grid: TorusGrid
    gamma: int
    profile: TubeProfile
    psi_base: list
    c: list
    raw_means: list

    @property
    def grid(self):
        return TorusGrid(self.base_grid.d, self.base_grid.G * self.gamma)

    def __len__(self):
        return len(self.psi_base)

    def psi(self, i):
        f = self.psi_base[i]
        return f if self.gamma == 1 else dilate(f, self.gamma)

    def psi_physical(self, i):
        """Samples of psi_k(gamma x) on the fine grid, by periodic tiling."""
        base = self.psi_base[i].physical()
        return np.tile(base, (self.gamma,) * self.base_grid.d) if self.gamma > 1 else base

    def W(self, i):
        k = self.catalog.k(i)
        p = self.psi(i)
        return SpectralField(p.grid, k.reshape((-1,) + (1,) * p.grid.d) * p.coeffs)

    def potential(self, i):
        """grad Lap^{-1} psi_k."""
        p = self.psi(i)
        g = p.grid
        L = inverse_laplacian_symbol(g)
        return SpectralField(g, np.stack([derivative_symbol(g, j) * L * p.coeffs
                                          for j in range(g.d)]))

    def Omega(self, i):
        return antisym_potential(self.catalog.k(i), self.potential(i))

    def manifest(self):
        return json.dumps({
            "mu": self.mu,
            "gamma": self.gamma,
            "base_G": self.base_grid.G,
            "c_k": [float(c) for c in self.c],
            "raw_means": [float(m) for m in self.raw_means],
            "profile_ratio": self.profile.ratio,
        }, indent=2, sort_keys=True)


def antisym_potential(k, v):
    """k (x) v - v (x) k for a constant vector k and a vector field v."""
    d = v.grid.d
    c = np.empty((d, d) + v.grid.half_shape, complex)
    for i in range(d):
        c[i, i] = 0.0
        for j in range(i + 1, d):
            a = k[i] * v.coeffs[j] - v.coeffs[i] * k[j]
            c[i, j] = a
            c[j, i] = -a
    return SpectralField(v.grid, c)


def build_family(catalog, mu, grid, gamma=1, check_resolution=True):
    """Normalised Mikado family on ``grid`` for the rescaled profiles psi_k(gamma x).

    The profiles are sampled on the base grid G / gamma; mean subtraction,
    removal of Nyquist content, and the choice of c_k make mean(psi_k) = 0 and
    mean(psi_k^2) = 1 exact up to rounding.
    """
    gamma = int(gamma)
    if grid.G % gamma:
        raise ParameterError("gamma must divide the grid size")
    if mu < mu_min(catalog) - 1e-12:
        raise ParameterError(f"mu={mu} below the embedding bound {mu_min(catalog)}")
    base = TorusGrid(grid.d, grid.G // gamma)
    need = required_grid(catalog, mu)
    if check_resolution and base.G < need:
        raise ResolutionError(
            f"base grid {base.G} cannot resolve mu={mu}; need >= {need} "
            f"(full grid {need * gamma})", required_G=need * gamma)
    profile = TubeProfile.for_dimension(grid.d)
    psi, cs, means = [], [], []
    scale = mu ** ((grid.d - 1) / 2)
    for i in range(len(catalog)):
        raw = _line_samples(catalog, i, mu, base, profile)
        f = forward_transform(base, raw)
        c = np.array(f.coeffs)
        means.append(float(c[(0,) * grid.d].real))
        c[(0,) * grid.d] = 0.0
        c[base.nyquist_mask()] = 0.0
        energy = float(np.sum(np.abs(c) ** 2 * base.parseval_weights()))
        norm = 1.0 / math.sqrt(energy)
        c *= norm
        psi.append(SpectralField(base, c))
        cs.append(norm / scale)
    return MikadoFamily(catalog, float(mu), base, gamma, profile, psi, cs, means)
