"""Sparse Fourier series on the full integer lattice.

A ``SparseSeries`` holds coefficients at a finite set of lattice points,
stored as an (n, d) integer array and an (n, ...) complex array. Products
of band-limited fields are exact convolutions of such series; they are
converted to the half-spectrum layout of a grid only at the end.
"""

from __future__ import annotations

import numpy as np

from ..errors import ResolutionError
from ..spectral_core import SpectralField


class SparseSeries:
    __slots__ = ("points", "values")

    def __init__(self, points, values):
        self.points = np.asarray(points, dtype=np.int64)
        self.values = np.asarray(values, dtype=complex)

    def __len__(self):
        return self.points.shape[0]

    def scaled(self, c):
        return SparseSeries(self.points, self.values * c)

    def shifted(self, xi):
        return SparseSeries(self.points + np.asarray(xi, dtype=np.int64), self.values)

    def combine(self, other):
        pts = np.concatenate([self.points, other.points])
        vals = np.concatenate([self.values, other.values])
        return SparseSeries(pts, vals).merged()

    def merged(self):
        """Sum coefficients at repeated points (deterministic order)."""
        if len(self) == 0:
            return self
        uniq, inv = np.unique(self.points, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        out = np.zeros((uniq.shape[0],) + self.values.shape[1:], complex)
        np.add.at(out, inv, self.values)
        return SparseSeries(uniq, out)

    def multiply_symbol(self, fn):
        """Apply a multiplier evaluated at the points: values * fn(points)."""
        sym = fn(self.points)
        sym = sym.reshape(sym.shape + (1,) * (self.values.ndim - sym.ndim))
        return SparseSeries(self.points, self.values * sym)

    def convolve(self, other):
        """Coefficients of the pointwise product (outer over component axes)."""
        p = (self.points[:, None, :] + other.points[None, :, :]).reshape(-1, self.points.shape[1])
        a = self.values
        b = other.values
        ea = a.reshape(a.shape[:1] + (1,) + a.shape[1:] + (1,) * (b.ndim - 1))
        eb = b.reshape((1,) + b.shape[:1] + (1,) * (a.ndim - 1) + b.shape[1:])
        v = (ea * eb).reshape((-1,) + a.shape[1:] + b.shape[1:])
        return SparseSeries(p, v).merged()

    def max_norm(self):
        return float(np.sqrt((self.points.astype(float) ** 2).sum(axis=1)).max()) if len(self) else 0.0

    def to_field(self, grid):
        """Place the coefficients on the half-spectrum of ``grid``.

        Raises if a point does not fit strictly inside the lattice box.
        """
        d = grid.d
        comps = self.values.shape[1:]
        out = np.zeros(comps + grid.half_shape, complex)
        if len(self) == 0:
            return SpectralField(grid, out)
        if np.abs(self.points).max() >= grid.G // 2:
            raise ResolutionError("sparse series does not fit the grid",
                                  required_G=2 * int(np.abs(self.points).max()) + 2)
        keep = self.points[:, -1] >= 0
        pts = self.points[keep]
        vals = self.values[keep]
        idx = tuple(pts[:, i] % grid.G for i in range(d))
        vals = np.moveaxis(vals, 0, -1)
        out[(Ellipsis,) + idx] = vals
        return SpectralField(grid, out)


def from_field(f, radius, symbol=None):
    """Sparse coefficients of ``f`` at modes |m| < radius (optionally weighted).

    ``symbol`` maps an (n, d) array of points to weights.
    """
    grid = f.grid
    d = grid.d
    r = int(np.ceil(radius))
    if r >= grid.G // 2:
        raise ResolutionError("radius exceeds the grid lattice")
    rng = np.arange(-r, r + 1)
    pts = np.stack(np.meshgrid(*[rng] * d, indexing="ij"), axis=-1).reshape(-1, d)
    pts = pts[(pts.astype(float) ** 2).sum(axis=1) < radius**2]
    comps = f.components
    vals = np.empty((pts.shape[0],) + comps, complex)
    pos = pts[:, -1] >= 0
    idx_pos = tuple(pts[pos, i] % grid.G for i in range(d))
    idx_neg = tuple((-pts[~pos, i]) % grid.G for i in range(d))
    c = f.coeffs
    vals[pos] = np.moveaxis(c[(Ellipsis,) + idx_pos], -1, 0)
    vals[~pos] = np.conj(np.moveaxis(c[(Ellipsis,) + idx_neg], -1, 0))
    s = SparseSeries(pts, vals)
    if symbol is not None:
        s = s.multiply_symbol(symbol)
    return s


def cosine_modulation(series, xi):
    """Coefficients of f(x) cos(2 pi xi.x)."""
    return series.shifted(xi).scaled(0.5).combine(series.shifted(-np.asarray(xi)).scaled(0.5))
