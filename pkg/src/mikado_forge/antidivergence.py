"""Anti-divergence operators.

``antidiv`` is the order -1 multiplier R with symmetric, trace-free output
and Div R f = f - mean(f). ``bilinear_antidiv`` is the bilinear potential
B(f, X) whose divergence equals X^T f up to a constant vector.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError, ShapeError
from .spectral_core import (SpectralField, TorusGrid, derivative_symbol,
                            forward_transform, inverse_laplacian_symbol,
                            resample)


def antidiv_coeffs(grid, fc):
    """Coefficients of R f from vector coefficients ``fc`` (shape (d,) + half)."""
    d = grid.d
    if d < 2:
        raise ParameterError("the anti-divergence needs d >= 2")
    D = [derivative_symbol(grid, i) for i in range(d)]
    L = inverse_laplacian_symbol(grid)
    divf = sum(D[k] * fc[k] for k in range(d))
    Ldiv = L * divf
    c1 = (2.0 - d) / (d - 1.0)
    c2 = 1.0 / (d - 1.0)
    third = c1 * L * Ldiv
    out = np.empty((d, d) + grid.half_shape, complex)
    Lf = [L * fc[k] for k in range(d)]
    for i in range(d):
        for j in range(i, d):
            v = third * (D[i] * D[j]) + (D[i] * Lf[j] + D[j] * Lf[i])
            if i == j:
                v = v - c2 * Ldiv
            out[i, j] = v
            if j != i:
                out[j, i] = v
    return out


def antidiv(f):
    """R f for a vector field f; symmetric and trace-free."""
    if f.rank != 1:
        raise ShapeError("antidiv acts on vector fields")
    return SpectralField(f.grid, antidiv_coeffs(f.grid, f.coeffs), f.aliased)


def _padding_for(grid, need, max_padding):
    p = 1
    while need >= p * grid.G // 2 and p < max_padding:
        p *= 2
    return p, need >= p * grid.G // 2


def bilinear_antidiv(f, X, max_padding=2, mean_tol=1e-12):
    """B(f, X)_ij = f_l (R X_l.)_ij - R(g)_ij with g_m = d_j f_l (R X_l.)_mj.

    Products are formed on a zero-padded grid (factor chosen so the operand
    bandwidths fit, capped at ``max_padding``) and truncated back.
    """
    if f.rank != 1 or X.rank != 2:
        raise ShapeError("bilinear_antidiv needs a vector f and a matrix X")
    if f.grid != X.grid:
        raise ShapeError("operands live on different grids")
    grid = f.grid
    d = grid.d
    scale = np.abs(X.coeffs).max()
    if scale > 0 and np.abs(X.mean()).max() > mean_tol * scale:
        raise ParameterError("bilinear_antidiv requires a mean-free matrix argument")
    Y = [antidiv_coeffs(grid, X.coeffs[l]) for l in range(d)]
    padding, aliased = _padding_for(grid, f.bandwidth() + X.bandwidth(), max_padding)
    big = TorusGrid(d, grid.G * padding)

    def up(c):
        return resample(SpectralField(grid, c), big).physical()

    fp = [up(f.coeffs[l]) for l in range(d)]
    dfp = [[up(f.coeffs[l] * derivative_symbol(grid, j)) for j in range(d)]
           for l in range(d)]
    first = np.zeros((d, d) + big.shape)
    g = np.zeros((d,) + big.shape)
    for l in range(d):
        Yl = up(Y[l])
        first += fp[l] * Yl
        for m in range(d):
            for j in range(d):
                g[m] += dfp[l][j] * Yl[m, j]
    first_f = resample(forward_transform(big, first), grid)
    g_f = resample(forward_transform(big, g), grid)
    out = first_f.coeffs - antidiv_coeffs(grid, g_f.coeffs)
    return SpectralField(grid, out, aliased or f.aliased or X.aliased)


def transpose_apply(X, f, max_padding=2):
    """(X^T f)_k = X_lk f_l on the same padded grid convention as B."""
    grid = f.grid
    d = grid.d
    padding, aliased = _padding_for(grid, f.bandwidth() + X.bandwidth(), max_padding)
    big = TorusGrid(d, grid.G * padding)
    fp = resample(f, big).physical()
    Xp = resample(X, big).physical()
    out = np.einsum("lk...,l...->k...", Xp, fp)
    res = resample(forward_transform(big, out), grid)
    return SpectralField(grid, res.coeffs, aliased)
