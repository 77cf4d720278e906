"""Discrete torus fields and Fourier-multiplier operators.

A field on the d-torus is stored by its Fourier coefficients on the lattice
of a uniform grid with G points per axis, normalised so that

    f(x) = sum_m fhat(m) exp(2 pi i m.x),    fhat = fftn(samples) / G**d.

Only real fields are represented, so coefficients are kept in the
half-spectrum layout of ``scipy.fft.rfftn``: every axis but the last runs
over the full range of integer frequencies, the last axis over 0..G/2.

Multipliers that are functions of |m| alone act on every mode. Multipliers
that depend on the components of m (derivatives, Leray, anti-divergence)
annihilate the Nyquist planes |m_i| = G/2, where the sign of m_i is not
determined by the grid.
"""

from __future__ import annotations

import functools
import io
import os
import struct
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import ParameterError, ShapeError

_WORKERS = None


def set_threads(n):
    """Set the number of FFT worker threads (None restores the default)."""
    global _WORKERS
    _WORKERS = None if n is None else max(1, int(n))


def _workers():
    if _WORKERS is not None:
        return _WORKERS
    env = os.environ.get("MIKADO_THREADS")
    return int(env) if env else 1


def is_dyadic(n):
    n = int(n) if float(n).is_integer() else None
    return n is not None and n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class TorusGrid:
    d: int
    G: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ParameterError(f"unsupported dimension d={self.d}")
        if self.G < 4 or self.G % 2:
            raise ParameterError(f"grid size must be even and >= 4, got {self.G}")

    @property
    def shape(self):
        return (self.G,) * self.d

    @property
    def half_shape(self):
        return (self.G,) * (self.d - 1) + (self.G // 2 + 1,)

    @property
    def size(self):
        return self.G**self.d

    def wavenumbers(self):
        """Integer frequencies per axis, broadcastable over the half spectrum."""
        return _wavenumbers(self.d, self.G)

    def mode_norm2(self):
        """|m|^2 on the half spectrum (float array, cached)."""
        return _mode_norm2(self.d, self.G)

    def nyquist_mask(self):
        return _nyquist_mask(self.d, self.G)

    def parseval_weights(self):
        """Multiplicity of each half-spectrum entry in the full lattice."""
        return _parseval_weights(self.d, self.G)

    def coordinates(self):
        """Sparse meshgrid of physical coordinates i/G."""
        x = np.arange(self.G) / self.G
        out = []
        for i in range(self.d):
            s = [1] * self.d
            s[i] = self.G
            out.append(x.reshape(s))
        return out


@functools.lru_cache(maxsize=16)
def _wavenumbers(d, G):
    out = []
    for i in range(d):
        if i < d - 1:
            k = np.fft.fftfreq(G, 1.0 / G).astype(np.int64)
        else:
            k = np.arange(G // 2 + 1, dtype=np.int64)
        s = [1] * d
        s[i] = k.size
        k = k.reshape(s)
        k.flags.writeable = False
        out.append(k)
    return tuple(out)


@functools.lru_cache(maxsize=4)
def _mode_norm2(d, G):
    ks = _wavenumbers(d, G)
    out = np.zeros((G,) * (d - 1) + (G // 2 + 1,))
    for k in ks:
        out += (k * k).astype(float)
    out.flags.writeable = False
    return out


@functools.lru_cache(maxsize=4)
def _nyquist_mask(d, G):
    ks = _wavenumbers(d, G)
    out = np.zeros((G,) * (d - 1) + (G // 2 + 1,), dtype=bool)
    for k in ks:
        out |= np.abs(k) == G // 2
    out.flags.writeable = False
    return out


@functools.lru_cache(maxsize=4)
def _parseval_weights(d, G):
    w = np.full(G // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    w = w.reshape((1,) * (d - 1) + (G // 2 + 1,))
    w = np.broadcast_to(w, (G,) * (d - 1) + (G // 2 + 1,))
    return w


class SpectralField:
    """Immutable real field (scalar, vector or matrix) on a TorusGrid.

    ``coeffs`` has shape ``components + grid.half_shape`` where
    ``components`` is (), (d,) or (d, d).
    """

    __slots__ = ("grid", "coeffs", "aliased")

    def __init__(self, grid, coeffs, aliased=False):
        coeffs = np.asarray(coeffs)
        if coeffs.shape[coeffs.ndim - grid.d:] != grid.half_shape:
            raise ShapeError(
                f"coefficient shape {coeffs.shape} does not match grid {grid}")
        comps = coeffs.shape[: coeffs.ndim - grid.d]
        if comps not in ((), (grid.d,), (grid.d, grid.d)):
            raise ShapeError(f"unsupported component shape {comps}")
        if coeffs.dtype != np.complex128:
            coeffs = coeffs.astype(np.complex128)
        coeffs.flags.writeable = False
        self.grid = grid
        self.coeffs = coeffs
        self.aliased = bool(aliased)

    # construction
    @classmethod
    def zeros(cls, grid, rank=0):
        return cls(grid, np.zeros(_comp_shape(grid, rank) + grid.half_shape, complex))

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn(*coords)`` on the grid and transform."""
        vals = np.asarray(fn(*grid.coordinates()), dtype=float)
        comps = vals.shape[: vals.ndim - grid.d] if vals.ndim > grid.d else ()
        vals = np.broadcast_to(vals, comps + grid.shape)
        return forward_transform(grid, vals)

    @classmethod
    def stack(cls, fields):
        grid = fields[0].grid
        return cls(grid, np.stack([f.coeffs for f in fields]),
                   aliased=any(f.aliased for f in fields))

    # shape information
    @property
    def components(self):
        return self.coeffs.shape[: self.coeffs.ndim - self.grid.d]

    @property
    def rank(self):
        return len(self.components)

    def __getitem__(self, idx):
        return SpectralField(self.grid, self.coeffs[idx], aliased=self.aliased)

    def physical(self):
        return inverse_transform(self)

    def mean(self):
        return self.coeffs[(...,) + (0,) * self.grid.d].real.copy()

    def transpose(self):
        if self.rank != 2:
            raise ShapeError("transpose needs a matrix field")
        return SpectralField(self.grid, np.swapaxes(self.coeffs, 0, 1), self.aliased)

    def with_coeffs(self, coeffs):
        return SpectralField(self.grid, coeffs, aliased=self.aliased)

    # linear structure
    def _check(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.grid != self.grid:
            raise ShapeError("fields live on different grids")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self.coeffs + other.coeffs,
                             self.aliased or other.aliased)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self.coeffs - other.coeffs,
                             self.aliased or other.aliased)

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs, self.aliased)

    def __mul__(self, c):
        if isinstance(c, SpectralField):
            return NotImplemented
        return SpectralField(self.grid, self.coeffs * c, self.aliased)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return SpectralField(self.grid, self.coeffs / c, self.aliased)

    def l2_norm(self):
        """L2 norm over the unit torus (Euclidean over components), by Parseval."""
        w = self.grid.parseval_weights()
        a = np.abs(self.coeffs) ** 2
        a = a.reshape((-1,) + self.grid.half_shape).sum(axis=0)
        return float(np.sqrt(np.sum(w * a)))

    def bandwidth(self, rtol=1e-14):
        """Largest |m_i| over modes whose coefficient exceeds rtol * max."""
        a = np.abs(self.coeffs).reshape((-1,) + self.grid.half_shape).max(axis=0)
        top = a.max()
        if top == 0:
            return 0
        live = a > rtol * top
        b = 0
        for k in self.grid.wavenumbers():
            b = max(b, int(np.max(np.where(live, np.abs(k), 0))))
        return b

    def __repr__(self):
        return (f"SpectralField(d={self.grid.d}, G={self.grid.G}, "
                f"components={self.components})")


def _comp_shape(grid, rank):
    return ((), (grid.d,), (grid.d, grid.d))[rank]


def forward_transform(grid, samples):
    samples = np.asarray(samples, dtype=float)
    if samples.shape[samples.ndim - grid.d:] != grid.shape or samples.ndim < grid.d:
        raise ShapeError(f"sample shape {samples.shape} does not match grid {grid.shape}")
    axes = tuple(range(samples.ndim - grid.d, samples.ndim))
    c = sfft.rfftn(samples, axes=axes, workers=_workers())
    c /= grid.size
    return SpectralField(grid, c)


def inverse_transform(f):
    grid = f.grid
    axes = tuple(range(f.coeffs.ndim - grid.d, f.coeffs.ndim))
    out = sfft.irfftn(f.coeffs, s=grid.shape, axes=axes, workers=_workers())
    out *= grid.size
    return out


def full_spectrum(f):
    """Coefficients on the full lattice in FFT index order."""
    axes = tuple(range(f.coeffs.ndim - f.grid.d, f.coeffs.ndim))
    return sfft.fftn(f.physical(), axes=axes, workers=_workers()) / f.grid.size


# cutoff profile

def _bump_exp(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smoothstep(t):
    """Smooth monotone bridge: 0 for t <= 0, 1 for t >= 1, C-infinity."""
    t = np.asarray(t, dtype=float)
    a = _bump_exp(t)
    b = _bump_exp(1.0 - t)
    return a / (a + b)


R_FLAT = 0.9
R_ZERO = 1.0


def chi(r):
    """Radial cutoff: 1 on [0, 0.9], 0 on [1, inf), smooth and monotone."""
    r = np.asarray(r, dtype=float)
    return smoothstep((R_ZERO - r) / (R_ZERO - R_FLAT))


# multipliers

def apply_multiplier(f, symbol):
    """Multiply every component by a half-spectrum symbol array."""
    return SpectralField(f.grid, f.coeffs * symbol, f.aliased)


def _check_dyadic(N):
    if not is_dyadic(N):
        raise ParameterError(f"frequency cutoff must be dyadic, got {N}")
    return int(N)


def leq_symbol(grid, N):
    N = _check_dyadic(N)
    return chi(np.sqrt(grid.mode_norm2()) / N)


def project_leq(N, f):
    return apply_multiplier(f, leq_symbol(f.grid, N))


def project_gt(N, f):
    return apply_multiplier(f, 1.0 - leq_symbol(f.grid, N))


def project_band(N, f):
    """Littlewood-Paley block: P_1 = P_{<=1}, P_N = P_{<=N} - P_{<=N/2}."""
    N = _check_dyadic(N)
    if N == 1:
        return project_leq(1, f)
    return apply_multiplier(f, leq_symbol(f.grid, N) - leq_symbol(f.grid, N // 2))


def dyadic_blocks(grid):
    """Dyadic block indices covering the lattice of the grid."""
    top = np.sqrt(grid.d) * (grid.G // 2)
    out = [1]
    while out[-1] <= top:
        out.append(out[-1] * 2)
    return out


def fractional_laplacian(alpha, f):
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    m2 = f.grid.mode_norm2()
    sym = (4.0 * np.pi**2 * m2) ** alpha
    return apply_multiplier(f, sym)


def inverse_laplacian_symbol(grid):
    m2 = grid.mode_norm2()
    with np.errstate(divide="ignore"):
        sym = -1.0 / (4.0 * np.pi**2 * m2)
    sym[(0,) * grid.d] = 0.0
    return sym


def inverse_laplacian(f):
    return apply_multiplier(f, inverse_laplacian_symbol(f.grid))


def laplacian(f):
    return apply_multiplier(f, -4.0 * np.pi**2 * f.grid.mode_norm2())


def derivative_symbol(grid, axis):
    """2 pi i m_axis, zero on the Nyquist planes."""
    k = grid.wavenumbers()[axis]
    sym = 2j * np.pi * np.broadcast_to(k, grid.half_shape).astype(float)
    return np.where(grid.nyquist_mask(), 0.0, sym)


def derivative(f, axis):
    return apply_multiplier(f, derivative_symbol(f.grid, axis))


def gradient(f):
    """Append a derivative index: grad(f)[..., j] = d_j f."""
    d = f.grid.d
    if f.rank >= 2:
        raise ShapeError("gradient of a matrix field is not represented")
    parts = [f.coeffs * derivative_symbol(f.grid, j) for j in range(d)]
    return SpectralField(f.grid, np.stack(parts, axis=f.rank), f.aliased)


def divergence(f):
    """Contract the last component index: (Div A)_i = d_j A_ij."""
    if f.rank == 0:
        raise ShapeError("divergence needs a vector or matrix field")
    d = f.grid.d
    acc = np.zeros(f.coeffs.shape[: f.rank - 1] + f.grid.half_shape, complex)
    for j in range(d):
        comp = f.coeffs[(slice(None),) * (f.rank - 1) + (j,)]
        acc += comp * derivative_symbol(f.grid, j)
    return SpectralField(f.grid, acc, f.aliased)


def leray_project(f):
    """Projection onto divergence-free fields; the m=0 mode is kept."""
    if f.rank != 1:
        raise ShapeError("Leray projection acts on vector fields")
    grid = f.grid
    ks = grid.wavenumbers()
    m2 = grid.mode_norm2()
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = np.where(m2 > 0, 1.0 / m2, 0.0)
    dot = ks[0] * f.coeffs[0]
    for j in range(1, grid.d):
        dot += ks[j] * f.coeffs[j]
    dot *= inv
    del inv
    out = np.empty_like(f.coeffs)
    for i in range(grid.d):
        np.multiply(ks[i], dot, out=out[i])
        np.subtract(f.coeffs[i], out[i], out=out[i])
    del dot
    out[(slice(None),) + tuple(np.nonzero(grid.nyquist_mask()))] = 0.0
    return SpectralField(grid, out, f.aliased)


def divergence_residual(f):
    """Largest per-mode |sum_j m_j fhat_j(m)| relative to max |fhat|."""
    div = divergence(f)
    top = np.abs(f.coeffs).max()
    if top == 0:
        return 0.0
    return float(np.abs(div.coeffs).max() / (2 * np.pi * top))


# products and resampling

def resample(f, grid):
    """Exact change of grid: zero padding or truncation of the coefficient set.

    Truncation drops every mode that is not strictly inside the target
    lattice box, including the target's Nyquist planes.
    """
    if grid.d != f.grid.d:
        raise ShapeError("dimension mismatch")
    if grid == f.grid:
        return f
    comps = f.components
    out = np.zeros(comps + grid.half_shape, complex)
    d = grid.d
    Gs, Gt = f.grid.G, grid.G
    keep = min(Gs, Gt) // 2  # modes |m_i| < keep are copied
    src_idx, dst_idx = [], []
    for i in range(d - 1):
        pos = np.arange(0, keep)
        neg = np.arange(-keep + 1, 0)
        src_idx.append(np.concatenate([pos, neg % Gs]))
        dst_idx.append(np.concatenate([pos, neg % Gt]))
    src_idx.append(np.arange(0, keep))
    dst_idx.append(np.arange(0, keep))
    src = f.coeffs[(Ellipsis,) + np.ix_(*src_idx)]
    out[(Ellipsis,) + np.ix_(*dst_idx)] = src
    return SpectralField(grid, out, f.aliased)


def dilate(f, gamma):
    """Coefficients of x -> f(gamma x) on the grid gamma times finer."""
    gamma = int(gamma)
    d = f.grid.d
    G = f.grid.G
    fine = TorusGrid(d, G * gamma)
    out = np.zeros(f.components + fine.half_shape, complex)
    idx = []
    for i in range(d - 1):
        k = np.fft.fftfreq(G, 1.0 / G).astype(int)
        idx.append((k * gamma) % (G * gamma))
    idx.append(np.arange(G // 2 + 1) * gamma)
    src = f.coeffs
    # Nyquist of the coarse grid would become an interior mode of ambiguous sign
    src = src * ~f.grid.nyquist_mask()
    out[(Ellipsis,) + np.ix_(*idx)] = src
    return SpectralField(fine, out, f.aliased)


def pointwise_product(f, g, padding=None, max_padding=2):
    """Outer product of components, out[..i.., ..j..] = f[..i..] g[..j..].

    With ``padding=None`` the padding factor is the smallest power of two for
    which the sum of the operands' bandwidths fits strictly inside the padded
    lattice, capped at ``max_padding``. If it does not fit, the product is
    aliased on the padded grid and the result is flagged. The result is always
    returned on the operands' grid (modes outside it are discarded).
    """
    if f.grid != g.grid:
        raise ShapeError("operands live on different grids")
    grid = f.grid
    need = f.bandwidth() + g.bandwidth()
    if padding is None:
        padding = 1
        while need >= padding * grid.G // 2 and padding < max_padding:
            padding *= 2
    padding = int(padding)
    aliased = need >= padding * grid.G // 2
    big = TorusGrid(grid.d, grid.G * padding)
    fp = resample(f, big).physical()
    gp = resample(g, big).physical()
    rf, rg = f.rank, g.rank
    fp = fp.reshape(fp.shape[:rf] + (1,) * rg + big.shape)
    prod = fp * gp
    out = forward_transform(big, prod)
    out = resample(out, grid)
    return SpectralField(grid, out.coeffs, aliased or f.aliased or g.aliased)


def random_field(grid, rank, bandwidth, rng, mean_free=True, scale=1.0):
    """Random real field with |m| <= bandwidth (Euclidean), exact zeros elsewhere."""
    comps = _comp_shape(grid, rank)
    shape = comps + grid.half_shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    mask = grid.mode_norm2() <= bandwidth**2
    mask &= ~grid.nyquist_mask()
    if mean_free:
        mask = mask.copy()
        mask[(0,) * grid.d] = False
    # enforce Hermitian symmetry through a physical round trip, then re-mask
    tmp = SpectralField(grid, c * mask)
    tmp = forward_transform(grid, tmp.physical())
    return SpectralField(grid, tmp.coeffs * mask * scale)


# snapshots

MAGIC = b"MKF1"


def write_snapshot(path_or_buffer, f, domain="spectral"):
    """Write a field snapshot: MKF1 header then little-endian (re, im) pairs.

    Spectral snapshots list the full-lattice coefficients in FFT index order
    (0, 1, ..., G/2-1, -G/2, ..., -1 per axis), component-major, row-major.
    Physical snapshots list the grid samples as (value, 0) pairs.
    """
    if domain not in ("spectral", "physical"):
        raise ParameterError(f"unknown domain {domain!r}")
    flag = 0 if domain == "spectral" else 1
    data = full_spectrum(f) if flag == 0 else f.physical().astype(complex)
    pairs = np.empty(data.shape + (2,), "<f8")
    pairs[..., 0] = data.real
    pairs[..., 1] = data.imag
    header = MAGIC + struct.pack("<IIIB", f.grid.d, f.grid.G, f.rank, flag)
    if isinstance(path_or_buffer, (str, os.PathLike)):
        with open(path_or_buffer, "wb") as fh:
            fh.write(header)
            fh.write(pairs.tobytes())
    else:
        path_or_buffer.write(header)
        path_or_buffer.write(pairs.tobytes())


def read_snapshot(path_or_buffer):
    if isinstance(path_or_buffer, (str, os.PathLike)):
        with open(path_or_buffer, "rb") as fh:
            raw = fh.read()
    elif isinstance(path_or_buffer, (bytes, bytearray)):
        raw = bytes(path_or_buffer)
    else:
        raw = path_or_buffer.read()
    buf = io.BytesIO(raw)
    if buf.read(4) != MAGIC:
        raise ShapeError("not a field snapshot (bad magic)")
    d, G, rank, flag = struct.unpack("<IIIB", buf.read(13))
    grid = TorusGrid(d, G)
    comps = _comp_shape(grid, rank)
    pairs = np.frombuffer(buf.read(), "<f8")
    expected = int(np.prod(comps + grid.shape, dtype=np.int64)) * 2
    if pairs.size != expected:
        raise ShapeError(f"snapshot payload has {pairs.size} values, expected {expected}")
    pairs = pairs.reshape(comps + grid.shape + (2,))
    data = pairs[..., 0] + 1j * pairs[..., 1]
    if flag == 1:
        return forward_transform(grid, data.real)
    axes = tuple(range(len(comps), len(comps) + d))
    phys = sfft.ifftn(data, axes=axes, workers=_workers()).real * grid.size
    return forward_transform(grid, phys)
