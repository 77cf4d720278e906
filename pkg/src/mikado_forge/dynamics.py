"""Fractional heat semigroup, Galerkin evolution and flux diagnostics.

The evolution solves du/dt + (-Lap)^alpha u + P Div(u (x) u) = 0 on the
Galerkin truncation |m| <= K with integrating-factor time stepping: the
linear part is propagated exactly, only the nonlinear term is discretised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError, ParameterError
from .norms import lp_norm, sobolev_norm
from .spectral_core import (SpectralField, TorusGrid, derivative_symbol, dyadic_blocks,
                            forward_transform, leray_project, project_band, project_leq,
                            random_field, resample)


def heat_symbol(grid, alpha):
    return (4.0 * np.pi**2 * grid.mode_norm2()) ** alpha


def heat_semigroup(u0, t, alpha):
    """exp(-t (-Lap)^alpha) u0, exact per mode."""
    if t < 0:
        raise ParameterError("the semigroup is defined for t >= 0")
    if t == 0:
        return u0
    return SpectralField(u0.grid, u0.coeffs * np.exp(-t * heat_symbol(u0.grid, alpha)))


@dataclass(frozen=True)
class EvolutionConfig:
    alpha: float
    h: float
    T: float
    K: float | None = None  # Galerkin radius; defaults to the grid Nyquist
    integrator: str = "if-rk2"
    nonlinear: bool = True
    snapshot_every: int = 1
    blowup_factor: float = 1e3

    def __post_init__(self):
        if self.h <= 0 or self.T < 0:
            raise ParameterError("need h > 0 and T >= 0")
        if self.alpha <= 0:
            raise ParameterError("alpha must be positive")
        if self.integrator not in ("if-euler", "if-rk2"):
            raise ParameterError(f"unknown integrator {self.integrator!r}")

    @property
    def steps(self):
        return int(round(self.T / self.h))


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    l2: list = field(default_factory=list)

    @property
    def final(self):
        return self.fields[-1]


class GalerkinSystem:
    """Truncated right-hand side on a fixed grid.

    Products are formed on a grid of at least 3K + 2 points per axis, so the
    modes |m| <= K of u (x) u are exact.
    """

    def __init__(self, grid, alpha, K=None, nonlinear=True):
        K = grid.G // 2 - 1 if K is None else K
        if K > grid.G // 2:
            raise ParameterError(f"K={K} exceeds the grid Nyquist {grid.G // 2}")
        self.grid = grid
        self.alpha = alpha
        self.K = K
        self.nonlinear = nonlinear
        self.mask = (grid.mode_norm2() <= K * K) & ~grid.nyquist_mask()
        n = max(grid.G, 3 * int(math.ceil(K)) + 2)
        self.big = TorusGrid(grid.d, n + (n % 2))
        self.L = heat_symbol(grid, alpha)

    def truncate(self, u):
        return SpectralField(self.grid, u.coeffs * self.mask)

    def factor(self, t):
        return np.exp(-t * self.L)

    def nonlinear_term(self, u):
        """-P_K Leray Div(u (x) u)."""
        d = self.grid.d
        if not self.nonlinear:
            return SpectralField.zeros(self.grid, 1)
        up = resample(u, self.big).physical()
        D = [derivative_symbol(self.big, j) for j in range(d)]
        out = np.zeros((d,) + self.big.half_shape, complex)
        for i in range(d):
            for j in range(i, d):
                c = forward_transform(self.big, up[i] * up[j]).coeffs
                out[i] += D[j] * c
                if i != j:
                    out[j] += D[i] * c
        f = resample(SpectralField(self.big, out), self.grid)
        f = leray_project(f)
        return SpectralField(self.grid, -f.coeffs * self.mask)

    def step(self, u, h, integrator):
        E = self.factor(h)
        n1 = self.nonlinear_term(u)
        if integrator == "if-euler":
            return SpectralField(self.grid, E * (u.coeffs + h * n1.coeffs))
        pred = SpectralField(self.grid, E * (u.coeffs + h * n1.coeffs))
        n2 = self.nonlinear_term(pred)
        return SpectralField(self.grid, E * u.coeffs + 0.5 * h * (E * n1.coeffs + n2.coeffs))


def evolve(u_init, config):
    """Trajectory of the truncated system from P_K u_init."""
    sys_ = GalerkinSystem(u_init.grid, config.alpha, config.K, config.nonlinear)
    u = sys_.truncate(u_init)
    traj = Trajectory([0.0], [u], [u.l2_norm()])
    e0 = traj.l2[0]
    for n in range(1, config.steps + 1):
        u = sys_.step(u, config.h, config.integrator)
        e = u.l2_norm()
        if e0 > 0 and e > config.blowup_factor * e0 or not math.isfinite(e):
            raise BlowUpError(f"||u||_L2 grew by {e / e0:.3g} at t={n * config.h:.6g}",
                              time=n * config.h, ratio=e / e0)
        if n % config.snapshot_every == 0 or n == config.steps:
            traj.times.append(n * config.h)
            traj.fields.append(u)
            traj.l2.append(e)
    return traj


@dataclass
class GapCurve:
    times: list
    gap: list
    l2: list
    hs: list
    drift_rate: float  # g(h) / h


def nonuniqueness_gap(u_init, config, s):
    """g(t) = ||u(t) - u_init||_{H^-s} along the Galerkin trajectory from u_init.

    A stationary singular solution would stay at u_init; a smooth mild
    solution moves away at rate about ||P Div R||_{H^-s} for an iterate
    carrying stress R.
    """
    traj = evolve(u_init, config)
    u0 = traj.fields[0]
    gap = [sobolev_norm(f - u0, -s) for f in traj.fields]
    hs = [sobolev_norm(f, -s) for f in traj.fields]
    if config.steps == 0:
        rate = 0.0
    else:
        one = GalerkinSystem(u_init.grid, config.alpha, config.K, config.nonlinear)
        u1 = one.step(u0, config.h, config.integrator)
        rate = sobolev_norm(u1 - u0, -s) / config.h
    return GapCurve(traj.times, gap, traj.l2, hs, rate)


def shear_gap(amplitude_hs, t, alpha, m_norm=1.0):
    """Closed-form gap of a single-mode shear flow at |m| = m_norm."""
    return (1.0 - math.exp(-t * (2.0 * math.pi * m_norm) ** (2 * alpha))) * amplitude_hs


# flux

def _pairing(A, B):
    """int A : B for matrix fields of the same grid (Parseval)."""
    w = A.grid.parseval_weights()
    return float(np.sum((A.coeffs * np.conj(B.coeffs)).real * w))


def _outer(f, g):
    """Exact product f (x) g on a grid twice as fine, returned on that grid."""
    big = TorusGrid(f.grid.d, 2 * f.grid.G)
    fp = resample(f, big).physical()
    gp = resample(g, big).physical()
    return forward_transform(big, fp[:, None] * gp[None, :])


def _grad_matrix(v):
    """(grad v)_ij = d_j v_i."""
    d = v.grid.d
    return SpectralField(v.grid, np.stack([np.stack([derivative_symbol(v.grid, j) * v.coeffs[i]
                                                     for j in range(d)]) for i in range(d)]))


def commutator(u, N):
    """r_N = P_N(u (x) u) - u_N (x) u_N on the doubled grid."""
    uN = project_leq(N, u)
    uu = _outer(u, u)
    return project_leq(N, uu) - _outer(uN, uN)


def commutator_kernel_form(u, N):
    """int K_N(y) du (x) du dy - (u - u_N) (x) (u - u_N), expanded in products.

    With du = u(x - y) - u(x) and int K_N = 1 the kernel integral is
    P_N(u u) - u_N u - u u_N + u u.
    """
    uN = project_leq(N, u)
    uu = _outer(u, u)
    kern = project_leq(N, uu) - _outer(uN, u) - _outer(u, uN) + uu
    rest = u - uN
    return kern - _outer(rest, rest)


@dataclass
class FluxRow:
    N: int
    transport: float
    commutator: float
    cancellation: float
    dissipation: float

    @property
    def identity_gap(self):
        return abs(self.transport - self.commutator)


def flux_forms(u, N, alpha):
    """Pi_N in transport and commutator form, the cancellation integral, and D_N."""
    uN = project_leq(N, u)
    big = TorusGrid(u.grid.d, 2 * u.grid.G)
    g = _grad_matrix(resample(uN, big))
    transport = _pairing(project_leq(N, _outer(u, u)), g)
    comm = _pairing(commutator(u, N), g)
    cancel = _pairing(_outer(uN, uN), g)
    diss = float(np.sum(np.abs(uN.coeffs) ** 2 * heat_symbol(u.grid, alpha)
                        * u.grid.parseval_weights()))
    return FluxRow(int(N), transport, comm, cancel, diss)


def flux_table(u, alpha):
    return [flux_forms(u, N, alpha) for N in dyadic_blocks(u.grid)]


def random_solenoidal(grid, bandwidth, rng, scale=1.0):
    return leray_project(random_field(grid, 1, bandwidth, rng, scale=scale))


# b_N sequences

def bN_sequences(u, alpha, q=math.inf, case=1):
    """Block sums b_N and tails B_{N0} = sum_{N >= N0} b_N over dyadic N.

    case 1: b_N = sum_{M <= N} (M/N)^{2 alpha} M^{1 - 2 alpha} ||P_M u||_{L^inf}
    case 2: b_N = sum_{M <= N} (M/N)^2 M^{-1} ||P_M u||_{L^q}
    Beyond the top block b_N is c N^{-p}; that geometric tail is summed exactly.
    """
    if case not in (1, 2):
        raise ParameterError("case must be 1 or 2")
    blocks = dyadic_blocks(u.grid)
    if case == 1:
        power, q = 2.0 * alpha, math.inf
        weight = lambda M: M ** (1.0 - 2.0 * alpha)
    else:
        power = 2.0
        weight = lambda M: M**-1.0
    norms = {M: lp_norm(project_band(M, u), q) for M in blocks}
    b = {}
    for N in blocks:
        b[N] = sum((M / N) ** power * weight(M) * norms[M] for M in blocks if M <= N)
    top = blocks[-1]
    # b_N = b_top (top / N)^power for N > top
    tail_after_top = b[top] * (2.0**-power) / (1.0 - 2.0**-power)
    B = {}
    acc = tail_after_top
    for N in reversed(blocks):
        acc += b[N]
        B[N] = acc
    return b, B
