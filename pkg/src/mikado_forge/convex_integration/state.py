"""Reynolds states, parameter sets, schedules and run reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..antidivergence import antidiv
from ..errors import ParameterError
from ..norms import lp_norm
from ..spectral_core import (SpectralField, TorusGrid, derivative_symbol,
                             divergence, forward_transform, fractional_laplacian,
                             leray_project, pointwise_product)


@dataclass
class ReynoldsState:
    """A solution (u, R) of the stationary Navier-Stokes-Reynolds system.

    ``bands`` lists, per completed step, the open annulus (lo, hi) carrying
    that step's perturbation; ``N`` bounds the spectral support of u.
    """
    u: SpectralField
    R: SpectralField
    alpha: float
    n: int = 0
    N: int = 2
    D_history: list = field(default_factory=list)
    bands: list = field(default_factory=list)

    @property
    def grid(self):
        return self.u.grid

    @property
    def d(self):
        return self.u.grid.d


@dataclass
class ParameterSet:
    lam: int
    mu: float
    gamma: int
    sigma: int
    sigma_k: tuple
    e: int
    eps: float
    beta: float
    s: float
    delta: float
    p: float
    theta: float
    mode: str
    G: int = 0
    mu_paper: float = 0.0

    def as_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class RunReport:
    """One iteration's measured values; ``values`` holds named diagnostics."""
    n: int
    scheme: str
    mode: str
    status: str  # "accepted", "rejected", "failed", "infeasible", "identity"
    params: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    wall_time: float = 0.0
    note: str = ""

    @property
    def accepted(self):
        return self.status in ("accepted", "identity")


@dataclass(frozen=True)
class Schedule:
    delta: tuple
    p: tuple
    theta: tuple

    def __len__(self):
        return len(self.delta)

    @classmethod
    def main(cls, steps):
        """delta_n = 2^-n, p_n = 2 - 2^-n, theta_n = 2^-n for n = 1..steps."""
        n = range(1, steps + 1)
        return cls(tuple(2.0**-k for k in n), tuple(2 - Fraction(1, 2**k) for k in n),
                   tuple(Fraction(1, 2**k) for k in n))

    @classmethod
    def perturbative(cls, steps, eps, theta=Fraction(1, 2)):
        """delta_n = 2^{-n-2} eps with p = 3/2 and fixed theta."""
        n = range(1, steps + 1)
        return cls(tuple(2.0 ** (-k - 2) * eps for k in n), (Fraction(3, 2),) * steps,
                   (Fraction(theta),) * steps)


def seed_velocity(grid, seed=0, amplitude=None):
    """Divergence-free mean-free field with spectrum on the unit sphere.

    In 2D: u = c (sin 2 pi x2 + cos 2 pi x2, sin 2 pi x1); in 3D the
    analogous cyclic shear combination. Seeds differ by amplitude c = 1 + 4 seed
    unless ``amplitude`` is given, which keeps pairwise L1 distances above 3.
    """
    c = 1.0 + 4.0 * seed if amplitude is None else float(amplitude)
    x = grid.coordinates()
    tp = 2 * np.pi
    if grid.d == 2:
        comps = [np.sin(tp * x[1]) + np.cos(tp * x[1]) + 0 * x[0], np.sin(tp * x[0]) + 0 * x[1]]
    elif grid.d == 3:
        comps = [np.sin(tp * x[1]) + np.cos(tp * x[2]) + 0 * x[0],
                 np.sin(tp * x[2]) + 0 * x[0] + 0 * x[1],
                 np.sin(tp * x[0]) + 0 * x[1] + 0 * x[2]]
    else:
        raise ParameterError("seed velocity needs d in {2, 3}")
    vals = np.stack([np.broadcast_to(v, grid.shape) for v in comps]) * c
    u = forward_transform(grid, vals)
    # drop roundoff outside the unit sphere
    mask = grid.mode_norm2() == 1
    return SpectralField(grid, u.coeffs * mask)


def nonlinear_term(u, padding=1):
    """Div(u (x) u) with the collocation product on the grid of u.

    Iteration steps build their stresses from grid products, so the state
    equation holds for this product; ``padding=None`` gives the dealiased one.
    """
    if padding != 1:
        return divergence(pointwise_product(u, u, padding=padding))
    grid = u.grid
    x = u.physical()
    out = np.zeros((grid.d,) + grid.half_shape, complex)
    for i in range(grid.d):
        for j in range(i, grid.d):
            c = forward_transform(grid, x[i] * x[j]).coeffs
            out[i] += derivative_symbol(grid, j) * c
            if i != j:
                out[j] += derivative_symbol(grid, i) * c
            del c
    return SpectralField(grid, out)


def seed_state(d, alpha, G=16, seed=0, amplitude=None):
    grid = TorusGrid(d, G)
    u = seed_velocity(grid, seed, amplitude)
    R = antidiv(nonlinear_term(u) + fractional_laplacian(alpha, u))
    return ReynoldsState(u, R, float(alpha), n=0, N=2)


def reynolds_residual(state, padding=1):
    """Relative size of P(Div(u (x) u) + (-Lap)^alpha u - Div R)."""
    u, R = state.u, state.R
    a = nonlinear_term(u, padding)
    b = fractional_laplacian(state.alpha, u)
    c = divergence(R)
    scale = leray_project(a).l2_norm() + b.l2_norm() + leray_project(c).l2_norm()
    x = np.array(a.coeffs)
    del a
    x += b.coeffs
    del b
    x -= c.coeffs
    del c
    r = leray_project(SpectralField(u.grid, x)).l2_norm()
    return r / scale if scale > 0 else r


def l1_distance(u, v):
    return lp_norm(u - v, 1)
