"""Multi-step driver and the frequency bookkeeping of its output."""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from ..errors import ParameterError
from ..nash_geometry import build_catalog
from ..spectral_core import project_band, resample
from .besov import besov_step
from .l2 import l2_step
from .state import l1_distance, reynolds_residual, seed_state


def run_schedule(seed, schedule, scheme="besov", mode="empirical", *, stop_on_failure=True,
                 catalog=None, log=None, **step_kw):
    """Apply the step ``len(schedule)`` times; returns (final state, reports).

    A failed step leaves the state unchanged; by default the run stops there.
    """
    if scheme not in ("besov", "l2"):
        raise ParameterError(f"unknown scheme {scheme!r}")
    catalog = catalog or build_catalog(seed.d)
    state = seed
    reports = []
    for delta, p, theta in zip(schedule.delta, schedule.p, schedule.theta):
        if scheme == "besov":
            state, _, rep = besov_step(state, delta, p, theta, mode, catalog=catalog, log=log,
                                       **step_kw)
        else:
            state, _, rep = l2_step(state, delta, catalog=catalog, log=log, **step_kw)
        reports.append(rep)
        if stop_on_failure and not rep.accepted:
            break
    return state, reports


def seed_family(d, alpha, seeds, G=16, min_distance=3.0):
    """Seed states for several ids with pairwise L1 distance above ``min_distance``."""
    states = [seed_state(d, alpha, G=G, seed=s) for s in seeds]
    for a, b in itertools.combinations(range(len(states)), 2):
        dist = l1_distance(states[a].u, states[b].u)
        if not dist > min_distance:
            raise ParameterError(f"seeds {seeds[a]} and {seeds[b]} are only {dist:.3g} apart")
    return states


def run_seeds(d, alpha, seeds, schedule, scheme="besov", mode="empirical", **kw):
    return [run_schedule(s, schedule, scheme, mode, **kw) for s in seed_family(d, alpha, seeds)]


def _annulus_mask(grid, band):
    lo, hi = band
    m2 = grid.mode_norm2()
    # squared comparisons with the rational endpoints, in integers
    lo, hi = Fraction(lo), Fraction(hi)
    return ((m2 * lo.denominator**2 > lo.numerator**2)
            & (m2 * hi.denominator**2 < hi.numerator**2))


def bands_disjoint(bands):
    ordered = sorted(bands)
    return all(a[1] <= b[0] for a, b in zip(ordered, ordered[1:]))


def band_bookkeeping(seed_u, u, bands):
    """Exact frequency checks on an iterate.

    - the open annuli of the steps are pairwise disjoint;
    - every nonzero coefficient of u lies on the unit sphere or in an annulus;
    - the unit-sphere coefficients of u equal those of the seed;
    - P_N u equals the restriction of u to the annulus when N is its sigma.
    """
    grid = u.grid
    seed_u = resample(seed_u, grid)
    m2 = grid.mode_norm2()
    unit = m2 == 1
    covered = unit.copy()
    pnu = 0.0
    for band in bands:
        mask = _annulus_mask(grid, band)
        covered |= mask
        sigma = int(Fraction(band[0]) * 2)
        block = project_band(sigma, u)
        diff = block.coeffs - u.coeffs * mask
        pnu = max(pnu, float(np.abs(diff).max()))
    live = np.abs(u.coeffs).max(axis=0) > 0
    return {
        "bands_disjoint": bands_disjoint(bands),
        "support_covered": bool(not np.any(live & ~covered)),
        "unit_modes_kept": bool(np.array_equal(u.coeffs[:, unit], seed_u.coeffs[:, unit])),
        "pnu_structure": pnu,
    }


def final_residual(state):
    return reynolds_residual(state)
