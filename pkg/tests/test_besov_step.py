import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mikado_forge.convex_integration.besov import (STRUCTURAL_TOLERANCES, besov_amplitudes,
                                                   besov_attempt, besov_step, lambda_candidates,
                                                   reassembly_error, step_grid, step_parameters,
                                                   support_in_annulus, sym_samples)
from mikado_forge.convex_integration.driver import band_bookkeeping
from mikado_forge.convex_integration.sparse import (SparseSeries, cosine_modulation,
                                                    from_field)
from mikado_forge.convex_integration.state import (ReynoldsState, reynolds_residual,
                                                   seed_state)
from mikado_forge.errors import ParameterError, ResolutionError
from mikado_forge.mikado import mu_min
from mikado_forge.nash_geometry import build_catalog
from mikado_forge.spectral_core import (SpectralField, TorusGrid, divergence,
                                        pointwise_product, random_field, resample)


@pytest.fixture(scope="module")
def cat2():
    return build_catalog(2)


@pytest.fixture(scope="module")
def lam4(cat2):
    seed = seed_state(2, 1.0)
    params, plan = step_parameters(seed, 4, Fraction(3, 2), Fraction(1, 2), 0.5, "empirical",
                                   1, cat2)
    params.G = step_grid(seed, params, plan, cat2)
    new, values, checks = besov_attempt(seed, params, plan, cat2)
    return seed, params, plan, new, values, checks


# amplitudes

def sym_matrix_field(rng, d=2, G=16):
    X = random_field(TorusGrid(d, G), 2, 4, rng)
    return (X + X.transpose()) * 0.5


def test_amplitudes_reassemble(rng, cat2):
    R = sym_matrix_field(rng)
    amps = besov_amplitudes(R, cat2)
    assert reassembly_error(amps, sym_samples(R), 2, cat2) <= 1e-14
    # the level is 4 d^2 times the grid max of |R|
    assert amps.level == pytest.approx(16 * amps.r_sup)


def test_amplitudes_zero(cat2):
    amps = besov_amplitudes(SpectralField.zeros(TorusGrid(2, 8), 2), cat2)
    assert amps.level == 0 and not amps.values.any()


@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3))
def test_amplitudes_property(cat2, seed, scale):
    R = sym_matrix_field(np.random.default_rng(seed), G=8) * scale
    amps = besov_amplitudes(R, cat2)
    assert reassembly_error(amps, sym_samples(R), 2, cat2) <= 1e-13


# sparse series

def test_sparse_convolution_matches_grid_product(rng):
    g = TorusGrid(2, 32)
    f = random_field(g, 0, 5, rng)
    h = random_field(g, 0, 5, rng)
    prod = from_field(f, 6).convolve(from_field(h, 6)).to_field(g)
    ref = pointwise_product(f, h)
    assert (prod - ref).l2_norm() <= 1e-14 * ref.l2_norm()


def test_cosine_modulation(rng):
    g = TorusGrid(2, 32)
    f = random_field(g, 0, 3, rng)
    s = cosine_modulation(from_field(f, 4), (7, 2))
    x = g.coordinates()
    want = f.physical() * np.cos(2 * np.pi * (7 * x[0] + 2 * x[1]))
    assert np.abs(s.to_field(g).physical() - want).max() <= 1e-14 * np.abs(want).max()


def test_sparse_fit():
    s = SparseSeries([[15, 0]], [1.0])
    with pytest.raises(ResolutionError) as exc:
        s.to_field(TorusGrid(2, 16))
    assert exc.value.required_G == 32


def test_support_in_annulus():
    assert support_in_annulus(SparseSeries([[300, 0], [0, -400]], np.ones((2, 1))), 512)
    assert not support_in_annulus(SparseSeries([[256, 0]], np.ones((1, 1))), 512)
    assert not support_in_annulus(SparseSeries([[0, 461]], np.ones((1, 1))), 512)


# parameters

def test_lambda_candidates():
    assert lambda_candidates(2)[:3] == [16, 256, 65536]
    assert lambda_candidates(4)[0] == 64


def test_step_parameters(lam4, cat2):
    _, params, plan, _, _, _ = lam4
    assert (params.lam, params.gamma, params.sigma, params.e) == (4, 2, 512, 1)
    assert params.sigma_k == (360, 360, 255, 255)
    assert params.mu == mu_min(cat2)
    assert params.mu_paper == pytest.approx(math.sqrt(2))
    assert params.s == 4.0  # d/2 + 2 alpha + 1
    assert params.eps == pytest.approx(1 / 24) and params.beta == 0.25
    assert params.G == 1024
    with pytest.raises(ParameterError):
        step_parameters(seed_state(2, 1.0), 8, Fraction(3, 2), Fraction(1, 2), 0.5,
                        "empirical")


# one attempt

def test_attempt_structure(lam4):
    seed, params, plan, new, values, checks = lam4
    for key, tol in STRUCTURAL_TOLERANCES.items():
        assert checks[key] <= tol, key
    assert checks["support_annulus"] and checks["R_bar_symmetric"]
    assert new.N == 512 and new.n == 1
    assert new.bands == [(Fraction(256), Fraction(2304, 5))]
    w = new.u - resample(seed.u, new.grid)
    assert divergence(w).l2_norm() <= 1e-13 * w.l2_norm()
    assert abs(w.mean()).max() == 0
    assert reynolds_residual(new) <= 1e-12


def test_attempt_bookkeeping(lam4):
    seed, _, _, new, _, _ = lam4
    book = band_bookkeeping(seed.u, new.u, new.bands)
    assert book["bands_disjoint"] and book["support_covered"] and book["unit_modes_kept"]
    assert book["pnu_structure"] == 0.0


def test_attempt_values(lam4):
    _, _, _, _, values, _ = lam4
    assert values["w_L2"] == pytest.approx(0.0764337719, rel=1e-6)
    assert values["R_H-s"] == pytest.approx(2.7229669443, rel=1e-8)
    # at lambda = 4 the step does not reduce the stress
    assert values["R_bar_H-s"] > values["R_H-s"]


# whole step

def test_zero_stress_is_identity():
    seed = seed_state(2, 1.0)
    st_ = ReynoldsState(seed.u, seed.R * 0, 1.0)
    out, _, rep = besov_step(st_, 0.5, Fraction(3, 2), Fraction(1, 2))
    assert rep.status == "identity" and out.n == 1
    assert out.u is st_.u


def test_strict_mode_reports_infeasible():
    seed = seed_state(2, 1.0)
    out, params, rep = besov_step(seed, 0.5, Fraction(3, 2), Fraction(1, 2), "strict")
    assert rep.status == "infeasible"
    assert params.lam == 16 and params.e == 4
    assert rep.values["required_G"] > 8192
    assert out is seed


def test_empirical_grid_cap():
    seed = seed_state(2, 1.0)
    out, _, rep = besov_step(seed, 0.5, Fraction(3, 2), Fraction(1, 2), lam=16, grid_cap=1024)
    assert rep.status == "failed" and "grid cap" in rep.note
    assert out is seed


def test_mode_error():
    with pytest.raises(ParameterError):
        besov_step(seed_state(2, 1.0), 0.5, Fraction(3, 2), Fraction(1, 2), "loose")
