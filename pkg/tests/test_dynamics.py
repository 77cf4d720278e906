import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mikado_forge.dynamics import (EvolutionConfig, GalerkinSystem, bN_sequences,
                                   commutator, commutator_kernel_form, evolve, flux_forms,
                                   flux_table, heat_semigroup, nonuniqueness_gap,
                                   random_solenoidal, shear_gap, _pairing)
from mikado_forge.errors import BlowUpError, ParameterError
from mikado_forge.norms import sobolev_norm
from mikado_forge.spectral_core import (SpectralField, TorusGrid, divergence,
                                        fractional_laplacian, project_band)


def shear(grid, amp=1.0, m=1):
    zero = SpectralField.from_function(grid, lambda x, y: 0 * x)
    s = SpectralField.from_function(grid, lambda x, y: amp * np.sin(2 * np.pi * m * y) + 0 * x)
    return SpectralField.stack([s, zero])


def test_semigroup(rng):
    g = TorusGrid(2, 16)
    u = random_solenoidal(g, 6, rng)
    a = heat_semigroup(heat_semigroup(u, 0.01, 0.7), 0.02, 0.7)
    b = heat_semigroup(u, 0.03, 0.7)
    assert (a - b).l2_norm() <= 1e-13 * u.l2_norm()
    assert heat_semigroup(u, 0, 0.7) is u
    with pytest.raises(ParameterError):
        heat_semigroup(u, -1, 0.7)


def test_heat_value():
    g = TorusGrid(2, 8)
    u = shear(g)
    out = heat_semigroup(u, 0.1, 1.0)
    assert out.l2_norm() == pytest.approx(math.exp(-0.1 * 4 * math.pi**2) * u.l2_norm(),
                                          rel=1e-14)


def test_linear_evolution_matches_semigroup(rng):
    g = TorusGrid(2, 16)
    u = random_solenoidal(g, 6, rng)
    traj = evolve(u, EvolutionConfig(0.6, 0.01, 0.1, nonlinear=False))
    assert (traj.final - heat_semigroup(u, 0.1, 0.6)).l2_norm() <= 1e-13 * u.l2_norm()
    assert traj.times[-1] == pytest.approx(0.1)


def test_shear_closed_form():
    # a shear flow has u . grad u = 0, so it decays exactly like the heat flow
    g = TorusGrid(2, 16)
    u = shear(g, 2.0)
    s = 2.0
    curve = nonuniqueness_gap(u, EvolutionConfig(0.8, 0.005, 0.05), s)
    hs0 = sobolev_norm(u, -s)
    for t, gap in zip(curve.times, curve.gap):
        assert gap == pytest.approx(shear_gap(hs0, t, 0.8), rel=1e-12, abs=1e-15)


def test_nonlinear_term_conserves_energy(rng):
    g = TorusGrid(2, 16)
    sys_ = GalerkinSystem(g, 1.0, K=5)
    u = sys_.truncate(random_solenoidal(g, 5, rng))
    n = sys_.nonlinear_term(u)
    assert abs(_pairing(n, u)) <= 1e-13 * n.l2_norm() * u.l2_norm()
    assert divergence(n).l2_norm() <= 1e-12 * n.l2_norm() * 2 * np.pi * 5


def test_energy_identity(rng):
    # d/dt ||u||^2 / 2 = -||(-Lap)^{alpha/2} u||^2 along the exact flow
    g = TorusGrid(2, 16)
    u0 = random_solenoidal(g, 4, rng, scale=0.2)
    alpha, h = 0.5, 1e-5
    traj = evolve(u0, EvolutionConfig(alpha, h, 2 * h, K=5))
    u = traj.fields[1]
    rate = (traj.l2[2] ** 2 - traj.l2[0] ** 2) / (4 * h)
    diss = sobolev_norm(u, alpha, homogeneous=True) ** 2 * (2 * np.pi) ** (2 * alpha)
    assert rate == pytest.approx(-diss, rel=1e-6)


def order(integrator, rng):
    g = TorusGrid(2, 16)
    u0 = random_solenoidal(g, 4, rng, scale=0.3)
    T = 0.1
    ref = evolve(u0, EvolutionConfig(0.5, T / 512, T, K=5, integrator="if-rk2")).final
    errs = [(evolve(u0, EvolutionConfig(0.5, T / n, T, K=5, integrator=integrator)).final
             - ref).l2_norm() for n in (16, 32)]
    return math.log2(errs[0] / errs[1])


def test_rk2_order(rng):
    assert order("if-rk2", rng) >= 1.9


def test_euler_order(rng):
    assert 0.9 <= order("if-euler", rng) <= 1.2


def test_blowup_guard(rng):
    u = random_solenoidal(TorusGrid(2, 8), 3, rng)
    with pytest.raises(BlowUpError) as exc:
        evolve(u, EvolutionConfig(1.0, 0.01, 0.05, blowup_factor=1e-3))
    assert exc.value.time == pytest.approx(0.01)


def test_config_validation():
    with pytest.raises(ParameterError):
        EvolutionConfig(1.0, 0.0, 1.0)
    with pytest.raises(ParameterError):
        EvolutionConfig(0.0, 0.1, 1.0)
    with pytest.raises(ParameterError):
        EvolutionConfig(1.0, 0.1, 1.0, integrator="rk4")
    assert EvolutionConfig(1.0, 0.1, 1.0).steps == 10


def test_flux_identity(rng):
    g = TorusGrid(2, 16)
    u = random_solenoidal(g, 7, rng)
    for row in flux_table(u, 0.5):
        scale = u.l2_norm() ** 3 * 2 * np.pi * 7
        assert row.identity_gap <= 1e-14 * scale
        assert abs(row.cancellation) <= 1e-14 * scale
        assert row.dissipation >= 0


def test_commutator_kernel_form(rng):
    g = TorusGrid(2, 16)
    u = random_solenoidal(g, 6, rng)
    a = commutator(u, 4)
    b = commutator_kernel_form(u, 4)
    assert (a - b).l2_norm() <= 1e-13 * a.l2_norm()


def test_flux_vanishes_for_low_field():
    # with u = u_N the commutator is P_N(u u) - u u, which pairs to zero
    g = TorusGrid(2, 16)
    u = shear(g)
    row = flux_forms(u, 4, 1.0)
    assert abs(row.commutator) <= 1e-14 and abs(row.transport) <= 1e-14
    assert row.dissipation == pytest.approx(0.5 * (2 * math.pi) ** 2, rel=1e-14)


def test_bN_sequences(rng):
    g = TorusGrid(2, 32)
    u = random_solenoidal(g, 12, rng)
    for case in (1, 2):
        b, B = bN_sequences(u, 0.75, q=4.0, case=case)
        Ns = sorted(b)
        for N, M in zip(Ns, Ns[1:]):
            assert B[N] - B[M] == pytest.approx(b[N], rel=1e-12)
        power = 1.5 if case == 1 else 2.0
        top = Ns[-1]
        tail = b[top] * 2**-power / (1 - 2**-power)
        assert B[top] == pytest.approx(b[top] + tail, rel=1e-14)
    with pytest.raises(ParameterError):
        bN_sequences(u, 0.75, case=3)


def test_bN_single_block():
    # a single mode at |m| = 4 lies in block 8 only, so b_N = (8/N)^{2a} 8^{1-2a} ||u||_inf
    g = TorusGrid(2, 32)
    zero = SpectralField.from_function(g, lambda x, y: 0 * x)
    u = SpectralField.stack([SpectralField.from_function(g, lambda x, y: np.cos(8 * np.pi * y)
                                                         + 0 * x), zero])
    b, _ = bN_sequences(u, 0.5)
    assert b[4] == pytest.approx(0.0, abs=1e-14)
    assert b[8] == pytest.approx(1.0, rel=1e-13)
    assert b[16] == pytest.approx(0.5, rel=1e-13)


@given(seed=st.integers(0, 2**32 - 1), N=st.sampled_from([1, 2, 4, 8]))
def test_flux_identity_property(seed, N):
    u = random_solenoidal(TorusGrid(2, 12), 5, np.random.default_rng(seed))
    row = flux_forms(u, N, 1.0)
    # the flux is cubic in u with one derivative
    scale = u.l2_norm() ** 3 * 2 * np.pi * 5
    assert row.identity_gap <= 1e-14 * scale
    assert abs(row.cancellation) <= 1e-14 * scale
