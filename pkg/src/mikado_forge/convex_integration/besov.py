"""Frequency-localised iteration step.

The perturbation is w = Div sum_k P_{<=lam} a_k Omega_k with Omega_k built
from P_{<=lam}(psi_k(gamma .)) cos(2 pi sigma_k k_perp . x). Every factor of
w is band-limited, so its coefficients are computed as exact convolutions
of short sparse series; support, divergence and the Leibniz splitting
w = w_p + w_l + w_d are then properties of finite sums. The stress terms
involve the unprojected amplitudes and profiles and are formed pointwise on
the step grid, streaming over the directions to bound memory.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..antidivergence import antidiv_coeffs
from ..errors import ParameterError
from ..frequency_arith import (audit_parameters, besov_parameters, select_sigma,
                               theta_to_e)
from ..mikado import build_family, mu_min, required_grid
from ..nash_geometry import build_catalog, gamma_squares
from ..norms import besov_norm, lp_from_samples, present_bands, sobolev_norm
from ..spectral_core import (SpectralField, TorusGrid, chi,
                             forward_transform, leray_project, project_leq,
                             resample)
from .sparse import SparseSeries, cosine_modulation, from_field
from .state import ParameterSet, ReynoldsState, RunReport

DEFAULT_GRID_CAP = {2: 8192, 3: 256}


def sym_pairs(d):
    return [(i, j) for i in range(d) for j in range(i, d)]


def _frobenius(sym, d):
    acc = None
    for i, j in sym_pairs(d):
        t = sym[i, j] * sym[i, j]
        if i != j:
            t *= 2.0
        acc = t if acc is None else acc + t
    return np.sqrt(acc)


def sym_samples(R, grid=None):
    """Grid samples {(i, j): R_ij} for i <= j, optionally after resampling."""
    d = R.grid.d
    out = {}
    for i, j in sym_pairs(d):
        c = R[i, j] if grid is None else resample(R[i, j], grid)
        out[i, j] = c.physical()
    return out


def sym_to_field(grid, sym):
    d = grid.d
    coeffs = np.empty((d, d) + grid.half_shape, complex)
    for i, j in sym_pairs(d):
        c = forward_transform(grid, sym[i, j]).coeffs
        coeffs[i, j] = c
        if i != j:
            coeffs[j, i] = c
    return SpectralField(grid, coeffs)


def sym_norms(grid, sym, s):
    """(L1, L2, H^{-s}) of a symmetric matrix field given by its samples."""
    d = grid.d
    l1 = float(_frobenius(sym, d).mean())
    e2 = 0.0
    h2 = 0.0
    for i, j in sym_pairs(d):
        f = forward_transform(grid, sym[i, j])
        w = 1.0 if i == j else 2.0
        e2 += w * f.l2_norm() ** 2
        h2 += w * sobolev_norm(f, -s) ** 2
    return {"L1": l1, "L2": math.sqrt(e2), "H-s": math.sqrt(h2)}


# amplitudes

@dataclass
class BesovAmplitudes:
    values: np.ndarray  # (K,) + grid shape
    level: float  # c = 4 d^2 ||R||_inf; the amplitudes reassemble c I - R
    r_sup: float


def amplitudes_from_samples(sym, d, catalog, chunk=256):
    """a_k = (8 d^2 M)^{1/2} Gamma_k(I - R / (4 d^2 M)), M the grid max of |R|."""
    shape = sym[0, 0].shape
    M = float(_frobenius(sym, d).max())
    K = len(catalog)
    out = np.zeros((K,) + shape)
    if M == 0.0:
        return BesovAmplitudes(out, 0.0, 0.0)
    c = 4.0 * d * d * M
    eye = np.eye(d)
    for s in range(0, shape[0], chunk):
        sl = slice(s, min(s + chunk, shape[0]))
        X = np.empty(sym[0, 0][sl].shape + (d, d))
        for i, j in sym_pairs(d):
            X[..., i, j] = X[..., j, i] = eye[i, j] - sym[i, j][sl] / c
        sq = gamma_squares(catalog, X)
        out[:, sl] = np.sqrt(2.0 * c * np.moveaxis(sq, -1, 0))
    return BesovAmplitudes(out, c, M)


def besov_amplitudes(R, catalog=None):
    """Amplitudes on the grid of R; R = 0 gives a_k = 0."""
    d = R.grid.d
    catalog = catalog or build_catalog(d)
    return amplitudes_from_samples(sym_samples(R), d, catalog)


def reassembly_error(amps, sym, d, catalog):
    """max |1/2 sum a_k^2 k (x) k - (c I - R)| / max(c, 1)."""
    err = 0.0
    for i, j in sym_pairs(d):
        acc = np.zeros_like(sym[i, j])
        for n, k in enumerate(catalog.directions):
            if k[i] * k[j]:
                acc += 0.5 * k[i] * k[j] * amps.values[n] ** 2
        target = (amps.level if i == j else 0.0) - sym[i, j]
        err = max(err, float(np.abs(acc - target).max()))
    return err / max(amps.level, 1.0)


# phases

def phase_index(grid, xi):
    """(xi . i) mod G for every grid index i, as integers."""
    G = grid.G
    dt = np.int32 if G * (sum(abs(int(c)) for c in xi) + 1) < 2**31 else np.int64
    out = np.zeros(grid.shape, dt)
    idx = np.arange(G, dtype=dt)
    for a, c in enumerate(xi):
        shp = [1] * grid.d
        shp[a] = G
        out += ((int(c) * idx) % G).astype(dt).reshape(shp)
    out %= G
    return out


def cos_table(G):
    return np.cos(2.0 * np.pi * np.arange(G) / G)


# parameters

def step_parameters(state, lam, p, theta, delta, mode, e_eff=1, catalog=None):
    d = state.d
    catalog = catalog or build_catalog(d)
    lam = int(lam)
    if lam < 4 or (lam.bit_length() - 1) % 2 or lam & (lam - 1):
        raise ParameterError(f"lambda must be a power of 4, got {lam}")
    eps, beta, s = besov_parameters(lam, p, d, state.alpha)
    e = theta_to_e(theta) if mode == "strict" else int(e_eff)
    plan = select_sigma(lam, e, catalog)
    mu_paper = float(lam) ** float(beta)
    mu = max(mu_paper, mu_min(catalog))
    gamma = math.isqrt(lam)
    params = ParameterSet(lam, mu, gamma, plan.sigma, tuple(plan.sigma_k), e, float(eps),
                          float(beta), float(s), float(delta), float(p), float(theta),
                          mode, 0, mu_paper)
    return params, plan


def step_grid(state, params, plan, catalog):
    """Smallest power of two holding supp w + supp u strictly inside the lattice box.

    Also large enough for the state grid and for the tubes at scale mu / gamma.
    """
    ext = max(max(abs(s * c) for c in p) for s, p in zip(plan.sigma_k, catalog.perpendiculars))
    need = ext + 2 * params.lam + state.N
    G = 4
    while G // 2 <= need:
        G *= 2
    while G < state.grid.G:
        G *= 2
    tube = params.gamma * required_grid(catalog, params.mu)
    while G < tube:
        G *= 2
    return G


# perturbation

@dataclass
class PerturbationBundle:
    grid: TorusGrid
    amplitudes: BesovAmplitudes
    w_hat: SparseSeries  # coefficients of w on the full lattice
    w_p: np.ndarray  # (d,) + grid shape
    w_c: np.ndarray  # w_l + w_d
    checks: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)

    def w(self):
        return self.w_hat.to_field(self.grid)


def _projected_profile(family, n, lam):
    """Sparse coefficients of P_{<=lam}(psi_k(gamma .)) on the full lattice.

    The profile is exactly invariant along k, so only modes with j . k = 0
    are kept; the others carry rounding noise only.
    """
    g = family.gamma
    cut = Fraction(lam, g)
    if cut.denominator != 1:
        raise ParameterError("lambda / gamma must be an integer")
    base = family.psi_base[n]
    pb = project_leq(int(cut), base)
    s = from_field(pb, float(cut))
    k = np.array(family.catalog.directions[n])
    keep = (s.points @ k) == 0
    s = SparseSeries(s.points[keep], s.values[keep])
    phys = s.to_field(base.grid).physical()
    return SparseSeries(s.points * g, s.values), phys


def _potential_series(psi_s, k):
    """Omega_k coefficients from Psi_k coefficients: k (x) v - v (x) k, v = grad Lap^{-1} Psi."""
    m = psi_s.points.astype(float)
    m2 = (m * m).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(m2 > 0, -1.0 / (2.0 * np.pi * m2), 0.0)
    v = (1j * fac)[:, None] * m * psi_s.values[:, None]
    d = len(k)
    om = np.zeros((len(m), d, d), complex)
    for i in range(d):
        for j in range(i + 1, d):
            a = k[i] * v[:, j] - v[:, i] * k[j]
            om[:, i, j] = a
            om[:, j, i] = -a
    return SparseSeries(psi_s.points, om)


def _gradient_series(s):
    m = s.points.astype(float)
    return SparseSeries(s.points, 2j * np.pi * m * s.values[:, None])


def besov_perturbation(state, params, family, plan, grid, catalog=None, R_sym=None):
    d = state.d
    catalog = catalog or family.catalog
    lam = params.lam
    G = grid.G
    if R_sym is None:
        R_sym = sym_samples(state.R, grid)
    amps = amplitudes_from_samples(R_sym, d, catalog)
    checks = {"amplitude_reassembly": reassembly_error(amps, R_sym, d, catalog)}
    del R_sym
    table = cos_table(G)
    w_p = np.zeros((d,) + grid.shape)
    w_l = np.zeros((d,) + grid.shape)
    A = SparseSeries(np.zeros((0, d), np.int64), np.zeros((0, d, d)))
    wd_hat = SparseSeries(np.zeros((0, d), np.int64), np.zeros((0, d)))
    wpl_hat = SparseSeries(np.zeros((0, d), np.int64), np.zeros((0, d)))
    div_omega = 0.0
    carriers = plan.carriers(catalog)
    for n in range(len(catalog)):
        k = catalog.k(n)
        a = amps.values[n]
        pa_s = from_field(forward_transform(grid, a), lam,
                          symbol=lambda pts: chi(np.sqrt((pts.astype(float) ** 2).sum(axis=1)) / lam))
        pa = pa_s.to_field(grid).physical()
        pp_s, pp_base = _projected_profile(family, n, lam)
        pp = np.tile(pp_base, (family.gamma,) * d)
        psi = family.psi_physical(n)
        cosk = table[phase_index(grid, carriers[n])]
        t = a * psi
        t *= cosk
        for i in range(d):
            if k[i]:
                w_p[i] += k[i] * t
        # w_l = -a P_{>lam}psi cos k - P_{>lam}a P_{<=lam}psi cos k
        psi -= pp
        psi *= a
        a_hi = a - pa
        a_hi *= pp
        psi += a_hi
        psi *= cosk
        for i in range(d):
            if k[i]:
                w_l[i] -= k[i] * psi
        del t, psi, a_hi, pa, pp, cosk
        Psi = cosine_modulation(pp_s, carriers[n])
        Om = _potential_series(Psi, k)
        # Div Omega_k - Psi_k k, coefficientwise
        dv = np.einsum("nij,nj->ni", Om.values, 2j * np.pi * Om.points)
        div_omega = max(div_omega, float(np.abs(dv - Psi.values[:, None] * k).max(initial=0.0)))
        A = A.combine(pa_s.convolve(Om))
        g = _gradient_series(pa_s).convolve(Om)  # (n, j, i, j')
        wd_hat = wd_hat.combine(SparseSeries(g.points, np.einsum("njij->ni", g.values)))
        prod = pa_s.convolve(Psi)
        wpl_hat = wpl_hat.combine(SparseSeries(prod.points, prod.values[:, None] * k))
    w_hat = SparseSeries(A.points, np.einsum("nij,nj->ni", A.values, 2j * np.pi * A.points))
    checks["div_omega_minus_W"] = div_omega
    sc = float(np.abs(w_hat.values).max(initial=0.0))
    # coefficientwise Leibniz split: w = (w_p + w_l) + w_d
    split = wpl_hat.combine(wd_hat).combine(w_hat.scaled(-1.0))
    checks["split_coeff"] = float(np.abs(split.values).max(initial=0.0)) / sc if sc else 0.0
    # Div w relative to |m| |w_hat|
    if len(w_hat):
        m = w_hat.points.astype(float)
        dw = np.abs((m * w_hat.values).sum(axis=1))
        nrm = np.sqrt((m * m).sum(axis=1)) * np.sqrt((np.abs(w_hat.values) ** 2).sum(axis=1))
        checks["div_w"] = float(dw.max() / nrm.max()) if nrm.max() > 0 else 0.0
    else:
        checks["div_w"] = 0.0
    checks["support_annulus"] = support_in_annulus(w_hat, plan.sigma)
    # pointwise: w_p + w_l against its band-limited form, and w = w_p + w_l + w_d
    wpl = wpl_hat.to_field(grid).physical()
    top = float(np.abs(wpl).max()) or 1.0
    checks["wp_plus_wl"] = float(np.abs(w_p + w_l - wpl).max()) / top
    del wpl
    values = {"wl_Linf": float(np.sqrt((w_l**2).sum(axis=0)).max())}
    w_d = wd_hat.to_field(grid).physical()
    w_l += w_d
    del w_d
    w = w_hat.to_field(grid).physical()
    top = float(np.abs(w).max()) or 1.0
    checks["w_split_pointwise"] = float(np.abs(w_p + w_l - w).max()) / top
    return PerturbationBundle(grid, amps, w_hat, w_p, w_l, checks, values)


def support_in_annulus(w_hat, sigma):
    """Every stored mode satisfies sigma/2 < |m| < 9 sigma/10 (integer test)."""
    if len(w_hat) == 0:
        return True
    m2 = (w_hat.points.astype(np.int64) ** 2).sum(axis=1)
    live = np.abs(w_hat.values).max(axis=1) > 0
    m2 = m2[live]
    return bool(np.all(4 * m2 > sigma * sigma) and np.all(100 * m2 < 81 * sigma * sigma))


# stress

def _dsym(grid, j):
    """2 pi i m_j as a broadcastable array, zero where m_j is a Nyquist index."""
    k = grid.wavenumbers()[j]
    return np.where(np.abs(k) == grid.G // 2, 0.0, 2j * np.pi * k)


def sym_divergence(grid, entry):
    """Coefficients of Div X for a symmetric X given entrywise by entry(i, j) samples."""
    d = grid.d
    out = np.zeros((d,) + grid.half_shape, complex)
    D = [_dsym(grid, j) for j in range(d)]
    for i, j in sym_pairs(d):
        c = forward_transform(grid, entry(i, j)).coeffs
        out[i] += D[j] * c
        if i != j:
            out[j] += D[i] * c
        del c
    return out


@dataclass
class StressBundle:
    R_bar: SpectralField
    components: dict  # name -> {"L1", "L2", "H-s"}
    checks: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)


def besov_stress(state, bundle, params, family, plan, catalog=None):
    d = state.d
    grid = bundle.grid
    catalog = catalog or family.catalog
    s = params.s
    amps = bundle.amplitudes
    c = amps.level
    G = grid.G
    table = cos_table(G)
    carriers = plan.carriers(catalog)
    pairs = sym_pairs(d)
    comps = {}
    R_osc = {ij: np.zeros(grid.shape) for ij in pairs}
    R_dis = {ij: np.zeros(grid.shape) for ij in pairs}
    h = amps.values  # overwritten in place by a_k psi_k cos_k
    for n in range(len(catalog)):
        k = catalog.k(n)
        a = h[n]
        psi = family.psi_physical(n)
        ph = phase_index(grid, carriers[n])
        q = a * a
        q *= 0.5
        osc = psi * psi
        osc -= 1.0
        osc *= q
        q *= psi
        q *= psi
        ph2 = ph * 2
        ph2 %= G
        q *= table[ph2]
        del ph2
        for i, j in pairs:
            kk = k[i] * k[j]
            if kk:
                R_osc[i, j] += kk * osc
                R_dis[i, j] += kk * q
        del osc, q
        a *= psi
        a *= table[ph]
        del a, psi, ph
    comps["R_osc"] = sym_norms(grid, R_osc, s)
    comps["R_dis"] = sym_norms(grid, R_dis, s)
    S = R_osc
    for ij in pairs:
        S[ij] += R_dis[ij]
    del R_dis
    R_off = {ij: np.zeros(grid.shape) for ij in pairs}
    K = len(catalog)
    for n in range(K):
        for l in range(n + 1, K):
            kn, kl = catalog.k(n), catalog.k(l)
            prod = h[n] * h[l]
            for i, j in pairs:
                coef = kn[i] * kl[j] + kl[i] * kn[j]
                if coef:
                    R_off[i, j] += coef * prod
            del prod
    del h
    amps.values = None
    comps["R_off"] = sym_norms(grid, R_off, s)
    for ij in pairs:
        S[ij] += R_off[ij]
    del R_off
    w = bundle.w_hat.to_field(grid).physical()
    wp, wc = bundle.w_p, bundle.w_c
    R_cor = {}
    for i, j in pairs:
        R_cor[i, j] = wp[i] * wc[j] + wc[i] * wp[j] + wc[i] * wc[j]
    bundle.w_p = bundle.w_c = None
    del wp, wc
    comps["R_cor"] = sym_norms(grid, R_cor, s)
    for ij in pairs:
        S[ij] += R_cor[ij]
    del R_cor
    # decomposition identity: R + w (x) w - c I = R_osc + R_dis + R_off + R_cor
    R_sym = sym_samples(state.R, grid)
    num = 0.0
    den = 0.0
    for i, j in pairs:
        lhs = R_sym[i, j] + w[i] * w[j]
        if i == j:
            lhs -= c
        wt = 1.0 if i == j else 2.0
        num += wt * float(np.sum((lhs - S[i, j]) ** 2))
        den += wt * float(np.sum(lhs**2))
        del lhs
    checks = {"decomposition": math.sqrt(num / den) if den > 0 else math.sqrt(num)}
    del R_sym
    # linear stress from u (x) w + w (x) u and (-Lap)^alpha w
    u = resample(state.u, grid).physical()
    w_spec = bundle.w_hat.to_field(grid)
    frac = (4.0 * np.pi**2 * grid.mode_norm2()) ** state.alpha
    f = w_spec.coeffs * frac
    lap_w_norm = SpectralField(grid, f).l2_norm()
    del w_spec
    uw = lambda i, j: u[i] * w[j] + w[i] * u[j]
    div_uw = sym_divergence(grid, uw)
    div_uw_norm = leray_project(SpectralField(grid, div_uw)).l2_norm()
    f = f + div_uw
    del div_uw
    lin = antidiv_coeffs(grid, f)
    del f
    R_lin = {}
    for i, j in pairs:
        R_lin[i, j] = SpectralField(grid, lin[i, j]).physical()
    del lin
    comps["R_lin"] = sym_norms(grid, R_lin, s)
    for ij in pairs:
        S[ij] += R_lin[ij]
    del R_lin
    # master residual: P(Div(R_bar - R - w (x) w - u (x) w - w (x) u) - (-Lap)^alpha w)
    R_sym = sym_samples(state.R, grid)
    w_spec = bundle.w_hat.to_field(grid)
    res = sym_divergence(grid, lambda i, j: S[i, j] - R_sym[i, j] - w[i] * w[j] - uw(i, j))
    res -= w_spec.coeffs * frac
    r = leray_project(SpectralField(grid, res)).l2_norm()
    del res, w_spec
    scale = lap_w_norm + div_uw_norm
    for term in (lambda i, j: S[i, j], lambda i, j: R_sym[i, j] + w[i] * w[j]):
        scale += leray_project(SpectralField(grid, sym_divergence(grid, term))).l2_norm()
    del R_sym
    checks["master_residual"] = r / scale if scale > 0 else r
    del u, w
    R_bar = sym_to_field(grid, S)
    checks["R_bar_symmetric"] = bool(np.array_equal(R_bar.coeffs[0, 1], R_bar.coeffs[1, 0]))
    values = {"R_bar_L1": float(_frobenius(S, d).mean())}
    del S
    return StressBundle(R_bar, comps, checks, values)


# acceptance quantities

def paraproduct_quantity(u, w_field, N, s):
    """sum_{M <= 2N} (||P_M u (x) w|| + ||w (x) P_M u||) + ||w (x) w||, all in H^{-s} dot.

    Products are grid collocation products; w (x) w exceeds the grid's
    band and is flagged aliased in the returned dict.
    """
    grid = w_field.grid
    d = grid.d
    w = w_field.physical()
    total = 0.0
    for M, block in present_bands(u).items():
        if M > 2 * N:
            continue
        ub = block.physical()
        for first, second in ((ub, w), (w, ub)):
            acc = 0.0
            for i in range(d):
                for j in range(d):
                    acc += sobolev_norm(forward_transform(grid, first[i] * second[j]), -s,
                                        homogeneous=True) ** 2
            total += math.sqrt(acc)
        del ub
    acc = 0.0
    for i, j in sym_pairs(d):
        wt = 1.0 if i == j else 2.0
        acc += wt * sobolev_norm(forward_transform(grid, w[i] * w[j]), -s,
                                 homogeneous=True) ** 2
    ww = math.sqrt(acc)
    total += ww
    bw = 2 * max(1, int(np.ceil(w_field.bandwidth())))
    return {"total": total, "ww": ww, "aliased": bw >= grid.G // 2}


# driver of one step

def lambda_candidates(N, grid_cap=None):
    """lambda = 4^j with the smallest j giving 4^j > 4N, then j doubled."""
    j = 1
    while 4**j <= 4 * N:
        j += 1
    out = []
    while len(out) < 6:
        out.append(4**j)
        j *= 2
    return out


def besov_attempt(state, params, plan, catalog):
    """Build w and R_bar for fixed parameters; returns (new state, values, checks)."""
    d = state.d
    G = params.G
    grid = TorusGrid(d, G)
    family = build_family(catalog, params.mu, grid, gamma=params.gamma)
    bundle = besov_perturbation(state, params, family, plan, grid, catalog)
    checks = dict(bundle.checks)
    w_field = bundle.w()
    values = {}
    values["w_L2"] = w_field.l2_norm()
    values["w_Lp"] = lp_from_samples(np.sqrt((w_field.physical() ** 2).sum(axis=0)), params.p)
    values["w_besov"] = besov_norm(w_field, -params.theta, math.inf, 1)
    stress = besov_stress(state, bundle, params, family, plan, catalog)
    del bundle
    checks.update(stress.checks)
    for name, nrm in stress.components.items():
        for key, v in nrm.items():
            values[f"{name}_{key}"] = v
    values["R_bar_H-s"] = sobolev_norm(stress.R_bar, -params.s)
    values["R_bar_L1"] = stress.values["R_bar_L1"]
    values["R_H-s"] = sobolev_norm(state.R, -params.s)
    pq = paraproduct_quantity(resample(state.u, grid), w_field, state.N, params.s)
    values["paraproduct"] = pq["total"]
    values["paraproduct_ww"] = pq["ww"]
    values["paraproduct_aliased"] = pq["aliased"]
    u_new = resample(state.u, grid) + w_field
    sigma = params.sigma
    new = ReynoldsState(u_new, stress.R_bar, state.alpha, n=state.n + 1, N=sigma,
                        D_history=state.D_history + [sigma // state.N],
                        bands=state.bands + [(Fraction(sigma, 2), Fraction(9 * sigma, 10))])
    return new, values, checks


STRUCTURAL_TOLERANCES = {
    "amplitude_reassembly": 1e-10,
    "div_omega_minus_W": 1e-10,
    "split_coeff": 1e-12,
    "wp_plus_wl": 1e-12,
    "w_split_pointwise": 1e-12,
    "div_w": 1e-12,
    "decomposition": 1e-8,
    "master_residual": 1e-6,
}


def structural_ok(checks):
    for key, tol in STRUCTURAL_TOLERANCES.items():
        if key in checks and not checks[key] <= tol:
            return False
    return bool(checks.get("support_annulus", True)) and bool(checks.get("R_bar_symmetric", True))


def _zero_step(state, delta, p, theta, mode):
    params = ParameterSet(0, 0.0, 0, 0, (), 0, 0.0, 0.0, 0.0, float(delta), float(p),
                          float(theta), mode)
    report = RunReport(state.n + 1, "besov", mode, "identity", params.as_dict(),
                       {"R_bar_H-s": 0.0, "w_Lp": 0.0, "w_besov": 0.0, "paraproduct": 0.0},
                       note="R vanishes; the step is the identity")
    new = ReynoldsState(state.u, state.R, state.alpha, state.n + 1, state.N,
                        list(state.D_history), list(state.bands))
    return new, params, report


def besov_step(state, delta, p, theta, mode="empirical", *, lam=None, e_eff=1,
               grid_cap=None, catalog=None, log=None):
    """One iteration of the frequency-localised scheme.

    Returns (state, parameters, report). A failed or infeasible step returns
    the input state together with a report carrying every measured value.
    """
    if mode not in ("strict", "empirical"):
        raise ParameterError(f"unknown mode {mode!r}")
    d = state.d
    catalog = catalog or build_catalog(d)
    grid_cap = grid_cap or DEFAULT_GRID_CAP[d]
    t0 = time.perf_counter()
    if not np.any(state.R.coeffs):
        return _zero_step(state, delta, p, theta, mode)
    p = Fraction(str(p)) if not isinstance(p, Fraction) else p
    theta = Fraction(str(theta)) if not isinstance(theta, Fraction) else theta
    if mode == "strict":
        lam0 = lam or lambda_candidates(state.N)[0]
        params, plan = step_parameters(state, lam0, p, theta, delta, mode, catalog=catalog)
        rows, info = audit_parameters(lam0, p, theta, d, Fraction(str(state.alpha)), catalog)
        params.G = step_grid(state, params, plan, catalog)
        values = {"audit": [(r.ident, r.slack, r.passed) for r in rows],
                  "required_G": params.G}
        note = ("the constant C of the lambda lower bound is not constructive; "
                "lambda is the smallest admissible power of 4 above 4N")
        if params.G > grid_cap:
            rep = RunReport(state.n + 1, "besov", mode, "infeasible", params.as_dict(), values,
                            {"audit_pass": all(r.passed for r in rows)},
                            time.perf_counter() - t0, note)
            return state, params, rep
        new, vals, checks = besov_attempt(state, params, plan, catalog)
        values.update(vals)
        ok = structural_ok(checks) and vals["R_bar_H-s"] < delta
        rep = RunReport(state.n + 1, "besov", mode, "accepted" if ok else "rejected",
                        params.as_dict(), values, checks, time.perf_counter() - t0, note)
        return (new if ok else state), params, rep
    candidates = [int(lam)] if lam else lambda_candidates(state.N)
    last = None
    for lam_j in candidates:
        params, plan = step_parameters(state, lam_j, p, theta, delta, mode, e_eff, catalog)
        params.G = step_grid(state, params, plan, catalog)
        if params.G > grid_cap:
            values = dict(last.values) if last else {}
            values["required_G"] = params.G
            rep = RunReport(state.n + 1, "besov", mode, "failed", params.as_dict(), values,
                            dict(last.checks) if last else {}, time.perf_counter() - t0,
                            f"grid cap {grid_cap} reached at lambda={lam_j}")
            return state, params, rep
        if log:
            log(f"besov step n={state.n + 1}: lambda={lam_j} sigma={params.sigma} G={params.G}")
        new, values, checks = besov_attempt(state, params, plan, catalog)
        accepted = (structural_ok(checks)
                    and values["R_bar_H-s"] < delta
                    and values["w_Lp"] < delta
                    and values["w_besov"] < delta
                    and values["paraproduct"] < delta + values["R_H-s"])
        rep = RunReport(state.n + 1, "besov", mode, "accepted" if accepted else "rejected",
                        params.as_dict(), values, checks, time.perf_counter() - t0)
        if accepted:
            return new, params, rep
        last = rep
        del new
    rep = RunReport(state.n + 1, "besov", mode, "failed", params.as_dict(), last.values,
                    last.checks, time.perf_counter() - t0, "lambda candidates exhausted")
    return state, params, rep
