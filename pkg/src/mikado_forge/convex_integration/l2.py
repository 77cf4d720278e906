"""L2 iteration step with undiluted tubes.

The amplitudes a_k = rho^{1/2} Gamma_k(I - R/rho) are smooth but not
band-limited. They are truncated to a box |m|_inf < B whose tail falls
below a relative threshold, and the tube profiles are truncated to a box in
base units. The step grid is chosen so that every product formed below fits
strictly inside its lattice, which makes collocation products exact: the
divergence of w, the oscillation identity and the master residual then hold
up to rounding plus the amplitude truncation error.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import fft as sfft

from ..antidivergence import antidiv_coeffs
from ..errors import DomainError, ParameterError
from ..mikado import build_family, mu_min, required_grid
from ..nash_geometry import build_catalog, gamma_squares
from ..spectral_core import (SpectralField, TorusGrid, derivative_symbol,
                             forward_transform, inverse_laplacian_symbol,
                             leray_project, resample, smoothstep)
from .besov import _dsym, _frobenius, sym_divergence, sym_pairs, sym_samples, sym_to_field
from .state import ParameterSet, ReynoldsState, RunReport

DEFAULT_L2_GRID_CAP = {2: 4096, 3: 192}
# sup of |X| / zeta(X) for the smoothstep interpolation (attained near t = 1.344)
ZETA_RATIO_SUP = 0.31431


def zeta(mag, L1):
    """4 L1 below L1, 4|X| above 2 L1, smoothstep blend in between."""
    mag = np.asarray(mag, dtype=float)
    h = smoothstep(mag / L1 - 1.0)
    return 4.0 * L1 * (1.0 - h) + 4.0 * mag * h


def alpha_range_ok(d, alpha):
    return 0 < alpha < (d + 1) / 4


def l2_exponents(d, alpha):
    """(eps, e_mu) with mu = gamma^e_mu; exact for rational alpha."""
    alpha = Fraction(str(alpha)) if not isinstance(alpha, Fraction) else alpha
    eps = Fraction(1, 3) * min(Fraction(1), Fraction(d - 1, 2) - (2 * alpha - 1))
    return eps, 2 * math.ceil(alpha / eps)


@dataclass
class L2Amplitudes:
    values: np.ndarray  # (K,) + grid shape
    rho: np.ndarray
    L1: float
    ratio_sup: float  # max |R| / rho
    gamma_min: float  # min Gamma_k^2 over the grid


def l2_amplitudes_from_samples(sym, d, catalog, L1=None, chunk=256):
    shape = sym[0, 0].shape
    mag = _frobenius(sym, d)
    if L1 is None:
        L1 = float(mag.mean())
    K = len(catalog)
    if L1 == 0.0:
        return L2Amplitudes(np.zeros((K,) + shape), np.zeros(shape), 0.0, 0.0, 0.0)
    rho = zeta(mag, L1)
    ratio = float((mag / rho).max())
    del mag
    out = np.empty((K,) + shape)
    eye = np.eye(d)
    gmin = math.inf
    for s in range(0, shape[0], chunk):
        sl = slice(s, min(s + chunk, shape[0]))
        X = np.empty(sym[0, 0][sl].shape + (d, d))
        r = rho[sl]
        for i, j in sym_pairs(d):
            X[..., i, j] = X[..., j, i] = eye[i, j] - sym[i, j][sl] / r
        # |R/rho| reaches 0.314 on the blend; positivity is checked directly
        sq = gamma_squares(catalog, X, check=False)
        gmin = min(gmin, float(sq.min()))
        if gmin <= 0:
            raise DomainError(f"Gamma_k^2 = {gmin:.3g} is not positive")
        out[:, sl] = np.sqrt(r * np.moveaxis(sq, -1, 0))
    return L2Amplitudes(out, rho, L1, ratio, gmin)


def l2_amplitudes(R, catalog=None):
    """(a_k samples, rho samples) on the grid of R; sum a_k^2 k (x) k = rho I - R."""
    d = R.grid.d
    catalog = catalog or build_catalog(d)
    amps = l2_amplitudes_from_samples(sym_samples(R), d, catalog)
    return amps


def l2_reassembly_error(amps, sym, d, catalog):
    """max over the grid of |sum a_k^2 k (x) k - (rho I - R)|_F / max rho."""
    if amps.L1 == 0.0:
        return 0.0
    err = 0.0
    for i, j in sym_pairs(d):
        acc = -amps.rho * (1.0 if i == j else 0.0) + sym[i, j]
        for n, k in enumerate(catalog.directions):
            if k[i] * k[j]:
                acc = acc + k[i] * k[j] * amps.values[n] ** 2
        err = max(err, float(np.abs(acc).max()))
    return err / float(amps.rho.max())


# band limits

def linf_index(grid):
    """|m|_inf for every half-spectrum coefficient."""
    ks = grid.wavenumbers()
    out = np.abs(ks[0])
    for k in ks[1:]:
        out = np.maximum(out, np.abs(k))
    return np.broadcast_to(out, grid.half_shape).astype(np.int64)


def tail_profile(coeffs, grid):
    """t[B] = max |c(m)| over |m|_inf >= B, for B = 0..G/2."""
    idx = linf_index(grid).ravel()
    top = np.zeros(grid.G // 2 + 1)
    np.maximum.at(top, idx, np.abs(coeffs).reshape(-1, idx.size).max(axis=0))
    return np.maximum.accumulate(top[::-1])[::-1]


def amplitude_band(state, catalog, tol=1e-8, trial_G=256, max_G=2048):
    """Smallest B with every a_k coefficient at |m|_inf >= B below tol * max|a_k hat|."""
    d = state.d
    G = max(trial_G, state.grid.G)
    while G <= max_G:
        grid = TorusGrid(d, G)
        amps = l2_amplitudes_from_samples(sym_samples(state.R, grid), d, catalog)
        if amps.L1 == 0.0:
            return 0
        t = np.max([tail_profile(forward_transform(grid, a).coeffs, grid)
                    for a in amps.values], axis=0)
        hit = np.nonzero(t <= tol * t[0])[0]
        # the last quarter of the trial lattice carries aliasing; demand room
        if hit.size and hit[0] < G // 4:
            return int(hit[0])
        G *= 2
    raise ParameterError(f"amplitude tail above {tol} up to G = {max_G}")


def _even_fast(n):
    n = max(int(n), 2)
    while True:
        m = sfft.next_fast_len(n, real=True)
        if m % 2 == 0:
            return m
        n = m + 1


def l2_grid(state, gamma, profile_band, amp_band):
    """Smallest G = gamma * Gb (Gb even, 5-smooth) holding every product exactly.

    Products reach |m|_inf < 2 (gamma * profile_band + amp_band) and
    N + gamma * profile_band + amp_band; the base grid also holds psi^2.
    """
    P = gamma * profile_band
    need = max(2 * (P + amp_band), state.N + P + amp_band)
    Gb = _even_fast(max(4 * profile_band + 2, 2 * math.ceil((need + 1) / gamma)))
    while gamma * Gb // 2 <= need:
        Gb = _even_fast(Gb + 1)
    G = gamma * Gb
    while G < state.grid.G:
        Gb = _even_fast(Gb + 1)
        G = gamma * Gb
    return G


def box_truncate(coeffs, grid, band):
    """Zero all coefficients with |m|_inf >= band (in place)."""
    mask = linf_index(grid) >= band
    coeffs[..., mask] = 0.0
    return coeffs


@dataclass
class TubeBlocks:
    """Band-limited profiles on the base grid: psi, grad Lap^{-1} psi, R(tau k)."""
    base: TorusGrid
    psi: list
    potential: list
    z: list  # R((psi^2 - 1) k) samples, symmetric dict per direction
    band: int
    renorm: list


def tube_blocks(catalog, mu, base, band):
    """Profiles sampled at twice the resolving grid, truncated to |j|_inf < band.

    The samples are exactly invariant along k, so the truncated set still
    is; mean(psi) = 0 and mean(psi^2) = 1 are restored after truncation.
    """
    d = base.d
    if base.G // 2 <= 2 * band:
        raise ParameterError("base grid cannot hold psi^2 for this band")
    fine = TorusGrid(d, max(2 * required_grid(catalog, mu), 2 * band + 2))
    fam = build_family(catalog, mu, fine)
    D = [derivative_symbol(base, j) for j in range(d)]
    L = inverse_laplacian_symbol(base)
    psi, pot, zs, ren = [], [], [], []
    for n in range(len(catalog)):
        c = np.array(fam.psi_base[n].coeffs)
        box_truncate(c, fine, band)
        f = resample(SpectralField(fine, c), base)
        c = np.array(f.coeffs)
        c[(0,) * d] = 0.0
        e = float(np.sum(np.abs(c) ** 2 * base.parseval_weights()))
        c /= math.sqrt(e)
        ren.append(math.sqrt(e))
        f = SpectralField(base, c)
        x = f.physical()
        psi.append(x)
        pot.append(np.stack([SpectralField(base, D[j] * L * c).physical() for j in range(d)]))
        k = catalog.k(n)
        tau = np.array(forward_transform(base, x * x - 1.0).coeffs)
        tau[(0,) * d] = 0.0
        Z = antidiv_coeffs(base, np.stack([k[i] * tau for i in range(d)]))
        zs.append({(i, j): SpectralField(base, Z[i, j]).physical() for i, j in sym_pairs(d)})
    return TubeBlocks(base, psi, pot, zs, band, ren)


def _tile(x, gamma, d):
    return np.tile(x, (gamma,) * d) if gamma > 1 else x


def _spectral_grad(grid, f):
    c = forward_transform(grid, f).coeffs
    return [SpectralField(grid, _dsym(grid, j) * c).physical() for j in range(grid.d)]


def _relative(num, den):
    return num / den if den > 0 else num


def l2_attempt(state, gamma, mu, catalog, profile_band=None, amp_tol=1e-8, grid_cap=None,
               log=None):
    """Build w and R_bar for fixed (gamma, mu).

    Returns (new state, values, checks) or raises ResourceCapError through
    the caller's grid check.
    """
    d = state.d
    pairs = sym_pairs(d)
    profile_band = profile_band or required_grid(catalog, mu) // 4
    B = amplitude_band(state, catalog, amp_tol)
    G = l2_grid(state, gamma, profile_band, B)
    values = {"G": G, "amp_band": B, "profile_band": profile_band}
    if grid_cap and G > grid_cap:
        return None, values, {}
    if log:
        log(f"l2 step n={state.n + 1}: gamma={gamma} mu={mu:.4g} B={B} G={G}")
    grid = TorusGrid(d, G)
    base = TorusGrid(d, G // gamma)
    tubes = tube_blocks(catalog, mu, base, profile_band)
    R_sym = sym_samples(state.R, grid)
    amps = l2_amplitudes_from_samples(R_sym, d, catalog)
    values["R_L1"] = amps.L1
    values["zeta_ratio_sup"] = amps.ratio_sup
    values["gamma_sq_min"] = amps.gamma_min
    checks = {"amplitude_reassembly": l2_reassembly_error(amps, R_sym, d, catalog)}
    a = amps.values
    rho = amps.rho
    amps.values = None
    for n in range(len(catalog)):
        c = np.array(forward_transform(grid, a[n]).coeffs)
        box_truncate(c, grid, B)
        a[n] = SpectralField(grid, c).physical()
    del c
    # truncated reassembly against rho I - R
    num = den = 0.0
    for i, j in pairs:
        acc = (rho if i == j else 0.0) - R_sym[i, j]
        den += float(np.sum(acc**2)) * (1 if i == j else 2)
        for n, k in enumerate(catalog.directions):
            if k[i] * k[j]:
                acc = acc - k[i] * k[j] * a[n] ** 2
        num += float(np.sum(acc**2)) * (1 if i == j else 2)
    checks["amplitude_truncation"] = math.sqrt(num / den)
    del acc, R_sym

    wp = np.zeros((d,) + grid.shape)
    wc = np.zeros((d,) + grid.shape)
    R_off = {ij: np.zeros(grid.shape) for ij in pairs}
    R_osc = {ij: np.zeros(grid.shape) for ij in pairs}
    g = np.zeros((d,) + grid.shape)  # sum_k Z_k grad phi_k
    tphi = np.zeros((d,) + grid.shape)  # sum_k T_k grad(a_k^2)
    wpwp = {ij: np.zeros(grid.shape) for ij in pairs}  # sum a_k^2 psi_k^2 k (x) k
    for n in range(len(catalog)):
        k = catalog.k(n)
        psi = _tile(tubes.psi[n], gamma, d)
        h = a[n] * psi
        # R_off: sum over l < n of h_l h_n (k_l (x) k_n + k_n (x) k_l)
        for i, j in pairs:
            R_off[i, j] += h * (wp[i] * k[j] + k[i] * wp[j])
            if k[i] * k[j]:
                wpwp[i, j] += (k[i] * k[j]) * h * h
        for i in range(d):
            if k[i]:
                wp[i] += k[i] * h
        del h
        # w_c: gamma^{-1} (k_i (grad a . v) - v_i (k . grad a)) with v = potential(gamma x)
        grad = _spectral_grad(grid, a[n])
        v = [_tile(tubes.potential[n][j], gamma, d) for j in range(d)]
        gv = sum(grad[j] * v[j] for j in range(d))
        kg = sum(k[j] * grad[j] for j in range(d) if k[j])
        for i in range(d):
            t = -v[i] * kg
            if k[i]:
                t += k[i] * gv
            wc[i] += t / gamma
        del grad, v, gv, kg
        # R_osc: B(grad a^2, T_k) = phi Z - R(Z grad phi) with phi = k . grad a^2
        a2 = a[n] * a[n]
        a2c = forward_transform(grid, a2).coeffs
        del a2
        phic = sum(k[j] * _dsym(grid, j) for j in range(d) if k[j]) * a2c
        del a2c
        phi = SpectralField(grid, phic).physical()
        dphi = [SpectralField(grid, _dsym(grid, j) * phic).physical() for j in range(d)]
        del phic
        Z = {ij: _tile(tubes.z[n][ij], gamma, d) / gamma for ij in pairs}
        for i, j in pairs:
            R_osc[i, j] += phi * Z[i, j]
        for m in range(d):
            for j in range(d):
                g[m] += Z[min(m, j), max(m, j)] * dphi[j]
        tau = psi * psi - 1.0
        tau *= phi
        for i in range(d):
            if k[i]:
                tphi[i] += k[i] * tau
        del Z, phi, dphi, tau, psi
    del a
    gc = forward_transform(grid, g).coeffs
    del g
    lin = antidiv_coeffs(grid, gc)
    del gc
    for i, j in pairs:
        R_osc[i, j] -= SpectralField(grid, lin[i, j]).physical()
    del lin
    # composition: Div R_osc - sum T_k grad a_k^2 is constant
    div_osc = sym_divergence(grid, lambda i, j: R_osc[i, j])
    tc = np.array(forward_transform(grid, tphi).coeffs)
    del tphi
    zero = (0,) * d
    diff = div_osc - tc
    diff[(slice(None),) + zero] = 0.0
    tc[(slice(None),) + zero] = 0.0
    checks["osc_composition"] = _relative(SpectralField(grid, diff).l2_norm(),
                                          SpectralField(grid, tc).l2_norm())
    del div_osc, tc, diff

    w = wp + wc
    wf = forward_transform(grid, w)
    divw = sum(_dsym(grid, j) * wf.coeffs[j] for j in range(d))
    gradw = sum(np.abs(_dsym(grid, j) * wf.coeffs[j]) ** 2 for j in range(d))
    checks["div_w"] = _relative(float(np.sqrt(np.sum(np.abs(divw) ** 2 * grid.parseval_weights()))),
                                float(np.sqrt(np.sum(gradw * grid.parseval_weights()))))
    del divw, gradw
    checks["w_mean"] = float(np.abs(wf.coeffs[(slice(None),) + zero]).max())
    values["w_L2"] = wf.l2_norm()
    values["wp_L2"] = float(np.sqrt((wp**2).sum(axis=0).mean()))
    values["wc_L2"] = float(np.sqrt((wc**2).sum(axis=0).mean()))
    R_cor = {ij: wp[ij[0]] * wc[ij[1]] + wc[ij[0]] * wp[ij[1]] + wc[ij[0]] * wc[ij[1]]
             for ij in pairs}
    # algebra of w (x) w = sum a^2 psi^2 k (x) k + R_off + R_cor
    num = den = 0.0
    for i, j in pairs:
        wt = 1 if i == j else 2
        ww = w[i] * w[j]
        num += wt * float(np.sum((ww - wpwp[i, j] - R_off[i, j] - R_cor[i, j]) ** 2))
        den += wt * float(np.sum(ww**2))
    checks["decomposition"] = math.sqrt(num / den) if den > 0 else math.sqrt(num)
    del wp, wc, wpwp, ww
    comps = {"R_osc": R_osc, "R_off": R_off, "R_cor": R_cor}
    for name, S in comps.items():
        values[f"{name}_L1"] = float(_frobenius(S, d).mean())
    S = R_osc
    for ij in pairs:
        S[ij] += R_off[ij] + R_cor[ij]
    del R_off, R_cor, comps
    # R_lin = R (-Lap)^alpha w + u (x) w + w (x) u
    u = resample(state.u, grid).physical()
    frac = (4.0 * np.pi**2 * grid.mode_norm2()) ** state.alpha
    lap_w = wf.coeffs * frac
    lin = antidiv_coeffs(grid, lap_w)
    R_lin = {}
    for i, j in pairs:
        R_lin[i, j] = SpectralField(grid, lin[i, j]).physical() + u[i] * w[j] + w[i] * u[j]
    del lin
    values["R_lin_L1"] = float(_frobenius(R_lin, d).mean())
    for ij in pairs:
        S[ij] += R_lin[ij]
    del R_lin
    # master residual with the pressure -rho
    R_sym = sym_samples(state.R, grid)
    uw = lambda i, j: u[i] * w[j] + w[i] * u[j]
    res = sym_divergence(grid, lambda i, j: S[i, j] - R_sym[i, j] - w[i] * w[j] - uw(i, j))
    res -= lap_w
    rc = forward_transform(grid, rho).coeffs
    for j in range(d):
        res[j] += _dsym(grid, j) * rc
    r = leray_project(SpectralField(grid, res)).l2_norm()
    del res
    scale = SpectralField(grid, lap_w).l2_norm()
    scale += float(np.sqrt(sum(np.sum(np.abs(_dsym(grid, j) * rc) ** 2 * grid.parseval_weights())
                               for j in range(d))))
    del rc, lap_w
    for term in (lambda i, j: S[i, j], lambda i, j: R_sym[i, j] + w[i] * w[j], uw):
        scale += leray_project(SpectralField(grid, sym_divergence(grid, term))).l2_norm()
    checks["master_residual"] = _relative(r, scale)
    del R_sym, u, w, rho
    values["R_bar_L1"] = float(_frobenius(S, d).mean())
    R_bar = sym_to_field(grid, S)
    del S
    values["A_meas"] = values["w_L2"] / math.sqrt(amps.L1)
    u_new = resample(state.u, grid) + wf
    top = max(state.N, B + gamma * profile_band)
    new = ReynoldsState(u_new, R_bar, state.alpha, n=state.n + 1, N=1 << top.bit_length(),
                        D_history=list(state.D_history), bands=list(state.bands))
    return new, values, checks


L2_TOLERANCES = {
    "amplitude_reassembly": 1e-10,
    "div_w": 1e-12,
    "w_mean": 1e-12,
    "decomposition": 1e-10,
    "osc_composition": 1e-6,
    "master_residual": 1e-6,
}


def l2_structural_ok(checks):
    return all(key in checks and checks[key] <= tol for key, tol in L2_TOLERANCES.items())


def l2_step(state, delta, *, gamma=None, mu=None, gammas=(8, 16, 32), catalog=None,
            grid_cap=None, profile_band=None, amp_tol=1e-8, log=None):
    """One L2 step; gamma escalates over ``gammas`` until ||R_bar||_L1 < delta^2.

    mu defaults to mu_min: the prescribed gamma^{2 ceil(alpha/eps)} is
    recorded as mu_paper but exceeds any desk grid.
    """
    d = state.d
    if not alpha_range_ok(d, state.alpha):
        raise ParameterError(f"alpha={state.alpha} outside (0, {(d + 1) / 4})")
    catalog = catalog or build_catalog(d)
    grid_cap = grid_cap or DEFAULT_L2_GRID_CAP[d]
    t0 = time.perf_counter()
    eps, e_mu = l2_exponents(d, state.alpha)
    mu = float(mu or mu_min(catalog))
    if not np.any(state.R.coeffs):
        params = ParameterSet(0, mu, 0, 0, (), e_mu, float(eps), 0.0, 0.0, float(delta),
                              2.0, 0.0, "empirical")
        rep = RunReport(state.n + 1, "l2", "empirical", "identity", params.as_dict(),
                        {"R_bar_L1": 0.0, "w_L2": 0.0}, note="R vanishes; the step is the identity")
        new = ReynoldsState(state.u, state.R, state.alpha, state.n + 1, state.N,
                            list(state.D_history), list(state.bands))
        return new, params, rep
    last = None
    params = None
    for g in ([int(gamma)] if gamma else list(gammas)):
        params = ParameterSet(0, mu, g, 0, (), e_mu, float(eps), 0.0, 0.0, float(delta), 2.0,
                              0.0, "empirical", mu_paper=float(g) ** e_mu)
        new, values, checks = l2_attempt(state, g, mu, catalog, profile_band, amp_tol,
                                         grid_cap, log)
        params.G = values["G"]
        if new is None:
            vals = dict(last.values) if last else {}
            vals["required_G"] = values["G"]
            rep = RunReport(state.n + 1, "l2", "empirical", "failed", params.as_dict(), vals,
                            dict(last.checks) if last else {}, time.perf_counter() - t0,
                            f"grid cap {grid_cap} reached at gamma={g}")
            return state, params, rep
        ok = l2_structural_ok(checks) and values["R_bar_L1"] < delta**2
        rep = RunReport(state.n + 1, "l2", "empirical", "accepted" if ok else "rejected",
                        params.as_dict(), values, checks, time.perf_counter() - t0)
        if ok or gamma:
            return (new if ok else state), params, rep
        last = rep
        del new
    rep = RunReport(state.n + 1, "l2", "empirical", "failed", params.as_dict(), last.values,
                    last.checks, time.perf_counter() - t0, "gamma candidates exhausted")
    return state, params, rep
