"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Lines are collected in LINES and printed in the terminal summary.
"""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from mikado_forge.antidivergence import antidiv, bilinear_antidiv, transpose_apply
from mikado_forge.cli import main as cli_main
from mikado_forge.convex_integration.besov import besov_step
from mikado_forge.convex_integration.driver import band_bookkeeping, run_schedule
from mikado_forge.convex_integration.l2 import l2_attempt
from mikado_forge.convex_integration.state import Schedule, seed_state
from mikado_forge.dynamics import (EvolutionConfig, evolve, flux_forms, heat_semigroup,
                                   nonuniqueness_gap, random_solenoidal)
from mikado_forge.frequency_arith import check_plan, select_sigma
from mikado_forge.mikado import build_family, mu_min
from mikado_forge.nash_geometry import build_catalog, gamma_squares, reassemble
from mikado_forge.norms import lp_norm
from mikado_forge.spectral_core import (SpectralField, TorusGrid, divergence, gradient,
                                        random_field)

LINES = []


def record(n, ok, elapsed, limit, detail):
    ok = bool(ok) and elapsed < limit
    line = (f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  "
            f"({elapsed:.1f} s, limit {limit:g} s)  {detail}")
    LINES.append((n, line))
    print(line)
    return ok


def matrix_div(M):
    return SpectralField.stack([divergence(M[i]) for i in range(M.grid.d)])


def drop_mean(f):
    c = np.array(f.coeffs)
    c[(Ellipsis,) + (0,) * f.grid.d] = 0
    return f.with_coeffs(c)


def log_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# shared runs

def single_step_schedule(schedule, n):
    return Schedule(schedule.delta[n - 1:n], schedule.p[n - 1:n], schedule.theta[n - 1:n])


@pytest.fixture(scope="module")
def besov_run():
    """Main schedule for two steps from the d = 2, alpha = 1 seed, one step at a time."""
    t0 = time.perf_counter()
    schedule = Schedule.main(2)
    states = [seed_state(2, 1.0)]
    reports = []
    for n in (1, 2):
        state, reps = run_schedule(states[-1], single_step_schedule(schedule, n))
        reports += reps
        if not reps[-1].accepted:
            break
        states.append(state)
    return {"schedule": schedule, "states": states, "reports": reports,
            "elapsed": time.perf_counter() - t0}


# 1

def test_criterion_01_antidivergence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_div, worst_sym = 0.0, 0.0
    for d in (2, 3):
        g = TorusGrid(d, 64)
        for _ in range(20):
            f = random_field(g, 1, 20, rng, mean_free=True)
            R = antidiv(f)
            worst_div = max(worst_div, (matrix_div(R) - drop_mean(f)).l2_norm() / f.l2_norm())
            c = R.coeffs
            top = np.abs(c).max()
            asym = np.abs(c - np.swapaxes(c, 0, 1)).max() / top
            trace = np.abs(sum(c[i, i] for i in range(d))).max() / top
            worst_sym = max(worst_sym, asym, trace)
    ok = worst_div <= 1e-12 and worst_sym <= 1e-12
    assert record(1, ok, time.perf_counter() - t0, 5,
                  f"max rel |Div Rf - f| = {worst_div:.2e}, max sym/trace = {worst_sym:.2e}")


# 2

def test_criterion_02_bilinear():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    g = TorusGrid(2, 64)
    worst = 0.0
    aliased = False
    for _ in range(20):
        f = random_field(g, 1, 12, rng)
        X = random_field(g, 2, 12, rng)
        B = bilinear_antidiv(f, X)
        aliased |= B.aliased
        target = transpose_apply(X, f)
        err = drop_mean(matrix_div(B) - target).l2_norm() / drop_mean(target).l2_norm()
        worst = max(worst, err)
    ok = worst <= 1e-6 and not aliased
    assert record(2, ok, time.perf_counter() - t0, 10,
                  f"max rel mean-free residual = {worst:.2e}, dealiased = {not aliased}")


# 3

def ball_samples(d, n, rng):
    out = np.empty((n, d, d))
    for i in range(n):
        A = rng.uniform(-1, 1, (d, d))
        A = (A + A.T) / 2
        out[i] = np.eye(d) + A / np.abs(np.linalg.eigvalsh(A)).max() * 0.25 * rng.uniform()
    return out


def test_criterion_03_nash():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    res, mins = {}, {}
    for d in (2, 3):
        cat = build_catalog(d)
        R = ball_samples(d, 1000, rng)
        sq = gamma_squares(cat, R)
        res[d] = float(np.abs(reassemble(cat, sq) - R).max())
        mins[d] = (float(sq.min()), float(cat.margin))
    ok = (max(res.values()) <= 1e-12 and mins[2][0] >= 1 / 32 and mins[3][0] >= mins[3][1])
    assert record(3, ok, time.perf_counter() - t0, 1,
                  f"reassembly {max(res.values()):.1e}; min Gamma^2 d=2 {mins[2][0]:.4f} "
                  f"(>= 1/32), d=3 {mins[3][0]:.4f} (>= margin {mins[3][1]:.4f})")


# 4

def test_criterion_04_mikado_identities():
    t0 = time.perf_counter()
    cat = build_catalog(2)
    fam = build_family(cat, 16.0, TorusGrid(2, 512))
    worst = {"mean": 0.0, "second": 0.0, "divW": 0.0, "divOmega": 0.0, "divWW": 0.0}
    for i in range(len(fam)):
        k = cat.k(i)
        W = fam.W(i)
        worst["mean"] = max(worst["mean"], float(np.abs(W.mean()).max()))
        p = fam.psi_physical(i)
        second = np.mean(p * p) * np.outer(k, k)
        worst["second"] = max(worst["second"], float(np.abs(second - np.outer(k, k)).max()))
        gnorm = gradient(fam.psi(i)).l2_norm() * np.linalg.norm(k)
        worst["divW"] = max(worst["divW"], divergence(W).l2_norm() / gnorm)
        worst["divOmega"] = max(worst["divOmega"],
                                (matrix_div(fam.Omega(i)) - W).l2_norm() / W.l2_norm())
        sq = SpectralField.from_function(fam.grid, lambda *x: p * p)
        WW = SpectralField(fam.grid, np.einsum("i,j,...->ij...", k, k, sq.coeffs))
        scale = gradient(sq).l2_norm() * float(k @ k)
        worst["divWW"] = max(worst["divWW"], matrix_div(WW).l2_norm() / scale)
    ok = (worst["mean"] == 0 and worst["second"] <= 1e-12 and worst["divW"] <= 1e-10
          and worst["divOmega"] <= 1e-10 and worst["divWW"] <= 1e-10)
    assert record(4, ok, time.perf_counter() - t0, 30,
                  "; ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# 5

def test_criterion_05_mikado_scaling():
    t0 = time.perf_counter()
    cat = build_catalog(2)
    mus = [8.0, 16.0, 32.0]
    g = TorusGrid(2, 1024)
    fams = [build_family(cat, mu, g) for mu in mus]
    d = 2
    worst = {}
    for p in (1, 4):
        want_psi = (d - 1) * (0.5 - 1 / p)
        want_om = -1 + want_psi
        for i in range(len(cat)):
            s_psi = log_slope(mus, [lp_norm(f.psi(i), p) for f in fams])
            s_om = log_slope(mus, [lp_norm(f.Omega(i), p) for f in fams])
            worst[f"psi L{p}"] = max(worst.get(f"psi L{p}", 0), abs(s_psi - want_psi))
            worst[f"Omega L{p}"] = max(worst.get(f"Omega L{p}", 0), abs(s_om - want_om))
    cross = 0.0
    for a in range(len(cat)):
        for b in range(a + 1, len(cat)):
            vals = [np.mean(np.abs(f.psi_physical(a) * f.psi_physical(b)))
                    * np.linalg.norm(cat.k(a)) * np.linalg.norm(cat.k(b)) for f in fams]
            cross = max(cross, abs(log_slope(mus, vals) + 1))
    ok = (worst["psi L1"] <= 0.1 and worst["psi L4"] <= 0.1 and worst["Omega L1"] <= 0.15
          and worst["Omega L4"] <= 0.15 and cross <= 0.2)
    assert record(5, ok, time.perf_counter() - t0, 120,
                  "max slope deviations: " + "; ".join(f"{k} {v:.3f}" for k, v in worst.items())
                  + f"; cross L1 {cross:.3f}")


# 6

def test_criterion_06_frequency_plan():
    t0 = time.perf_counter()
    cat = build_catalog(2)
    bad = []
    for lam in (2, 4, 16):
        for e in (4, 1):
            plan = select_sigma(lam, e, cat)
            checks = check_plan(plan)
            bad += [f"lam={lam} e={e} {k}" for k, v in checks.items() if not v]
    assert record(6, not bad, time.perf_counter() - t0, 1,
                  "all exact checks hold" if not bad else "failed: " + ", ".join(bad))


# 7

def test_criterion_07_besov_structure():
    t0 = time.perf_counter()
    seed = seed_state(2, 1.0)
    sch = Schedule.main(1)
    _, params, rep = besov_step(seed, sch.delta[0], sch.p[0], sch.theta[0], "empirical", lam=16)
    c = rep.checks
    ok = (params.G <= 4096 and c.get("div_w", 1) <= 1e-12 and c.get("support_annulus") is True
          and c.get("decomposition", 1) <= 1e-8 and c.get("master_residual", 1) <= 1e-6)
    assert record(7, ok, time.perf_counter() - t0, 300,
                  f"G={params.G} sigma={params.sigma} Div w {c.get('div_w', float('nan')):.1e}, "
                  f"support in annulus {c.get('support_annulus')}, decomposition "
                  f"{c.get('decomposition', float('nan')):.1e}, master residual "
                  f"{c.get('master_residual', float('nan')):.1e} (step status {rep.status})")


# 8

def test_criterion_08_besov_two_steps(besov_run):
    reps = besov_run["reports"]
    states = besov_run["states"]
    sch = besov_run["schedule"]
    accepted = [r for r in reps if r.status == "accepted"]
    norms = [r.values["R_bar_H-s"] for r in accepted]
    decreasing = len(norms) == 2 and norms[1] < norms[0]
    para_ok = all(r.values["paraproduct"] < sch.delta[r.n - 1] + r.values["R_H-s"]
                  for r in accepted)
    book_ok = True
    for s in states[1:]:
        b = band_bookkeeping(states[0].u, s.u, s.bands)
        book_ok &= (b["bands_disjoint"] and b["support_covered"] and b["unit_modes_kept"]
                    and b["pnu_structure"] == 0)
    ok = len(accepted) == 2 and decreasing and para_ok and book_ok
    detail = "; ".join(
        f"step {r.n}: {r.status} lam={r.params.get('lam')} R_bar_H-s="
        f"{r.values.get('R_bar_H-s', float('nan')):.3g} (delta {sch.delta[r.n - 1]}) "
        f"w_Lp={r.values.get('w_Lp', float('nan')):.3g} note={r.note or '-'}" for r in reps)
    assert record(8, ok, besov_run["elapsed"], 900,
                  f"accepted {len(accepted)}/2; {detail}")


# 9

def test_criterion_09_l2_step():
    t0 = time.perf_counter()
    cat = build_catalog(2)
    mu = mu_min(cat)
    gammas = [8, 16, 32]
    delta = Schedule.main(1).delta[0]
    runs = {}
    for seed in (0, 1):
        st = seed_state(2, 0.5, seed=seed)
        for g in gammas:
            _, values, checks = l2_attempt(st, g, mu, cat)
            runs[seed, g] = (values, checks)
    residual = max(c["master_residual"] for _, c in runs.values())
    slopes = [log_slope(gammas, [runs[s, g][0]["R_bar_L1"] for g in gammas]) for s in (0, 1)]
    A = {s: max(runs[s, g][0]["A_meas"] for g in gammas) for s in (0, 1)}
    A_all = max(A.values())
    spread = max(A.values()) / min(A.values()) - 1
    bound_ok = all(v["w_L2"] <= A_all * math.sqrt(v["R_L1"]) + delta for v, _ in runs.values())
    ok = residual <= 1e-6 and max(slopes) <= -0.8 and spread <= 0.2 and bound_ok
    r_bar = [runs[0, g][0]["R_bar_L1"] for g in gammas]
    assert record(9, ok, time.perf_counter() - t0, 600,
                  f"master residual {residual:.1e}; ||R_bar||_L1 seed 0 = "
                  f"{', '.join(f'{x:.3f}' for x in r_bar)} slope {slopes[0]:.3f} "
                  f"(seed 1 {slopes[1]:.3f}, need <= -0.8); A_meas {A[0]:.3f}/{A[1]:.3f} "
                  f"spread {100 * spread:.1f}%; w bound {bound_ok}")


# 10

def test_criterion_10_dynamics(besov_run):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    g = TorusGrid(2, 32)
    u = random_solenoidal(g, 10, rng)
    semi = (heat_semigroup(heat_semigroup(u, 0.013, 0.8), 0.021, 0.8)
            - heat_semigroup(u, 0.034, 0.8)).l2_norm() / u.l2_norm()
    # IF-RK2 order against a fine reference
    u0 = random_solenoidal(TorusGrid(2, 16), 4, rng, scale=0.3)
    T = 0.1
    ref = evolve(u0, EvolutionConfig(0.5, T / 512, T, K=5)).final
    errs = [(evolve(u0, EvolutionConfig(0.5, T / n, T, K=5)).final - ref).l2_norm()
            for n in (16, 32)]
    order = math.log2(errs[0] / errs[1])
    gap, cancel = 0.0, 0.0
    for _ in range(10):
        v = random_solenoidal(g, 10, rng)
        for N in (2, 4, 8):
            row = flux_forms(v, N, 0.5)
            gap = max(gap, row.identity_gap)
            cancel = max(cancel, abs(row.cancellation))
    # gap rate against iteration depth, from the shared main-schedule run
    states = besov_run["states"]
    rates = []
    for state in states[:3]:
        curve = nonuniqueness_gap(state.u, EvolutionConfig(1.0, 1e-3, 1e-3, K=state.N), 4.0)
        rates.append(curve.drift_rate)
    monotone = len(rates) == 3 and rates[0] > rates[1] > rates[2]
    ok = semi <= 1e-13 and order >= 1.9 and gap <= 1e-8 and cancel <= 1e-10 and monotone
    elapsed = time.perf_counter() - t0
    assert record(10, ok, elapsed, 300,
                  f"semigroup {semi:.1e}; RK2 order {order:.3f}; flux identity {gap:.1e}; "
                  f"cancellation {cancel:.1e}; gap rates by depth "
                  f"{[round(r, 4) for r in rates]} (depths available: {len(rates)}/3)")


# 11

def test_criterion_11_determinism(tmp_path):
    t0 = time.perf_counter()
    cfgs = {
        "iterate": {"scheme": "l2", "alpha": 0.5, "gamma": 8, "schedule": {"steps": 1}},
        "flux": {"flux": {"field": "random", "G": 32}},
    }
    same = []
    for cmd, cfg in cfgs.items():
        path = tmp_path / f"{cmd}.json"
        path.write_text(json.dumps(cfg))
        outs = []
        for run in ("a", "b"):
            out = tmp_path / f"{cmd}_{run}"
            cli_main([cmd, "--config", str(path), "--out", str(out), "--quiet"])
            outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
        same.append(bool(outs[0]) and outs[0] == outs[1])
    assert record(11, all(same), time.perf_counter() - t0, 60,
                  "byte-identical CSVs: iterate (l2) "
                  f"{same[0]}, flux {same[1]}")
