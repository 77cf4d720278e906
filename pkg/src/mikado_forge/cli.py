"""Command-line harness: iterate, audit, simulate, flux.

Every subcommand reads one JSON config, fills in defaults, echoes the
resolved config into params.json and writes CSV tables with a leading
comment row describing each column. Exit codes: 0 ok, 2 config error,
3 assertion failure, 4 resource cap.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import BlowUpError, MikadoError, ParameterError, ResourceCapError
from .spectral_core import TorusGrid, set_threads, write_snapshot

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT, EXIT_CAP = 0, 2, 3, 4

DEFAULTS = {
    "d": 2,
    "alpha": 1.0,
    "scheme": "besov",
    "mode": "empirical",
    "schedule": {"kind": "main", "steps": 2, "eps": 1.0, "theta": "1/2",
                 "delta": None, "p": None, "theta_n": None},
    "grid_cap": None,
    "seeds": [0],
    "seed_grid": 16,
    "lam": None,
    "e_eff": 1,
    "gamma": None,
    "gammas": [8, 16, 32],
    "mu": None,
    "amp_tol": 1e-8,
    "audit": {"lam": 4096, "p": "3/2", "theta": "1/2"},
    "simulate": {"depths": [0], "h": 1e-3, "T": 0.05, "K": None,
                 "integrator": "if-rk2", "s": None, "field": "seed", "amplitude": None},
    "flux": {"field": "seed", "G": 32, "bandwidth": 6, "rng_seed": 0, "q": 4.0},
    "tolerances": {"residual": 1e-6, "flux_identity": 1e-8},
}


class ConfigError(MikadoError):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            for kk in v:
                if kk not in out[k]:
                    raise ConfigError(f"unknown config key {k}.{kk}")
            out[k].update(v)
        else:
            out[k] = v
    return out


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULTS, raw)
    validate(cfg)
    return cfg


def validate(cfg):
    d, alpha = cfg["d"], cfg["alpha"]
    if d not in (2, 3):
        raise ConfigError("d must be 2 or 3")
    if not isinstance(alpha, (int, float)) or alpha <= 0:
        raise ConfigError("alpha must be positive")
    if cfg["scheme"] not in ("besov", "l2"):
        raise ConfigError("scheme must be besov or l2")
    if cfg["scheme"] == "l2" and not alpha < (d + 1) / 4:
        raise ConfigError(f"the l2 scheme needs alpha < {(d + 1) / 4}")
    if cfg["mode"] not in ("strict", "empirical"):
        raise ConfigError("mode must be strict or empirical")
    if cfg["schedule"]["kind"] not in ("main", "perturbative", "custom"):
        raise ConfigError("schedule.kind must be main, perturbative or custom")
    if int(cfg["schedule"]["steps"]) < 0:
        raise ConfigError("schedule.steps must be >= 0")
    for key, tol in cfg["tolerances"].items():
        if not tol >= np.finfo(float).eps:
            raise ConfigError(f"tolerance {key} below machine epsilon")
    lam = int(cfg["audit"]["lam"])
    if lam < 4 or lam & (lam - 1) or (lam.bit_length() - 1) % 2:
        raise ConfigError(f"audit.lam must be a power of 4, got {lam}")


def build_schedule(cfg):
    from .convex_integration.state import Schedule
    sc = cfg["schedule"]
    n = int(sc["steps"])
    if sc["kind"] == "main":
        return Schedule.main(n)
    if sc["kind"] == "perturbative":
        return Schedule.perturbative(n, sc["eps"], Fraction(str(sc["theta"])))
    delta, p, theta = sc["delta"], sc["p"], sc["theta_n"]
    if not (delta and p and theta) or not len(delta) == len(p) == len(theta) == n:
        raise ConfigError("custom schedule needs delta, p, theta_n lists of length steps")
    return Schedule(tuple(float(x) for x in delta), tuple(Fraction(str(x)) for x in p),
                    tuple(Fraction(str(x)) for x in theta))


# output

def _fmt(v):
    if v is None or v == "":
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12e}" if math.isfinite(v) else str(float(v))
    return str(v)


def write_table(path, columns, rows):
    """columns: list of (name, description); rows: list of dicts."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["# " + "; ".join(f"{n}: {desc}" for n, desc in columns)])
        w.writerow([n for n, _ in columns])
        for r in rows:
            w.writerow([_fmt(r.get(n)) for n, _ in columns])


def write_params(out, cfg, extra=None):
    doc = {"config": cfg}
    if extra:
        doc.update(extra)
    with open(out / "params.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


ITERATE_COLUMNS = [
    ("seed", "seed id"),
    ("n", "iteration index"),
    ("scheme", "besov or l2"),
    ("mode", "strict or empirical"),
    ("status", "accepted/rejected/failed/infeasible/identity"),
    ("lam", "frequency parameter lambda [dimensionless]"),
    ("mu", "tube concentration mu [dimensionless]"),
    ("gamma", "rescaling gamma [dimensionless]"),
    ("sigma", "oscillation frequency sigma [lattice units]"),
    ("G", "step grid points per axis"),
    ("R_bar_H-s", "new stress in H^-s with s = d/2 + 2 alpha + 1"),
    ("R_bar_L1", "new stress in L1 (Frobenius)"),
    ("R_H-s", "input stress in H^-s"),
    ("w_Lp", "perturbation in L^p_n"),
    ("w_besov", "perturbation in B^-theta_n_{inf 1}"),
    ("w_L2", "perturbation in L2"),
    ("paraproduct", "low-high and high-high products of w in H^-s dot"),
    ("A_meas", "||w||_L2 / ||R||_L1^(1/2) (l2 scheme)"),
    ("div_w", "relative divergence of w"),
    ("decomposition", "relative error of the stress decomposition identity"),
    ("master_residual", "relative Leray-projected residual of the new system"),
    ("required_G", "grid needed by the first rejected candidate"),
]


def _report_row(seed, rep):
    row = {"seed": seed, "n": rep.n, "scheme": rep.scheme, "mode": rep.mode,
           "status": rep.status}
    p = rep.params
    for key in ("lam", "mu", "gamma", "sigma", "G"):
        row[key] = p.get(key)
    for key in ("R_bar_H-s", "R_bar_L1", "R_H-s", "w_Lp", "w_besov", "w_L2", "paraproduct",
                "A_meas", "required_G"):
        row[key] = rep.values.get(key)
    for key in ("div_w", "decomposition", "master_residual"):
        row[key] = rep.checks.get(key)
    return row


def cmd_iterate(cfg, out, snapshots=False, log=None):
    from .convex_integration.driver import run_schedule, seed_family
    from .convex_integration.state import reynolds_residual
    schedule = build_schedule(cfg)
    rows, timing = [], []
    code = EXIT_OK
    seeds = seed_family(cfg["d"], cfg["alpha"], cfg["seeds"], G=cfg["seed_grid"])
    for seed_id, seed in zip(cfg["seeds"], seeds):
        if cfg["scheme"] == "besov":
            kw = {"lam": cfg["lam"], "e_eff": cfg["e_eff"], "grid_cap": cfg["grid_cap"]}
        else:
            kw = {"gamma": cfg["gamma"], "gammas": tuple(cfg["gammas"]), "mu": cfg["mu"],
                  "grid_cap": cfg["grid_cap"], "amp_tol": cfg["amp_tol"]}
        state, reports = run_schedule(seed, schedule, cfg["scheme"], cfg["mode"], log=log, **kw)
        for rep in reports:
            rows.append(_report_row(seed_id, rep))
            timing.append({"seed": seed_id, "n": rep.n, "wall_time_s": rep.wall_time})
            if rep.status == "accepted":
                res = rep.checks.get("master_residual", 0.0)
                if not res <= cfg["tolerances"]["residual"]:
                    code = EXIT_ASSERT
            if rep.status == "failed" and "grid cap" in rep.note and code == EXIT_OK:
                code = EXIT_CAP
        if reports and reports[-1].accepted and state.n > 0 and state is not seed:
            if not reynolds_residual(state) <= cfg["tolerances"]["residual"]:
                code = EXIT_ASSERT
        if snapshots:
            write_snapshot(out / f"u_seed{seed_id}_n{state.n}.mkf", state.u)
            write_snapshot(out / f"R_seed{seed_id}_n{state.n}.mkf", state.R)
    write_table(out / "reports.csv", ITERATE_COLUMNS, rows)
    with open(out / "timing.json", "w") as fh:
        json.dump(timing, fh, indent=2)
        fh.write("\n")
    write_params(out, cfg, {"schedule": {"delta": list(schedule.delta),
                                         "p": [str(x) for x in schedule.p],
                                         "theta": [str(x) for x in schedule.theta]}})
    return code


def cmd_audit(cfg, out, snapshots=False, log=None):
    from .frequency_arith import audit_parameters, write_audit_csv
    a = cfg["audit"]
    rows, info = audit_parameters(int(a["lam"]), Fraction(str(a["p"])),
                                  Fraction(str(a["theta"])), cfg["d"],
                                  Fraction(str(cfg["alpha"])))
    write_audit_csv(out / "audit.csv", rows, info)
    plan = info["plan"]
    write_params(out, cfg, {"plan": json.loads(plan.to_json()),
                            "e": info["e"], "eps": str(info["eps"]), "beta": str(info["beta"]),
                            "s": str(info["s"])})
    ok = all(r.passed for r in rows) and all(info["plan_checks"].values())
    return EXIT_OK if ok else EXIT_ASSERT


def _iterate_for_depth(cfg, depth, log=None):
    from .convex_integration.driver import run_schedule
    from .convex_integration.state import Schedule, seed_state
    sim = cfg["simulate"]
    seed = seed_state(cfg["d"], cfg["alpha"], cfg["seed_grid"], seed=cfg["seeds"][0],
                      amplitude=sim["amplitude"])
    if depth == 0:
        return seed
    state, reports = run_schedule(seed, Schedule.main(depth), cfg["scheme"], cfg["mode"],
                                  log=log, grid_cap=cfg["grid_cap"])
    return state if state.n == depth else None


def cmd_simulate(cfg, out, snapshots=False, log=None):
    from .dynamics import EvolutionConfig, nonuniqueness_gap
    from .norms import sobolev_norm
    from .spectral_core import divergence, leray_project
    sim = cfg["simulate"]
    d, alpha = cfg["d"], cfg["alpha"]
    s = sim["s"] if sim["s"] is not None else d / 2 + 2 * alpha + 1
    econf = EvolutionConfig(alpha, sim["h"], sim["T"], sim["K"], sim["integrator"])
    rows, rates = [], []
    code = EXIT_OK
    for depth in sim["depths"]:
        state = _iterate_for_depth(cfg, depth, log)
        if state is None:
            rates.append({"depth": depth, "status": "unavailable"})
            code = EXIT_ASSERT
            continue
        curve = nonuniqueness_gap(state.u, econf, s)
        stress = sobolev_norm(leray_project(divergence(state.R)), -s)
        for t, g, e, h in zip(curve.times, curve.gap, curve.l2, curve.hs):
            rows.append({"depth": depth, "t": t, "L2": e, "H-s": h, "gap": g})
        rates.append({"depth": depth, "status": "ok", "drift_rate": curve.drift_rate,
                      "stress_scale": stress})
        if snapshots:
            write_snapshot(out / f"u_depth{depth}.mkf", state.u)
    write_table(out / "gap.csv", [
        ("depth", "iteration depth n of the initial datum"),
        ("t", "time [dimensionless]"),
        ("L2", "||u(t)||_L2"),
        ("H-s", "||u(t)||_H^-s"),
        ("gap", "||u(t) - u(0)||_H^-s"),
    ], rows)
    write_table(out / "gap_rates.csv", [
        ("depth", "iteration depth n"),
        ("status", "ok or unavailable (iteration failed)"),
        ("drift_rate", "g(h)/h after one time step"),
        ("stress_scale", "||P Div R_n||_H^-s"),
    ], rates)
    write_params(out, cfg, {"s": s})
    return code


def _flux_field(cfg):
    from .convex_integration.state import seed_velocity
    from .dynamics import random_solenoidal
    fl = cfg["flux"]
    grid = TorusGrid(cfg["d"], int(fl["G"]))
    if fl["field"] == "seed":
        return seed_velocity(grid, cfg["seeds"][0])
    if fl["field"] == "random":
        return random_solenoidal(grid, fl["bandwidth"], np.random.default_rng(fl["rng_seed"]))
    raise ConfigError("flux.field must be seed or random")


def cmd_flux(cfg, out, snapshots=False, log=None):
    from .dynamics import bN_sequences, flux_table
    u = _flux_field(cfg)
    alpha = cfg["alpha"]
    table = flux_table(u, alpha)
    rows = []
    code = EXIT_OK
    for r in table:
        scale = max(abs(r.transport), abs(r.commutator), 1.0)
        rows.append({"N": r.N, "transport": r.transport, "commutator": r.commutator,
                     "identity_gap": r.identity_gap, "cancellation": r.cancellation,
                     "dissipation": r.dissipation})
        if r.identity_gap > cfg["tolerances"]["flux_identity"] * scale:
            code = EXIT_ASSERT
    write_table(out / "flux.csv", [
        ("N", "dyadic cutoff"),
        ("transport", "int P_N(u u) : grad u_N"),
        ("commutator", "int r_N : grad u_N"),
        ("identity_gap", "|transport - commutator|"),
        ("cancellation", "int (u_N u_N) : grad u_N"),
        ("dissipation", "int |(-Lap)^(alpha/2) u_N|^2"),
    ], rows)
    b1, B1 = bN_sequences(u, alpha, case=1)
    b2, B2 = bN_sequences(u, alpha, q=cfg["flux"]["q"], case=2)
    write_table(out / "bN.csv", [
        ("N", "dyadic index"),
        ("b_N", "sum_{M<=N} (M/N)^(2 alpha) M^(1-2 alpha) ||P_M u||_Linf"),
        ("B_N", "sum_{N'>=N} b_N' including the geometric tail"),
        ("b_N_q", "sum_{M<=N} (M/N)^2 M^-1 ||P_M u||_Lq"),
        ("B_N_q", "sum_{N'>=N} b_N_q"),
    ], [{"N": N, "b_N": b1[N], "B_N": B1[N], "b_N_q": b2[N], "B_N_q": B2[N]} for N in b1])
    write_params(out, cfg)
    return code


COMMANDS = {"iterate": cmd_iterate, "audit": cmd_audit, "simulate": cmd_simulate,
            "flux": cmd_flux}


def build_parser():
    ap = argparse.ArgumentParser(prog="mikado-forge")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default="mikado_out")
    ap.add_argument("--snapshots", action="store_true")
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--quiet", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    threads = args.threads
    if threads is None and os.environ.get("MIKADO_THREADS"):
        threads = int(os.environ["MIKADO_THREADS"])
    set_threads(threads)
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](cfg, out, args.snapshots, log)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ResourceCapError, MemoryError) as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except BlowUpError as exc:
        print(f"assertion failure: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    if log:
        log(f"{args.command} finished in {time.perf_counter() - t0:.1f} s, exit {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
