"""Command-line entry point.

Exit codes: 0 ok, 1 invariant failure, 2 malformed or infeasible config,
3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, default_config, load_config
from .fixedpoint import ContractionFailure, check_exponents, computed_context, synthetic_context, write_iteration_csv
from .grid import PeriodicGrid
from .nonuniq import InfeasibleExponents, InvariantFailure, resolve_mode, run_demo
from .profiles import ConfigurationError, make_background
from .semigroups import probe_smoothing
from .spectra import (
    StepperPropagator,
    SyntheticPropagator,
    amplitude_sweep,
    estimate_eigenpair,
    write_sweep_csv,
)

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("obnonuniq")


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_check_exponents(cfg: RunConfig, args) -> int:
    violated = check_exponents(cfg.exponents())
    if violated:
        print("infeasible")
        for v in violated:
            print(f"  violated: {v}")
        return EXIT_CONFIG
    print("feasible")
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig, args) -> int:
    out = _out(args)
    g, p, s = cfg["grid"], cfg["profile"], cfg["spectra"]
    grid = PeriodicGrid(g["box_side"], g["n"])
    params = cfg.exponents()
    if cfg.mode == "synthetic":
        prop = SyntheticPropagator(grid, rate=params.a, N=params.N)
    else:
        bg = make_background(grid, p["amplitude"], p["support_radius"], p["b"], p["shape"], p["theta_amplitude"], params.N)
        prop = StepperPropagator(bg)
    est = estimate_eigenpair(prop, s["tau_star"], s["krylov_dim"], s["tol"], s["seed"], N=params.N)
    with open(out / "spectrum.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "re_lambda", "im_lambda"])
        for i, z in enumerate(est.ritz_values):
            w.writerow([i, f"{complex(z).real:.12e}", f"{complex(z).imag:.12e}"])
    info = {
        "mode": "synthetic" if cfg.mode == "synthetic" else "computed",
        "re_lambda": est.lam.real,
        "im_lambda": est.lam.imag,
        "residual": est.residual,
        "converged": est.converged,
        "tau_star": est.tau_star,
    }
    if cfg.mode == "auto":
        sg = PeriodicGrid(s["sweep_box_side"], s["sweep_n"])
        recs = amplitude_sweep(
            p["shape"], s["sweep_amplitudes"], sg, p["support_radius"], p["b"],
            s["tau_star"], s["krylov_dim"], s["tol"], s["seed"],
        )
        write_sweep_csv(recs, out / "sweep.csv")
    (out / "eigenpair.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    print(f"lambda = {est.lam.real:.10g}{est.lam.imag:+.10g}i  residual = {est.residual:.3e}  converged = {est.converged}")
    if cfg.mode == "synthetic" and not (est.converged and est.residual <= 1e-6):
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_semigroup_probe(cfg: RunConfig, args) -> int:
    out = _out(args)
    pr = cfg["probe"]
    rep = probe_smoothing(pr["generator"], pr["m"], pr["k"], seeds=pr["seeds"], seed=cfg["spectra"]["seed"])
    rep.to_csv(out / "probe_samples.csv")
    with open(out / "probe.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generator", "m", "k", "seeds", "exponent", "prefactor", "growth_rate"])
        w.writerow([
            rep.generator, f"{rep.m:g}", f"{rep.k:g}", pr["seeds"],
            f"{rep.exponent:.10e}", f"{rep.prefactor:.10e}", f"{rep.growth_rate:.10e}",
        ])
    print(f"exponent = {rep.exponent:.4f}  prefactor = {rep.prefactor:.4f}  growth_rate = {rep.growth_rate:.4f}")
    return EXIT_OK


def cmd_construct(cfg: RunConfig, args) -> int:
    from .fixedpoint import picard_solve

    out = _out(args)
    mode, bg, est, params = resolve_mode(cfg, out, log.info)
    st, fp = cfg["stepper"], cfg["fixedpoint"]
    c = fp["coefficients"][0]
    if mode == "synthetic":
        ctx = synthetic_context(params, bg, c=c, dt=st["dt"], tau_min=st["tau_min"])
    else:
        ctx = computed_context(params, bg, est, c=c, dt=st["dt"], tau_min=st["tau_min"])
    try:
        res = picard_solve(ctx, fp["max_iter"], fp["tol"])
    except ContractionFailure as err:
        write_iteration_csv(err.log, out / "iterations.csv")
        raise
    write_iteration_csv(res.log, out / "iterations.csv")
    print(
        f"mode = {mode}  iterations = {res.iterations}  contraction = {res.contraction_factor:.4f}  "
        f"residual = {res.residual:.3e}  |U_p|_X = {res.norm_X:.4e}  |Theta_p|_Y = {res.norm_Y:.4e}"
    )
    if res.residual > fp["tol"] or not res.in_ball(params.M):
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_demo(cfg: RunConfig, args) -> int:
    out = _out(args)
    result = run_demo(cfg, out, log.info)
    s = result.summary
    print(
        f"mode = {s['mode']}  residual_max = {s['residual_max']:.3e}  separation_min = {s['separation_min']:.3e}"
    )
    for name, ok in result.checks.items():
        print(f"  {'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if result.ok else EXIT_INVARIANT


COMMANDS = {
    "check-exponents": cmd_check_exponents,
    "spectrum": cmd_spectrum,
    "semigroup-probe": cmd_semigroup_probe,
    "construct": cmd_construct,
    "demo": cmd_demo,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="obnonuniq", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON run configuration (defaults are used when omitted)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, help="seed for random starts and probe inputs")
    ap.add_argument("--mode", choices=["computed", "synthetic", "auto"])
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config) if args.config else default_config()
        cfg = cfg.with_overrides(args.mode, args.seed)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ConfigurationError, InfeasibleExponents) as err:
        print(f"error: {err}", file=sys.stderr)
        for v in getattr(err, "violated", []):
            print(f"  violated: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractionFailure, InvariantFailure) as err:
        print(f"invariant failure: {err}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ArithmeticError, np.linalg.LinAlgError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
