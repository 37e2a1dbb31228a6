"""Command line entry point: ``lfdsim run|fit|gap|verify``.

Exit codes: 0 success, 2 an invariant suite failed, 3 configuration error,
4 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .coefficients import anisotropy_profile, build_kernels, ellipticity_floor, verify_structure
from .config import ConfigError, EquilibriumIC, RunConfig, initial_field, load_config
from .diagnostics import conservation_drift, fit_decay
from .equilibrium import (
    FitError,
    evaluate_equilibrium,
    fit_fermi_dirac,
    fit_to_field,
    saturation_epsilon,
)
from .grid import make_grid, moments
from .io import (
    Checkpoint,
    checkpoint_name,
    dump_json,
    read_checkpoint,
    write_checkpoint,
    write_csv,
    write_json,
)
from .linearized import build_context, estimate_gap
from .stepper import NumericalAbort, PicardError, SolverError, Stepper

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3, 4


@dataclass
class SuiteResult:
    name: str
    passed: bool
    value: float
    tolerance: float

    note: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.value = float(self.value)

    def line(self) -> str:
        if self.note:
            return f"SKIP {self.name}: {self.note}"
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3e} (tolerance {self.tolerance:.3e})"

    def to_dict(self) -> dict:
        out = {"pass": self.passed, "value": self.value, "tolerance": self.tolerance}
        if self.note:
            out["note"] = self.note
        return out


def evaluate_suites(cfg: RunConfig, traj, eq_M: np.ndarray) -> list[SuiteResult]:
    grid = traj.grid
    sc = traj.config
    chk = cfg.checks
    steps = max(traj.steps, 1)
    mass = traj.column("mass")
    out = []

    over = float(np.max(traj.column("overshoot")))
    tol = chk.bound_factor * sc.lin_tol
    out.append(SuiteResult("bounds", over <= tol, over, tol))

    if sc.delta2 == 0:
        drift = float(np.max(np.abs(mass - mass[0]))) / mass[0]
        tol = 10.0 * sc.lin_tol * steps
        out.append(SuiteResult("mass", drift <= tol, drift, tol))
    else:
        defect = float(np.max(traj.column("mass_defect")))
        tol = 10.0 * sc.lin_tol
        out.append(SuiteResult("mass_identity", defect <= tol, defect, tol))

    rise = float(np.max(np.diff(traj.column("H")), initial=-np.inf))
    tol = chk.entropy_slack + chk.entropy_slack_tau_h2 * sc.tau * grid.h**2
    if sc.delta2 == 0:
        out.append(SuiteResult("entropy", rise <= tol, rise, tol))
    else:
        # absorption removes mass where ln(f/(1-f)) < 0, which raises H
        out.append(SuiteResult("entropy", True, rise, tol, note="not monotone when delta2 > 0"))

    if isinstance(cfg.initial, EquilibriumIC):
        # relative L2(1/m) deviation from the equilibrium over the run
        scale = float(np.sum(eq_M / (1.0 - grid.eps * eq_M))) * grid.weight
        dev = float(np.sqrt(np.max(traj.column("wdist")) / scale))
        out.append(SuiteResult("stationarity", dev <= chk.stationarity, dev, chk.stationarity))
    return out


def summarize(cfg: RunConfig, traj, suites: list[SuiteResult]) -> dict:
    last = traj.records[-1]
    try:
        decay = fit_decay(traj.column("t"), traj.column("wdist"), t0=cfg.checks.decay_t0).to_dict()
    except ValueError as exc:
        decay = {"error": str(exc)}
    mv = moments(traj.grid, traj.final)
    return {
        "version": __version__,
        "config_hash": cfg.digest(),
        "steps": traj.steps,
        "tau": traj.config.tau,
        "T": last.t,
        "equilibrium": traj.equilibrium.to_dict(),
        "final": {
            "mass": mv.mass,
            "momentum": [float(c) for c in mv.momentum],
            "energy": mv.energy,
            "H": last.H,
            "H_rel": last.H_rel,
            "D": last.D,
            "wdist": last.wdist,
            "min_f": last.min_f,
            "max_f": last.max_f,
        },
        "drift": conservation_drift(traj),
        "decay_fit": decay,
        "suites": {s.name: s.to_dict() for s in suites},
    }


# --- subcommands ------------------------------------------------------------


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        grid = cfg.make_grid()
        step_cfg = cfg.stepper.to_step_config().resolved(grid)
        out = Path(args.out or cfg.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        prior = []
        start = 0
        if args.restart:
            ck = read_checkpoint(args.restart)
            if ck.config_hash != cfg.digest():
                raise ConfigError("", f"checkpoint {args.restart} was written for a different configuration")
            f0, params, start, prior = ck.field, ck.equilibrium, ck.step, ck.records
            if ck.grid != grid:
                raise ConfigError("grid", "checkpoint grid does not match the configuration")
        else:
            f0 = initial_field(cfg, grid)
            params = fit_to_field(grid, f0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitError as exc:
        print(f"config error: initial: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    kernels = build_kernels(grid)
    stepper = Stepper(grid, kernels, step_cfg)
    every = cfg.output.checkpoint_every

    def on_step(k, f, traj):
        if every and k % every == 0:
            ck = Checkpoint(cfg.digest(), k, k * step_cfg.tau, params, prior + traj.records, grid, f)
            write_checkpoint(out / checkpoint_name(k), ck)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            traj = stepper.run(
                f0, cfg.T_final, cadence=cfg.cadence, equilibrium=params, start_step=start, callback=on_step
            )
    except (NumericalAbort, PicardError, SolverError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    traj.records = prior + traj.records

    suites = evaluate_suites(cfg, traj, evaluate_equilibrium(params, grid))
    write_csv(out / cfg.output.csv, traj.records)
    write_json(out / cfg.output.summary, summarize(cfg, traj, suites))
    for s in suites:
        print(s.line())
    return EXIT_OK if all(s.passed for s in suites) else EXIT_FAIL


def cmd_fit(args) -> int:
    p = np.array(args.p, dtype=float)
    try:
        params = fit_fermi_dirac(args.rho, p, args.E, args.eps)
    except (FitError, ValueError) as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = params.to_dict()
    out["eps_saturation"] = float(saturation_epsilon(args.rho, p, args.E))
    sys.stdout.write(dump_json(out))
    return EXIT_OK


def cmd_gap(args) -> int:
    grid = make_grid(args.L, args.N, args.eps)
    ctx = build_context(grid, rho=args.rho, E=args.E)
    est = estimate_gap(ctx, iters=args.iters, seeds=args.seeds, rng_seed=args.rng_seed)
    sys.stdout.write(dump_json(est.to_dict()))
    return EXIT_OK if est.estimate > 0 else EXIT_FAIL


def _profile(name: str, grid):
    r2 = grid.speed2
    if name == "gaussian":
        return np.exp(-r2)
    if name == "ball":
        return np.where(r2 <= 1.0, 1.0, 0.0)
    params = fit_fermi_dirac(1.0, np.zeros(3), 1.5, grid.eps)
    return evaluate_equilibrium(params, grid)


def cmd_verify(args) -> int:
    grid = make_grid(args.L, args.N, args.eps)
    kernels = build_kernels(grid)
    g = _profile(args.profile, grid)
    rep = verify_structure(g, kernels)
    prof = anisotropy_profile(g, args.ray, grid, t_range=(args.t_min, args.t_max))
    out = {
        "profile": args.profile,
        "grid": {"L": grid.L, "N": grid.N, "eps": grid.eps},
        "structure": json.loads(rep.to_json()),
        "ellipticity_floor": ellipticity_floor(g, kernels),
        "anisotropy": {
            "ray": [float(c) for c in args.ray],
            "t_range": [args.t_min, args.t_max],
            "slope_perp": prof.slope_perp,
            "slope_par": prof.slope_par,
        },
    }
    sys.stdout.write(dump_json(out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lfdsim", description="Landau-Fermi-Dirac velocity-space simulator")
    ap.add_argument("--version", action="version", version=f"lfdsim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulation from a YAML config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides output.dir)")
    r.add_argument("--restart", help="checkpoint file to resume from")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("fit", help="fit a Fermi-Dirac equilibrium to moments")
    f.add_argument("--rho", type=float, default=1.0)
    f.add_argument("--p", type=float, nargs=3, default=[0.0, 0.0, 0.0], metavar=("PX", "PY", "PZ"))
    f.add_argument("--E", type=float, default=1.5)
    f.add_argument("--eps", type=float, default=1.0)
    f.set_defaults(func=cmd_fit)

    g = sub.add_parser("gap", help="estimate the spectral gap of the linearized operator")
    g.add_argument("--L", type=float, default=8.0)
    g.add_argument("--N", type=int, default=32)
    g.add_argument("--eps", type=float, default=1.0)
    g.add_argument("--rho", type=float, default=1.0)
    g.add_argument("--E", type=float, default=1.5)
    g.add_argument("--seeds", type=int, default=16)
    g.add_argument("--iters", type=int, default=60)
    g.add_argument("--rng-seed", type=int, default=0)
    g.set_defaults(func=cmd_gap)

    v = sub.add_parser("verify", help="check coefficient identities and decay rates")
    v.add_argument("--profile", choices=["gaussian", "ball", "equilibrium"], default="gaussian")
    v.add_argument("--L", type=float, default=8.0)
    v.add_argument("--N", type=int, default=64)
    v.add_argument("--eps", type=float, default=1.0)
    v.add_argument("--ray", type=float, nargs=3, default=[1.0, 0.0, 0.0])
    v.add_argument("--t-min", type=float, default=3.0)
    v.add_argument("--t-max", type=float, default=6.0)
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
