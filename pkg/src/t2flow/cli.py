"""Command-line interface: gen, evolve, fit, oderef, converge, batch.

Exit codes: 0 success, 2 usage, 3 constraint failure, 4 evolution
failure, 5 analysis failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisError, estimate_limit, fit_cv, fit_log_slope, oscillation_period
from .diagnostics import constraint_residual, conserved_ab
from .evolution import EvolutionConfig, EvolutionError, evolve
from .fields import PeriodicGrid, UsageError
from .initial_data import ConstraintError, SamplerSpec, make_initial_data
from .io import (
    CheckpointError,
    DiagnosticsWriter,
    RunManifest,
    checkpoint_bytes,
    format_value,
    read_checkpoint,
    read_config,
    read_csv,
    write_checkpoint,
)
from .reference_models import CD_FIXED_POINT, OracleError, cd_ode
from .runner import BATCH_CLASSES, config_from_manifest, manifest_for, run_batch, self_convergence

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONSTRAINT = 3
EXIT_EVOLUTION = 4
EXIT_ANALYSIS = 5

MODE_ALIASES = {
    "polarised": "polarised_random",
    "b0": "b0_random",
    "generic": "generic_random",
    "ph": "pseudo_homogeneous",
}


def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest.json")


def _add_sampler_flags(p: argparse.ArgumentParser, mmax_default: int = 8) -> None:
    p.add_argument("--mode", default="b0_random", help="kasner, polarised, b0, generic, ph, near_attractor (or full names)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=256, help="grid points")
    p.add_argument("--mmax", type=int, default=mmax_default, help="highest sampled Fourier mode")
    p.add_argument("--amp", type=float, default=0.05, help="amplitude of the sampled profiles")
    p.add_argument("--target-b", type=float, default=0.0)
    p.add_argument("--ell-mean", type=float, default=math.log(0.5))
    p.add_argument("--rho0", type=float, default=0.0)
    p.add_argument("--rho-amp", type=float, default=0.0, help="amplitude of a random ρ perturbation")
    p.add_argument("--tau0", type=float, default=None)
    p.add_argument("--kasner-a", type=float, default=1.0)
    p.add_argument("--kasner-b", type=float, default=0.0)
    p.add_argument("--kasner-c", type=float, default=0.0)
    p.add_argument("--spectral-ell", action="store_true", help="FFT antiderivative for l")
    p.add_argument("--attractor-base", default=None)
    p.add_argument("--attractor-eps", type=float, default=0.1)
    p.add_argument("--attractor-energy", type=float, default=1.0)
    p.add_argument("--attractor-c", type=float, default=0.0)
    p.add_argument("--b-balance", action="store_true", help="start B≠0 data at V_τ = 1/2 balance")


def _spec_from_args(args) -> SamplerSpec:
    mode = MODE_ALIASES.get(args.mode, args.mode)
    base = MODE_ALIASES.get(args.attractor_base, args.attractor_base) if args.attractor_base else None
    return SamplerSpec(
        mode=mode,
        seed=args.seed,
        m_max=args.mmax,
        amplitude=args.amp,
        target_b=args.target_b,
        ell_mean=args.ell_mean,
        rho0=args.rho0,
        kasner_a=args.kasner_a,
        kasner_b=args.kasner_b,
        kasner_c=args.kasner_c,
        tau0=args.tau0,
        rho_amplitude=args.rho_amp,
        spectral_ell=args.spectral_ell,
        attractor_base=base,
        attractor_eps=args.attractor_eps,
        attractor_energy=args.attractor_energy,
        attractor_c=args.attractor_c,
        b_balance=args.b_balance,
    )


def _require(args, *names) -> None:
    missing = ["--" + n.replace("_", "-") for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} needs {', '.join(missing)}")


def cmd_gen(args) -> int:
    _require(args, "out")
    spec = _spec_from_args(args)
    state = make_initial_data(spec, PeriodicGrid(args.n))
    digest = write_checkpoint(args.out, state)
    RunManifest(
        spec=spec.as_dict(), grid_n=args.n, code_version=__version__, seed=spec.seed,
        initial_checksum=digest, tau_start=state.tau,
    ).write(manifest_path(args.out))
    _, b = conserved_ab(state)
    print(f"B {format_value(b)}")
    print(f"constraint_residual {format_value(constraint_residual(state))}")
    return EXIT_OK


def _evolution_config(args) -> EvolutionConfig:
    return EvolutionConfig(cfl_lambda=args.cfl, output_interval=args.every, filter_enabled=args.filter)


def cmd_evolve(args) -> int:
    if args.manifest:
        manifest = RunManifest.read(args.manifest)
        spec, config = config_from_manifest(manifest)
        state = make_initial_data(spec, PeriodicGrid(manifest.grid_n))
        digest = hashlib.sha256(checkpoint_bytes(state)).hexdigest()
        if digest != manifest.initial_checksum:
            raise UsageError("regenerated initial data do not match the manifest checksum (different build?)")
        tau_end = args.tau_end if args.tau_end is not None else manifest.tau_end
        if tau_end is None:
            raise UsageError("manifest has no tau_end; pass --tau-end")
    else:
        if not args.input:
            raise UsageError("evolve needs --in or --manifest")
        if args.tau_end is None:
            raise UsageError("evolve needs --tau-end")
        state = read_checkpoint(args.input)
        config = _evolution_config(args)
        tau_end = args.tau_end
        # carry the sampler echo over from the generator's manifest when there is one
        side = manifest_path(args.input)
        spec_echo = RunManifest.read(side).spec if side.exists() else {}
        manifest = manifest_for(spec_echo, state.grid.n_points, state, config, tau_end)

    out = open(args.diag, "w", newline="") if args.diag else sys.stdout
    writer = DiagnosticsWriter(out)
    next_ckpt = [state.tau + args.ckpt_every] if args.ckpt_every else None
    prefix = args.ckpt_prefix or (str(args.diag) if args.diag else "t2flow")

    def on_state(s):
        if next_ckpt is not None and s.tau >= next_ckpt[0] - 1e-9:
            write_checkpoint(f"{prefix}.tau{s.tau:.4f}.t2f", s)
            while next_ckpt[0] <= s.tau + 1e-9:
                next_ckpt[0] += args.ckpt_every

    try:
        final = evolve(state, tau_end, config, writer.write, on_state)
    except EvolutionError as exc:
        writer.abort(exc.tau)
        if out is not sys.stdout:
            out.close()
        manifest.tau_finished = exc.tau
        if args.diag:
            manifest.write(manifest_path(args.diag))
        raise
    if out is not sys.stdout:
        out.close()
    manifest.tau_finished = final.tau
    if args.diag:
        manifest.write(manifest_path(args.diag))
    if args.final:
        write_checkpoint(args.final, final)
    return EXIT_OK


def cmd_fit(args) -> int:
    _require(args, "diag", "column")
    data = read_csv(args.diag)
    if args.column not in data:
        raise UsageError(f"column {args.column!r} not in {args.diag}; have {sorted(data)}")
    tau = data["tau"]
    values = data[args.column] * np.exp(args.scale_exp * tau)
    if args.abs:
        values = np.abs(values)
    window = tuple(args.window) if args.window else None
    if args.kind == "period":
        print(f"period {oscillation_period(tau, values, window):.10g}")
        return EXIT_OK
    fitter = {"slope": fit_log_slope, "limit": estimate_limit, "cv": fit_cv}[args.kind]
    print(fitter(tau, values, window).report())
    return EXIT_OK


def cmd_oderef(args) -> int:
    c0 = CD_FIXED_POINT[0] if args.c0 is None else args.c0
    d0 = CD_FIXED_POINT[1] if args.d0 is None else args.d0
    count = int(math.floor(args.tau_end / args.every + 1e-9))
    t_eval = np.linspace(0.0, count * args.every, count + 1)
    traj = cd_ode(c0, d0, args.tau_end, tol=args.tol, t_eval=t_eval)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        out.write("tau,c,d\n")
        for t, (c, d) in zip(traj.taus, traj.values):
            out.write(f"{format_value(t)},{format_value(c)},{format_value(d)}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_converge(args) -> int:
    spec = _spec_from_args(args)
    if not args.trapezoid_ell:
        spec = SamplerSpec(**{**spec.as_dict(), "spectral_ell": True})
    # one output at tau_end keeps the step sequences of N, 2N, 4N nested
    every = args.every if args.every is not None else args.tau_end
    config = EvolutionConfig(cfl_lambda=args.cfl, output_interval=every, filter_enabled=args.filter)
    report = self_convergence(spec, args.n, args.tau_end, config)
    print(f"resolutions {' '.join(str(n) for n in report.resolutions)}")
    print(f"tau_end {format_value(report.tau_end)}")
    for name, p in report.field_orders.items():
        print(f"order_{name} {p:.4f}")
    print("A_drift " + " ".join(format_value(x) for x in report.a_drifts))
    print("A_order " + " ".join(f"{x:.4f}" for x in report.a_orders))
    print(f"order {report.field_orders['v']:.4f}")
    return EXIT_OK


SUMMARY_FIELDS = (
    "seed", "passed", "C_V", "C_inf_H", "C_inf_Pi", "C_inf_E", "el_limit", "j_limit",
    "eH_variation", "cd_slope", "W_slope", "EV_EQ_amp_ratio", "error",
)


def cmd_batch(args) -> int:
    _require(args, "cls")
    config = EvolutionConfig(cfl_lambda=args.cfl, output_interval=args.every, filter_enabled=not args.no_filter)
    rows = run_batch(args.cls, args.count, args.seed, args.workers, args.n, args.tau_end, config)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(SUMMARY_FIELDS)
        for row in rows:
            cells = []
            for key in SUMMARY_FIELDS:
                value = row.get(key)
                if isinstance(value, float):
                    cells.append(f"{value:.6g}")
                else:
                    cells.append("" if value is None else str(value))
            writer.writerow(cells)
    finally:
        if out is not sys.stdout:
            out.close()
    passed = sum(1 for r in rows if r.get("passed"))
    print(f"# {passed}/{len(rows)} runs passed ({args.cls})", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="t2flow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"t2flow {__version__}")
    parser.add_argument("--config", default=None, help="INI-style key = value file; flags win on conflict")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate constraint-satisfying initial data")
    _add_sampler_flags(p)
    p.add_argument("--out", help="checkpoint path (manifest written alongside)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("evolve", help="evolve a checkpoint and write diagnostics CSV")
    p.add_argument("--in", dest="input", default=None, help="input checkpoint")
    p.add_argument("--manifest", default=None, help="replay the run described by a manifest")
    p.add_argument("--tau-end", type=float, default=None)
    p.add_argument("--cfl", type=float, default=0.5)
    p.add_argument("--every", type=float, default=0.1, help="output interval in τ")
    p.add_argument("--diag", default=None, help="CSV path (default standard output)")
    p.add_argument("--ckpt-every", type=float, default=None, help="checkpoint interval in τ")
    p.add_argument("--ckpt-prefix", default=None)
    p.add_argument("--final", default=None, help="write the final state to this checkpoint")
    p.add_argument("--filter", action="store_true", help="2/3-rule spectral filter after every step")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("fit", help="fit a diagnostics CSV column")
    p.add_argument("--diag")
    p.add_argument("--column")
    p.add_argument("--kind", choices=("slope", "limit", "cv", "period"), default="slope")
    p.add_argument("--window", type=float, nargs=2, default=None, metavar=("LO", "HI"))
    p.add_argument("--scale-exp", type=float, default=0.0, help="fit value·e^{kτ} instead of value")
    p.add_argument("--abs", action="store_true", help="fit |value|")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("oderef", help="integrate the c̄-d̄ reference system")
    p.add_argument("--c0", type=float, default=None, help="default: fixed point")
    p.add_argument("--d0", type=float, default=None, help="default: fixed point")
    p.add_argument("--tau-end", type=float, default=50.0)
    p.add_argument("--every", type=float, default=0.1)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oderef)

    p = sub.add_parser("converge", help="self-convergence test at N, 2N, 4N")
    _add_sampler_flags(p, mmax_default=4)
    p.set_defaults(mode="generic_random", target_b=0.3, n=128, seed=5)
    p.add_argument("--tau-end", type=float, default=5.0)
    p.add_argument("--cfl", type=float, default=0.5)
    p.add_argument("--every", type=float, default=None, help="output interval (default: tau_end)")
    p.add_argument("--filter", action="store_true")
    p.add_argument("--trapezoid-ell", action="store_true", help="keep the O(h²) trapezoid l (default: spectral)")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("batch", help="run many seeds of one class and summarise")
    p.add_argument("--class", dest="cls", choices=BATCH_CLASSES)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--tau-end", type=float, default=10.0)
    p.add_argument("--cfl", type=float, default=0.5)
    p.add_argument("--every", type=float, default=0.1)
    p.add_argument("--no-filter", action="store_true")
    p.add_argument("--out", default=None, help="summary CSV path (default standard output)")
    p.set_defaults(func=cmd_batch)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse twice: config-file values become defaults so explicit flags still win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = read_config(args.config)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "func"):
            raise UsageError(f"config key {key!r} is not an option of '{args.command}'")
        if action.nargs == 0:
            defaults[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        elif action.nargs is not None:
            defaults[key] = [action.type(x) if action.type else x for x in raw.split()]
        else:
            defaults[key] = action.type(raw) if action.type else raw
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except (UsageError, CheckpointError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"t2flow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConstraintError as exc:
        print(f"t2flow: constraint failure: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except (EvolutionError, OracleError) as exc:
        print(f"t2flow: evolution failure: {exc}", file=sys.stderr)
        return EXIT_EVOLUTION
    except AnalysisError as exc:
        print(f"t2flow: analysis failure: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
