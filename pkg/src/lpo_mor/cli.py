"""Command-line driver: ``lpo-mor {energy,reduce,simulate}``.

Wherever a system file is expected the built-in names ``msd`` and
``convdiff`` may be given instead; their parameters are set by flags.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys as _sys
import time
from contextlib import nullcontext

import numpy as np

from .benchmarks import build_convdiff, build_msd
from .energy import EnergyFunction
from .errors import NumericalError, ValidationError
from .io import load_reduced, load_system, save_energy, save_reduced
from .kron_solver import build_observability_coefficients
from .mor import balanced_truncation, energy_based_reduce, qobt_reduce
from .simulation import get_input, simulate, write_trajectory_csv
from .stiefel import OptimizerConfig

__all__ = ["build_parser", "main"]

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
BUILTINS = ("msd", "convdiff")


def _thread_limit():
    raw = os.environ.get("LPO_MOR_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"LPO_MOR_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ValidationError(f"LPO_MOR_THREADS must be >= 1, got {n}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _add_system_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("system", help="system JSON file, or 'msd' / 'convdiff'")
    p.add_argument("--skip-stability", action="store_true",
                   help="do not check that A is Hurwitz when loading")
    g = p.add_argument_group("built-in benchmark parameters")
    g.add_argument("--n-masses", type=int, default=25)
    g.add_argument("--mass", type=float, default=4.0)
    g.add_argument("--stiffness", type=float, default=4.0)
    g.add_argument("--damping", type=float, default=1.0)
    g.add_argument("--grid", type=int, default=20, help="convdiff grid size g")
    g.add_argument("--velocity", type=float, default=1.0)


def _load(args):
    if args.system == "msd":
        return build_msd(args.n_masses, args.mass, args.stiffness, args.damping)
    if args.system == "convdiff":
        return build_convdiff(args.grid, args.velocity)
    return load_system(args.system, check_stability=not args.skip_stability)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpo-mor",
        description="Observability energies and model reduction for "
                    "linear systems with polynomial outputs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("energy", help="low-rank observability energy coefficients")
    _add_system_args(p)
    p.add_argument("--tol", type=float, default=1e-8,
                   help="target quadrature accuracy (chooses ell)")
    p.add_argument("--ell", type=int, default=None,
                   help="fixed quadrature size, overrides --tol")
    p.add_argument("--out", required=True, help="output JSON path")

    p = sub.add_parser("reduce", help="compute a reduced-order model")
    _add_system_args(p)
    p.add_argument("--method", choices=("bt", "qobt", "energy"), required=True)
    p.add_argument("--r", type=int, required=True, help="reduced dimension")
    p.add_argument("--L", type=float, default=1.0, help="ball radius (energy)")
    p.add_argument("--tol", type=float, default=1e-6,
                   help="quadrature accuracy for the energy coefficients")
    p.add_argument("--ell", type=int, default=None)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--out", required=True, help="output JSON path")

    p = sub.add_parser("simulate", help="simulate and optionally compare with a ROM")
    _add_system_args(p)
    p.add_argument("--input", default="zero",
                   help="zero, step, msd_input or convdiff_input")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float, default=20.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--compare", default=None, help="reduced model JSON")
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


def cmd_energy(args) -> int:
    sys = _load(args)
    coeffs, info = build_observability_coefficients(
        sys.A, list(sys.outputs), tol=args.tol, ell=args.ell, return_info=True)
    E = EnergyFunction.from_list(coeffs)
    meta = {
        "tol": args.tol,
        "ell": {str(k): v for k, v in info["ell"].items()},
        "rhs_rank": {str(k): v for k, v in info["rhs_rank"].items()},
        "capped": {str(k): v for k, v in info["capped"].items()},
    }
    save_energy(args.out, E, meta)
    for k, w in E.coefficients.items():
        print(f"degree {k}: ell={info['ell'][k]} rank={w.rank}")
    return EXIT_OK


def cmd_reduce(args) -> int:
    sys = _load(args)
    start = time.perf_counter()
    if args.method == "bt":
        rom = balanced_truncation(sys, args.r)
    elif args.method == "qobt":
        rom = qobt_reduce(sys, args.r)
    else:
        cfg = OptimizerConfig(max_iters=args.max_iters, grad_tol=args.grad_tol)
        rom = energy_based_reduce(sys, args.r, args.L, cfg,
                                  tol=args.tol, ell=args.ell)
    rom.params["seconds"] = time.perf_counter() - start
    save_reduced(args.out, rom)
    eig = np.linalg.eigvals(rom.reduced.A).real.max()
    print(f"{rom.method} r={rom.r} stable={rom.stable} "
          f"max Re(eig)={eig:.6e}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    sys = _load(args)
    rom = None
    if args.compare is not None:
        if not os.path.exists(args.compare):
            raise ValidationError(f"reduced model {args.compare} not found")
        rom = load_reduced(args.compare).reduced
        if rom.m != sys.m:
            raise ValidationError(
                f"ROM has {rom.m} inputs, system has {sys.m}")
    u = get_input(args.input, sys.m)
    fom_tr = simulate(sys, u, (args.t0, args.t1), args.dt, store_states=False)
    rom_tr = None
    if rom is not None:
        rom_tr = simulate(rom, u, (args.t0, args.t1), args.dt, store_states=False)
    write_trajectory_csv(args.out, fom_tr, rom_tr)
    if rom_tr is not None:
        err = np.abs(fom_tr.outputs - rom_tr.outputs).max()
        print(f"max |y - yhat| = {err:.6e}")
    return EXIT_OK


COMMANDS = {"energy": cmd_energy, "reduce": cmd_reduce, "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, np.linalg.LinAlgError, MemoryError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
