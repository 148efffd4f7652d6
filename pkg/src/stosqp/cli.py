"""Command line entry point.

Subcommands: ``solve``, ``experiment``, ``compare`` and ``gen-data``.
Exit codes: 0 success, 1 usage error, 2 invariant violation, 3 runtime
failure.
"""

import argparse
import csv
import json
import os
import sys

from .core import SqpParams, parse_beta
from .errors import InvariantViolated, SchemaMismatch, SolverError, UnknownProblem
from .harness import (RUNS_COLUMNS, ExperimentConfig, compare, execute_run,
                      pool_rows, run_experiment, write_compare)
from .libsvm import write_libsvm
from .metrics import format_sci
from .problems import generate_constraint_pool, synthetic_dataset

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for invariant failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# SqpParams fields exposed as flags
PARAM_FLAGS = {
    "tau0": float, "xi0": float, "eta": float, "sigma": float, "eps_tau": float,
    "eps_xi": float, "theta": float, "lip_l": float, "lip_gamma": float, "zeta": float,
    "kappa_h": float, "step_policy": str,
}

SOLVE_DEFAULTS = {
    "problem": None, "eps_g": 0.0, "eps_c": 0.0, "eps_j": 0.0, "noise_mode": "coupled",
    "beta": "const:0.1", "iters": 5000, "seed": 0, "master_seed": 0, "out": None,
}


def build_parser():
    p = Parser(prog="stosqp", description="Stochastic SQP solver and experiment harness.")
    sub = p.add_subparsers(dest="command", parser_class=Parser)
    sub.required = True

    s = sub.add_parser("solve", help="run one solve and write the iteration log")
    s.add_argument("--config", help="JSON file with flag values (flags override it)")
    s.add_argument("--problem", help="builtin name, logistic-synthetic[@b1xb2] or LIBSVM path[@b1xb2]")
    s.add_argument("--eps-g", type=float)
    s.add_argument("--eps-c", type=float)
    s.add_argument("--eps-j", type=float)
    s.add_argument("--noise-mode", choices=("coupled", "raw", "complexity"))
    s.add_argument("--beta", help="const:<v>, dimin or complexity:<k_max>[:<omega>]")
    s.add_argument("--iters", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--master-seed", type=int)
    s.add_argument("--out", help="per-iteration CSV path")
    for name, typ in PARAM_FLAGS.items():
        s.add_argument("--" + name.replace("_", "-"), type=typ, dest=name)
    s.add_argument("--no-check", action="store_true", help="skip per-iteration invariant checks")

    e = sub.add_parser("experiment", help="run a sweep described by a JSON config")
    e.add_argument("config")
    e.add_argument("--output-dir")
    e.add_argument("--workers", type=int)
    e.add_argument("--master-seed", type=int)
    e.add_argument("--quiet", action="store_true")

    c = sub.add_parser("compare", help="pair SQP with best-over-tau baseline results")
    c.add_argument("best_csv", nargs="+")
    c.add_argument("--out", help="output directory (default: directory of the first input)")

    g = sub.add_parser("gen-data", help="write a synthetic LIBSVM dataset and constraint pool")
    g.add_argument("--n", type=int, default=20)
    g.add_argument("--N", type=int, default=2000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--pool-out")
    g.add_argument("--K", type=int, default=1000)
    g.add_argument("--a2", type=float, default=1.0)
    g.add_argument("--perturbation-var", type=float)
    g.add_argument("--rhs-var", type=float, default=1e-3)
    g.add_argument("--label-noise", type=float, default=0.1)
    return p


def _solve_settings(args):
    settings = dict(SOLVE_DEFAULTS)
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
        for k, v in data.items():
            k = k.replace("-", "_")
            if k in settings:
                settings[k] = v
            elif k in PARAM_FLAGS:
                overrides[k] = v
            else:
                raise UsageError(f"{args.config}: unknown setting {k!r}")
    for k in settings:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    for k in PARAM_FLAGS:
        v = getattr(args, k)
        if v is not None:
            overrides[k] = v
    if settings["problem"] is None:
        raise UsageError("--problem is required")
    if settings["iters"] < 0:
        raise UsageError("--iters must be >= 0")
    return settings, overrides


def cmd_solve(args):
    settings, overrides = _solve_settings(args)
    try:
        parse_beta(settings["beta"])
    except ValueError as err:
        raise UsageError(f"--beta: {err}") from None
    try:
        SqpParams(**overrides)
    except (TypeError, ValueError) as err:
        raise UsageError(str(err)) from None
    cfg = ExperimentConfig(
        problems=[settings["problem"]],
        noise_grid=[[settings["eps_g"], settings["eps_c"], settings["eps_j"]]],
        noise_mode=settings["noise_mode"], beta_modes=[settings["beta"]],
        seeds=[settings["seed"]], budget={"iters": settings["iters"]},
        master_seed=settings["master_seed"], params=overrides,
        check_invariants=not args.no_check,
    )
    key = cfg.run_keys("sqp")[0]
    res = execute_run(key, cfg)
    if settings["out"]:
        with open(settings["out"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RUNS_COLUMNS)
            w.writerows(res.rows)
    line = f"problem={key.problem} iters={len(res.rows)} status={res.status}"
    if res.best is not None:
        b = res.best
        line += (f" best_k={b.index + 1} branch={b.branch}"
                 f" feas={format_sci(b.errors.feas)} stat={format_sci(b.errors.stat)}")
    print(line)
    if res.status == "invariant":
        print(f"invariant violated: {res.message}", file=sys.stderr)
        return EXIT_INVARIANT
    if res.status != "ok":
        print(res.message, file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_experiment(args):
    cfg = ExperimentConfig.load(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.workers is not None:
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        cfg.workers = args.workers
    if args.master_seed is not None:
        cfg.master_seed = args.master_seed
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    results = run_experiment(cfg, log=log)
    statuses = [r.status for r in results]
    print(f"{len(results)} runs written to {cfg.output_dir}")
    if "invariant" in statuses:
        return EXIT_INVARIANT
    if "error" in statuses:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_compare(args):
    paired, medians, tally = compare(args.best_csv)
    out = args.out or os.path.dirname(os.path.abspath(args.best_csv[0]))
    write_compare(paired, medians, out)
    print(f"stat: sqp wins={tally['sqp']} losses={tally['subgradient']} ties={tally['tie']}")
    return EXIT_OK


def cmd_gen_data(args):
    if args.n < 1 or args.N < 0 or args.K < 1 or args.a2 <= 0:
        raise UsageError("need --n >= 1, --N >= 0, --K >= 1 and --a2 > 0")
    X, y = synthetic_dataset(args.N, args.n, args.seed, noise=args.label_noise)
    write_libsvm(args.out, X, y)
    if args.pool_out:
        pool = generate_constraint_pool(args.n, args.seed, K=args.K, a2=args.a2,
                                        perturbation_var=args.perturbation_var,
                                        rhs_var=args.rhs_var, name="gen-data")
        header, rows = pool_rows(pool)
        with open(args.pool_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    print(f"wrote {args.N} records with {args.n} features to {args.out}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "experiment": cmd_experiment, "compare": cmd_compare,
            "gen-data": cmd_gen_data}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, UnknownProblem, SchemaMismatch) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolated as err:
        print(f"invariant violated: {err}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ValueError, json.JSONDecodeError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, OSError) as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
