"""Experiment harness: run keys, configuration, sweeps and CSV output.

A sweep is the cross product of problems, noise levels, beta schedules,
seeds and methods.  Every run is addressed by a :class:`RunKey`; its random
stream is derived from a hash of the key fields, so adding or removing
entries never changes the draws of other runs.  SQP and baseline runs that
share ``(problem, noise, beta_mode, seed)`` share the stream too, which
means both methods see the same noise realization at a given
``(x, k)``.

SQP runs execute first.  Their oracle-call counts become the iteration
budget of every baseline run in the matching group (one budget per ``tau``
in the sweep).
"""

import csv
import functools
import json
import math
import os
import time
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .core import ConstantBeta, SqpParams, parse_beta, run
from .errors import InvariantViolated, SchemaMismatch, SolverError, UnknownProblem
from .libsvm import read_libsvm
from .metrics import ErrorPair, best_iterate, quantiles, select_best, summarize
from .oracles import GaussianOracle, MinibatchOracle, NoiseConfig
from .problems import (BUILTIN_NAMES, ConstraintPool, builtin_problem, logistic_from_dataset,
                       synthetic_dataset)
from .rng import Streams, key_hash
from .subgradient import DEFAULT_TAU_SWEEP, SubgradConfig, run_subgradient

RUNS_COLUMNS = (
    "run_id", "problem", "method", "eps_g", "eps_c", "eps_j", "beta_mode", "seed",
    "tau_sweep_value", "k", "feas_err", "stat_err", "tau", "xi", "alpha", "d_norm",
    "model_reduction",
)
KEY_COLUMNS = RUNS_COLUMNS[:9]
BEST_COLUMNS = KEY_COLUMNS + (
    "status", "iterations", "oracle_calls", "best_index", "branch", "feas_err", "stat_err",
)
GROUP_COLUMNS = ("problem", "eps_g", "eps_c", "eps_j", "beta_mode", "seed")
METHODS = ("sqp", "subgradient")
DEFAULT_BATCH = (128, 128)
SYNTHETIC_SHAPE = (2000, 20)


def fmt(value):
    """CSV cell text: shortest round-trip repr for floats, empty for None."""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


# ---------------------------------------------------------------------------
# run keys


@dataclass(frozen=True)
class RunKey:
    problem: str
    method: str
    noise: tuple
    beta_mode: str
    seed: int
    tau: float = None

    @property
    def run_id(self):
        return f"{key_hash(*self._fields()):016x}"

    @property
    def group(self):
        return (self.problem, self.noise, self.beta_mode, self.seed)

    def _fields(self):
        return (self.problem, self.method, [float(e) for e in self.noise], self.beta_mode,
                int(self.seed), None if self.tau is None else float(self.tau))

    def streams(self, master_seed):
        # keyed by the group, not the method: both methods see the same draws
        return Streams(master_seed, key_hash("noise", self.problem, [float(e) for e in self.noise],
                                             self.beta_mode, int(self.seed)))

    def sort_key(self):
        return (self.problem, tuple(self.noise), self.beta_mode, self.seed,
                METHODS.index(self.method), -math.inf if self.tau is None else self.tau)

    def cells(self):
        return [self.run_id, self.problem, self.method, *map(fmt, map(float, self.noise)),
                self.beta_mode, str(self.seed), fmt(None if self.tau is None else float(self.tau))]


# ---------------------------------------------------------------------------
# problem resolution


@dataclass(frozen=True)
class ResolvedProblem:
    problem: object
    pool: object = None
    dataset: tuple = None
    batch: tuple = None

    @property
    def stochastic_data(self):
        return self.pool is not None

    def oracle(self, noise):
        if self.stochastic_data:
            return MinibatchOracle(self.dataset, self.pool, *self.batch)
        return GaussianOracle(self.problem, noise)


def _split_batch(identifier):
    base, sep, spec = identifier.partition("@")
    if not sep:
        return base, DEFAULT_BATCH
    try:
        b1, b2 = (int(v) for v in spec.lower().split("x"))
    except ValueError:
        raise UnknownProblem(f"bad batch suffix {spec!r} in {identifier!r}; use @<b1>x<b2>") from None
    return base, (b1, b2)


@functools.lru_cache(maxsize=None)
def resolve_problem(identifier, master_seed=0):
    """Problem for an identifier.

    Builtin names map to analytic problems.  ``logistic-synthetic`` and paths
    to LIBSVM files map to the constrained logistic problem; either may carry
    a ``@<b1>x<b2>`` batch suffix (default 128x128).  Data and constraint
    pool are generated from ``master_seed``.
    """
    if identifier in BUILTIN_NAMES:
        return ResolvedProblem(builtin_problem(identifier))
    base, batch = _split_batch(identifier)
    if base == "logistic-synthetic":
        X, y = synthetic_dataset(*SYNTHETIC_SHAPE, seed=master_seed)
    elif os.path.isfile(base):
        X, y = read_libsvm(base)
    else:
        raise UnknownProblem(
            f"unknown problem {identifier!r}; choose from {', '.join(BUILTIN_NAMES)}, "
            "logistic-synthetic or a LIBSVM file path")
    problem, pool = logistic_from_dataset(X, y, master_seed, name=os.path.basename(base))
    return ResolvedProblem(problem, pool, (X, y), batch)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    problems: list
    methods: list = field(default_factory=lambda: ["sqp"])
    noise_grid: list = field(default_factory=lambda: [[0.0, 0.0, 0.0]])
    noise_mode: str = "coupled"
    omega_rho: float = 1.0
    beta_modes: list = field(default_factory=lambda: ["const:0.1"])
    seeds: list = field(default_factory=lambda: [0])
    budget: dict = field(default_factory=lambda: {"iters": 5000})
    budget_match: str = "calls"
    output_dir: str = "results"
    tau_sweep: list = field(default_factory=lambda: list(DEFAULT_TAU_SWEEP))
    workers: int = 1
    master_seed: int = 0
    params: dict = field(default_factory=dict)
    check_invariants: bool = True

    def __post_init__(self):
        for name in ("problems", "methods", "seeds", "noise_grid", "beta_modes"):
            if not getattr(self, name):
                raise ValueError(f"config field {name!r} must be nonempty")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; choose from {list(METHODS)}")
        self.noise_grid = [tuple(float(e) for e in row) for row in self.noise_grid]
        if any(len(row) != 3 for row in self.noise_grid):
            raise ValueError("each noise_grid entry must be [eps_g, eps_c, eps_j]")
        for spec in self.beta_modes:
            sched = parse_beta(spec)
            if isinstance(sched, ConstantBeta) and not 0 < sched.value <= 1:
                raise ValueError(f"constant beta must lie in (0, 1], got {sched.value}")
        self.seeds = [int(s) for s in self.seeds]
        self.tau_sweep = [float(t) for t in self.tau_sweep]
        if not self.tau_sweep or min(self.tau_sweep) <= 0:
            raise ValueError("tau_sweep must be a nonempty list of positive values")
        if "iters" not in self.budget and "seconds" not in self.budget:
            raise ValueError("budget needs 'iters' and/or 'seconds'")
        if self.noise_mode == "complexity" and "iters" not in self.budget:
            raise ValueError("complexity noise mode needs an iteration budget (k_max)")
        if self.budget_match not in ("calls", "time"):
            raise ValueError("budget_match must be 'calls' or 'time'")
        if int(self.workers) < 1:
            raise ValueError("workers must be >= 1")
        unknown = set(self.params) - {f.name for f in fields(SqpParams)}
        if unknown:
            raise ValueError(f"unknown SqpParams overrides {sorted(unknown)}")
        # validates the noise mode
        self.noise_config(self.noise_grid[0])

    @property
    def iters(self):
        return int(self.budget.get("iters", 10 ** 9))

    @property
    def seconds(self):
        return self.budget.get("seconds")

    def noise_config(self, eps):
        return NoiseConfig(*eps, mode=self.noise_mode, omega_rho=self.omega_rho,
                           k_max=self.iters if self.noise_mode == "complexity" else None)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "beta_mode" in data:
            data.setdefault("beta_modes", [data.pop("beta_mode")])
        if "iters" in data:
            data.setdefault("budget", {})["iters"] = data.pop("iters")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields {sorted(unknown)}")
        if "problems" not in data:
            raise ValueError("config needs 'problems'")
        return cls(**data)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}: invalid JSON ({err})") from None
        if not isinstance(data, dict):
            raise ValueError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def run_keys(self, method):
        keys = []
        for problem in self.problems:
            # mini-batch problems ignore the Gaussian noise grid
            grid = [(0.0, 0.0, 0.0)] if resolve_problem(problem, self.master_seed).stochastic_data \
                else self.noise_grid
            for noise in dict.fromkeys(grid):
                for beta in self.beta_modes:
                    for seed in self.seeds:
                        if method == "sqp":
                            keys.append(RunKey(problem, "sqp", noise, beta, seed))
                        else:
                            keys.extend(RunKey(problem, "subgradient", noise, beta, seed, tau)
                                        for tau in self.tau_sweep)
        return sorted(keys, key=RunKey.sort_key)


# ---------------------------------------------------------------------------
# single runs


@dataclass
class RunResult:
    key: RunKey
    status: str
    message: str
    rows: list
    best: object
    oracle_calls: int
    elapsed: float

    def best_cells(self):
        b = self.best
        tail = [self.status, str(len(self.rows)), str(self.oracle_calls)]
        if b is None:
            return self.key.cells() + tail + ["", "", "", ""]
        return self.key.cells() + tail + [str(b.index + 1), b.branch,
                                          fmt(b.errors.feas), fmt(b.errors.stat)]


def sqp_params(problem, overrides, iters):
    est = problem.lipschitz
    base = {"lip_l": est.lip_l, "lip_gamma": est.lip_gamma} if est else {}
    base.update(overrides)
    base["max_iter"] = iters
    return SqpParams(**base)


def record_cells(key, rec):
    d_norm = None if rec.d_norm_sq is None else math.sqrt(rec.d_norm_sq)
    return key.cells() + [
        str(rec.k), fmt(rec.feas_err), fmt(rec.stat_err), fmt(rec.tau), fmt(rec.xi),
        fmt(rec.alpha), fmt(d_norm), fmt(rec.model_reduction),
    ]


def execute_run(key, cfg, iters=None, max_time=None):
    """Run one key and return a :class:`RunResult` with formatted rows."""
    resolved = resolve_problem(key.problem, cfg.master_seed)
    problem = resolved.problem
    noise = cfg.noise_config(key.noise)
    oracle = resolved.oracle(noise)
    beta = parse_beta(key.beta_mode)
    streams = key.streams(cfg.master_seed)
    iters = cfg.iters if iters is None else iters
    status, message, records = "ok", "", []
    t0 = time.perf_counter()
    try:
        if key.method == "sqp":
            params = sqp_params(problem, cfg.params, iters)
            records = run(problem, oracle, params, beta, streams, max_time=max_time,
                          check=cfg.check_invariants)
        else:
            est = problem.lipschitz
            sg = SubgradConfig(tau=key.tau, lip_l=est.lip_l, lip_gamma=est.lip_gamma,
                               max_iter=iters, max_time=max_time)
            records = run_subgradient(problem, oracle, sg, beta, streams)
    except InvariantViolated as err:
        status, message, records = "invariant", str(err), list(err.records or [])
    except SolverError as err:
        status, message = "error", f"{type(err).__name__}: {err}"
        records = list(getattr(err, "records", None) or [])
    elapsed = time.perf_counter() - t0
    best = best_iterate(records, problem) if records else None
    calls = sum(r.extra.get("draws", 1) for r in records)
    rows = [record_cells(key, r) for r in records]
    return RunResult(key, status, message, rows, best, calls, elapsed)


def _execute_task(task):
    return execute_run(*task)


def _map(tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [_execute_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_execute_task, tasks, chunksize=1))


# ---------------------------------------------------------------------------
# sweeps


def reduce_over_tau(pairs):
    """Index of the best baseline run across a tau sweep (same rule as within a run)."""
    return select_best(pairs)[0]


def run_experiment(cfg, log=None):
    """Execute every run of ``cfg`` and write runs.csv, best.csv, summary.csv.

    Returns the list of :class:`RunResult` in canonical order.
    """
    workers = int(cfg.workers)
    results = []
    budgets = {}
    if "sqp" in cfg.methods:
        keys = cfg.run_keys("sqp")
        tasks = [(k, cfg, None, cfg.seconds) for k in keys]
        for res in _map(tasks, workers):
            results.append(res)
            budgets[res.key.group] = res
            if log:
                log(f"{res.key.problem} sqp seed={res.key.seed} {res.status}")
    if "subgradient" in cfg.methods:
        tasks = []
        for k in cfg.run_keys("subgradient"):
            ref = budgets.get(k.group)
            if ref is None:
                tasks.append((k, cfg, None, cfg.seconds))
            elif cfg.budget_match == "time":
                tasks.append((k, cfg, 10 ** 9, ref.elapsed))
            else:
                tasks.append((k, cfg, max(ref.oracle_calls, 1), None))
        for res in _map(tasks, workers):
            results.append(res)
            if log:
                log(f"{res.key.problem} subgradient tau={res.key.tau:g} seed={res.key.seed} {res.status}")
    results.sort(key=lambda r: r.key.sort_key())
    write_outputs(results, cfg.output_dir)
    return results


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_outputs(results, output_dir):
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, "runs.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUNS_COLUMNS)
        for res in results:
            w.writerows(res.rows)
    write_csv(os.path.join(output_dir, "best.csv"), BEST_COLUMNS, [r.best_cells() for r in results])
    rows = summary_rows(results)
    header = list(rows[0]) if rows else ["group", "noise", "method", "count"]
    write_csv(os.path.join(output_dir, "summary.csv"), header,
              [[fmt(v) for v in row.values()] for row in rows])


def _noise_label(key):
    return "/".join(fmt(float(e)) for e in key.noise) + f" {key.beta_mode}"


def summary_rows(results):
    """Quantile rows per (problem, noise, method) plus an all-problem group.

    Baseline runs are first reduced over their tau sweep.
    """
    entries = []
    sweeps = OrderedDict()
    for res in results:
        if res.best is None:
            continue
        if res.key.method == "sqp":
            entries.append((res.key, res.best))
        else:
            sweeps.setdefault(res.key.group, []).append(res)
    for group, runs in sweeps.items():
        i = reduce_over_tau([r.best.errors for r in runs])
        entries.append((runs[i].key, runs[i].best))
    items = []
    for key, best in entries:
        for group in (key.problem, "all"):
            items.append(({"group": group, "noise": _noise_label(key), "method": key.method}, best))
    return summarize(items) if items else []


# ---------------------------------------------------------------------------
# compare


def read_best_csv(paths):
    rows = []
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(BEST_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise SchemaMismatch(f"{path}: missing columns {sorted(missing)}")
            rows.extend(reader)
    return rows


def _pair(row):
    if not row["feas_err"] or not row["stat_err"]:
        return None
    return ErrorPair(float(row["feas_err"]), float(row["stat_err"]))


def compare(paths):
    """Pair SQP and best-over-tau baseline results per (problem, noise, seed).

    Returns ``(paired_rows, median_rows, tally)`` where ``tally`` counts
    wins, losses and ties of SQP on the stationarity error.
    """
    groups = OrderedDict()
    for row in read_best_csv(paths):
        if row["method"] not in METHODS:
            raise SchemaMismatch(f"unknown method {row['method']!r}")
        key = tuple(row[c] for c in GROUP_COLUMNS)
        groups.setdefault(key, {"sqp": [], "subgradient": []})[row["method"]].append(row)

    paired = []
    for key, by_method in groups.items():
        if len(by_method["sqp"]) > 1:
            raise SchemaMismatch(f"duplicate SQP rows for {key}")
        sqp = [(r, _pair(r)) for r in by_method["sqp"] if _pair(r)]
        base = [(r, _pair(r)) for r in by_method["subgradient"] if _pair(r)]
        if not sqp or not base:
            continue
        s_pair = sqp[0][1]
        i = reduce_over_tau([p for _, p in base])
        b_row, b_pair = base[i]
        if s_pair.stat < b_pair.stat:
            winner = "sqp"
        elif s_pair.stat > b_pair.stat:
            winner = "subgradient"
        else:
            winner = "tie"
        paired.append(OrderedDict(
            zip(GROUP_COLUMNS, key),
            sqp_feas=s_pair.feas, sqp_stat=s_pair.stat,
            base_feas=b_pair.feas, base_stat=b_pair.stat,
            base_tau=float(b_row["tau_sweep_value"]), winner=winner,
        ))
    if not paired:
        raise SchemaMismatch("no (problem, noise, seed) group has results for both methods")

    buckets = OrderedDict()
    for row in paired:
        buckets.setdefault(tuple(row[c] for c in GROUP_COLUMNS[:-1]), []).append(row)
    buckets[("all", "", "", "", "")] = paired
    medians = []
    for k, rows in buckets.items():
        out = OrderedDict(zip(GROUP_COLUMNS[:-1], k), count=len(rows))
        for col in ("sqp_feas", "sqp_stat", "base_feas", "base_stat"):
            out[f"{col}_median"] = quantiles([r[col] for r in rows])["median"]
        medians.append(out)
    tally = {w: sum(r["winner"] == w for r in paired) for w in ("sqp", "subgradient", "tie")}
    return paired, medians, tally


def write_compare(paired, medians, output_dir):
    os.makedirs(output_dir, exist_ok=True)
    for name, rows in (("compare.csv", paired), ("compare_medians.csv", medians)):
        write_csv(os.path.join(output_dir, name), list(rows[0]),
                  [[fmt(v) for v in r.values()] for r in rows])


# ---------------------------------------------------------------------------
# constraint pool text format


def pool_rows(pool):
    """Header and rows of the pool CSV: one line per (sample, row) pair."""
    n = pool.A.shape[2]
    header = ["sample", "row", "rhs"] + [f"A_{j + 1}" for j in range(n)]
    rows = []
    for s in range(pool.K):
        for r in range(pool.A.shape[1]):
            rows.append([str(s), str(r), fmt(float(pool.a[s, r]))] + [fmt(float(v)) for v in pool.A[s, r]])
    return header, rows


def read_pool_csv(path, a2=1.0):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["sample", "row", "rhs"]:
            raise SchemaMismatch(f"{path}: not a constraint pool file")
        data = [[float(v) for v in row] for row in reader]
    arr = np.array(data).reshape(-1, len(header))
    K, rows = int(arr[:, 0].max()) + 1, int(arr[:, 1].max()) + 1
    A = arr[:, 3:].reshape(K, rows, -1)
    a = arr[:, 2].reshape(K, rows)
    return ConstraintPool.from_samples(A, a, a2)

