"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run directly (``python tests/test_acceptance.py``) or through pytest; the
pytest session also lists the criterion lines in its terminal summary.
"""

import filecmp
import json
import math
import os
import sys
import time

import numpy as np
import pytest

from stosqp import cli
from stosqp.core import ConstantBeta, DiminishingBeta, SqpParams, alpha_phi, phi, run
from stosqp.harness import ExperimentConfig, compare, run_experiment
from stosqp.kkt import KktSystem, solve_kkt
from stosqp.metrics import best_iterate, check_iteration_invariants, check_run_invariants
from stosqp.oracles import GaussianOracle, MinibatchOracle, NoiseConfig, gaussian_estimate
from stosqp.problems import BUILTIN_NAMES, builtin_problem, logistic_from_dataset, synthetic_dataset
from stosqp.rng import Streams

RESULTS = {}


def report(number, ok, detail, elapsed):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}  ({elapsed:.1f}s)"
    RESULTS[number] = line
    print(line, flush=True)
    assert ok, line


def params_for(problem, **kw):
    est = problem.lipschitz
    return SqpParams(lip_l=est.lip_l, lip_gamma=est.lip_gamma, **kw)


def test_criterion_01_step_invariants():
    t0 = time.perf_counter()
    noise_levels = [(0.0, 0.0, 0.0), (1e-8, 1e-8, 1e-4), (1e-4, 1e-4, 1e-2), (1e-2, 1e-2, 1e-1)]
    configs = violations = iters = 0
    first = None
    for name in BUILTIN_NAMES:
        problem = builtin_problem(name)
        params = params_for(problem, max_iter=200)
        for eps in noise_levels:
            configs += 1
            for seed in range(5):
                records = run(problem, GaussianOracle(problem, NoiseConfig(*eps)), params,
                              ConstantBeta(0.1), Streams(seed, 101), check=False)
                bad = check_run_invariants(records, params, n_phi_samples=100)
                iters += len(records)
                violations += len(bad)
                if bad and first is None:
                    first = f"{name} {eps} seed {seed}: {bad[0]}"
    ok = configs >= 20 and iters == configs * 5 * 200 and violations == 0
    report(1, ok, f"{configs} configs x 5 seeds, {iters} iterations, {violations} violations"
           + (f" first: {first}" if first else ""), time.perf_counter() - t0)


def test_criterion_02_kkt_solver():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 21))
        m = int(rng.integers(1, min(n, 10) + 1))
        q = rng.standard_normal((n, n))
        h = q @ q.T + n * np.eye(n)
        jac = rng.standard_normal((m, n))
        g, c = rng.standard_normal(n), rng.standard_normal(m)
        sol = solve_kkt(KktSystem(h, jac, g, c))
        res = max(np.abs(h @ sol.d + jac.T @ sol.y + g).max(), np.abs(jac @ sol.d + c).max())
        scale = 1 + max(np.abs(g).max(), np.abs(c).max())
        worst = max(worst, res / scale)
    hand = [
        (np.eye(2), [[1.0, 0.0]], [1.0, 1.0], [1.0], [-1.0, -1.0], [0.0]),
        (np.eye(2), [[1.0, 0.0]], [0.0, 0.0], [0.0], [0.0, 0.0], [0.0]),
        (2 * np.eye(2), [[1.0, 1.0]], [2.0, 0.0], [2.0], [-1.5, -0.5], [1.0]),
    ]
    hand_err = 0.0
    for h, jac, g, c, d, y in hand:
        sol = solve_kkt(KktSystem(h, np.array(jac), np.array(g), np.array(c)))
        hand_err = max(hand_err, np.abs(sol.d - d).max(), np.abs(sol.y - y).max())
    ok = worst <= 1e-10 and hand_err <= 1e-12
    report(2, ok, f"worst scaled residual {worst:.2e}, hand-example error {hand_err:.2e}",
           time.perf_counter() - t0)


def brute_alpha_phi(args, eta):
    """Expansion to a positive phi value, then bisection on the sign change."""
    hi = 1.0
    while phi(hi, *args, eta=eta) <= 0:
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phi(mid, *args, eta=eta) <= 0:
            lo = mid
        else:
            hi = mid
    return lo


def test_criterion_03_alpha_phi_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        eta = float(rng.uniform(0.01, 0.99))
        beta = float(rng.uniform(1e-3, 1.0))
        delta_l = float(10 ** rng.uniform(-4, 2))
        cbar_l1 = float(rng.choice([0.0, 10 ** rng.uniform(-4, 2)]))
        tau, lip_l, lip_gamma = float(10 ** rng.uniform(-3, 0)), float(10 ** rng.uniform(-2, 2)), float(rng.uniform(0, 3))
        dsq = float(10 ** rng.uniform(-4, 2))
        args = (beta, delta_l, cbar_l1, tau, lip_l, lip_gamma, dsq)
        closed = alpha_phi(*args, eta=eta)
        brute = brute_alpha_phi(args, eta)
        worst = max(worst, abs(closed - brute) / brute)
    # eta=0.5, beta=1, c1=1, tau L + Gamma = 2, ||d||^2 = 1
    root_one = alpha_phi(1.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, eta=0.5)
    root_sqrt2 = alpha_phi(1.0, 4.0, 1.0, 1.0, 1.0, 1.0, 1.0, eta=0.5)
    hand_err = max(abs(root_one - 1.0), abs(root_sqrt2 - math.sqrt(2.0)))
    ok = worst <= 1e-8 and hand_err <= 1e-10
    report(3, ok, f"worst relative gap {worst:.2e}, hand cases error {hand_err:.2e}",
           time.perf_counter() - t0)


def test_criterion_04_zero_noise_convergence():
    t0 = time.perf_counter()
    lines, ok = [], True
    for name in BUILTIN_NAMES:
        problem = builtin_problem(name)
        params = params_for(problem, max_iter=5000)
        records = run(problem, GaussianOracle(problem, NoiseConfig()), params, ConstantBeta(0.1), 0)
        best = best_iterate(records, problem)
        dist = float(np.abs(best.x - problem.known_solution).max())
        good = best.errors.feas <= 1e-8 and best.errors.stat <= 1e-6 and dist <= 1e-5
        ok &= good
        lines.append(f"{name} feas={best.errors.feas:.1e} stat={best.errors.stat:.1e} |x-x*|={dist:.1e}")
    report(4, ok, "; ".join(lines), time.perf_counter() - t0)


def test_criterion_05_noise_calibration():
    t0 = time.perf_counter()
    n, m, draws = 10, 4, 100_000
    cfg = NoiseConfig(1e-2, 1e-2, 1e-2)
    target = 1e-2 * 0.1 ** 2
    truth = (np.ones(n), np.ones(m), np.ones((m, n)))
    streams = Streams(5, 5)
    sums = np.zeros(3)
    for k in range(1, draws + 1):
        est = gaussian_estimate(truth, 0.1, cfg, streams, k)
        sums += (np.sum((est.gbar - truth[0]) ** 2), np.sum((est.cbar - truth[1]) ** 2),
                 np.sum((est.jbar - truth[2]) ** 2))
    ratios = sums / draws / target
    ok = bool(np.all(np.abs(ratios - 1) <= 0.03))
    report(5, ok, "E|err|^2 / (eps beta^2) for g, c, J = " + ", ".join(f"{r:.4f}" for r in ratios),
           time.perf_counter() - t0)


@pytest.fixture(scope="module")
def suite_sweep(tmp_path_factory):
    """SQP plus the 7-value tau sweep at noise (1e-4, 1e-4, 1e-2), beta = 0.1."""
    out = tmp_path_factory.mktemp("suite")
    cfg = ExperimentConfig(
        problems=list(BUILTIN_NAMES), methods=["sqp", "subgradient"],
        noise_grid=[[1e-4, 1e-4, 1e-2]], beta_modes=["const:0.1"], seeds=list(range(5)),
        budget={"iters": 5000}, output_dir=str(out),
    )
    t0 = time.perf_counter()
    results = run_experiment(cfg)
    return results, str(out), time.perf_counter() - t0


def test_criterion_06_suite_sqp(suite_sweep):
    results, _, elapsed = suite_sweep
    sqp = [r for r in results if r.key.method == "sqp"]
    hits = sum(r.best.errors.feas <= 1e-4 and r.best.errors.stat <= 1e-2 for r in sqp)
    frac = hits / len(sqp)
    report(6, len(sqp) == 25 and frac >= 0.6,
           f"{hits}/{len(sqp)} instances with feas <= 1e-4 and stat <= 1e-2 ({frac:.0%})", elapsed)


def test_criterion_07_baseline_dominance(suite_sweep):
    results, out, elapsed = suite_sweep
    t0 = time.perf_counter()
    sqp_calls = {r.key.group: r.oracle_calls for r in results if r.key.method == "sqp"}
    matched = all(r.oracle_calls >= sqp_calls[r.key.group] or r.status != "ok"
                  for r in results if r.key.method == "subgradient")
    _, medians, tally = compare([os.path.join(out, "best.csv")])
    allrow = medians[-1]
    ok = (matched and allrow["sqp_stat_median"] < allrow["base_stat_median"]
          and allrow["sqp_feas_median"] < allrow["base_feas_median"])
    report(7, ok,
           f"median stat sqp {allrow['sqp_stat_median']:.2e} vs base {allrow['base_stat_median']:.2e}; "
           f"median feas sqp {allrow['sqp_feas_median']:.2e} vs base {allrow['base_feas_median']:.2e}; "
           f"stat wins {tally['sqp']}/{sum(tally.values())}; budgets matched: {matched}",
           elapsed + time.perf_counter() - t0)


def test_criterion_08_diminishing_beta():
    t0 = time.perf_counter()
    noise = NoiseConfig(1e-2, 1e-2, 1e-1)
    better, lines = 0, []
    for name in BUILTIN_NAMES:
        problem = builtin_problem(name)
        params = params_for(problem, max_iter=5000)
        med = {}
        for label, sched in (("dimin", DiminishingBeta()), ("const", ConstantBeta(0.1))):
            stats = []
            for seed in range(5):
                records = run(problem, GaussianOracle(problem, noise), params, sched, Streams(seed, 808))
                stats.append(best_iterate(records, problem).errors.stat)
            med[label] = float(np.median(stats))
        better += med["dimin"] <= med["const"]
        lines.append(f"{name} {med['dimin']:.1e}/{med['const']:.1e}")
    report(8, better >= 3, f"diminishing <= constant on {better}/5 problems (dimin/const median stat: "
           + ", ".join(lines) + ")", time.perf_counter() - t0)


def test_criterion_09_logistic_desk_scale():
    t0 = time.perf_counter()
    X, y = synthetic_dataset(2000, 20, seed=9)
    problem, pool = logistic_from_dataset(X, y, 9, name="synthetic")
    params = params_for(problem, max_iter=1000)
    feas = []
    for seed in range(5):
        oracle = MinibatchOracle((X, y), pool, 128, 128)
        records = run(problem, oracle, params, ConstantBeta(1.0), Streams(seed, 909))
        feas.append(best_iterate(records, problem).errors.feas)
    hits = sum(f <= 1e-4 for f in feas)
    report(9, hits >= 4, f"{hits}/5 seeds with feas <= 1e-4 (best feas: "
           + ", ".join(f"{f:.1e}" for f in feas) + ")", time.perf_counter() - t0)


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    solve = ["solve", "--problem", "circle-two", "--eps-g", "1e-2", "--eps-c", "1e-2", "--eps-j", "1e-1",
             "--beta", "dimin", "--iters", "300", "--seed", "4"]
    codes = [cli.main(solve + ["--out", str(tmp_path / f"solve{i}.csv")]) for i in range(2)]
    same = filecmp.cmp(tmp_path / "solve0.csv", tmp_path / "solve1.csv", shallow=False)
    config = {
        "problems": ["sphere-linear", "powell-like"], "methods": ["sqp", "subgradient"],
        "noise_grid": [[1e-4, 1e-4, 1e-2], [1e-2, 1e-2, 1e-1]], "beta_modes": ["const:0.1", "dimin"],
        "seeds": [0, 1], "budget": {"iters": 150}, "tau_sweep": [1e-3, 1e-1, 1.0],
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config))
    for tag, workers in (("a", 1), ("b", 1), ("c", 3)):
        codes.append(cli.main(["experiment", str(path), "--quiet", "--workers", str(workers),
                               "--output-dir", str(tmp_path / tag)]))
    for name in ("runs.csv", "best.csv", "summary.csv"):
        for tag in ("b", "c"):
            same &= filecmp.cmp(tmp_path / "a" / name, tmp_path / tag / name, shallow=False)
    ok = same and codes == [0] * 5
    report(10, ok, f"byte-identical outputs across reruns and 1 vs 3 workers: {same}; exit codes {codes}",
           time.perf_counter() - t0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
