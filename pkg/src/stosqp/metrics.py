"""Error metrics, best-iterate selection and summary statistics.

All metrics are evaluated with the exact problem oracle.  The best-iterate
rule first asks whether any iterate reached ``||c||_inf <= 1e-4``; if so it
returns the iterate with the smallest stacked KKT residual
``max(feas, stat)`` over the whole run, otherwise the most feasible iterate.
"""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .core import invariant_violations, sequence_violations
from .errors import EmptyRun, NonFinite
from .kkt import kkt_error

FEASIBILITY_GATE = 1e-4


@dataclass(frozen=True)
class ErrorPair:
    feas: float
    stat: float

    @property
    def stacked(self):
        return max(self.feas, self.stat)


@dataclass(frozen=True)
class BestIterate:
    index: int
    x: np.ndarray
    errors: ErrorPair
    branch: str  # "kkt" or "feasibility"


def error_pair(oracle, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFinite("x has non-finite entries")
    return ErrorPair(*kkt_error(oracle.eval_grad(x), oracle.eval_c(x), oracle.eval_jac(x)))


def select_best(pairs):
    """Index and branch chosen by the best-iterate rule for a list of ErrorPairs."""
    if not pairs:
        raise EmptyRun("cannot select from an empty run")
    feas = np.array([p.feas for p in pairs])
    if feas.min() <= FEASIBILITY_GATE:
        stacked = np.array([p.stacked for p in pairs])
        return int(np.argmin(stacked)), "kkt"
    return int(np.argmin(feas)), "feasibility"


def best_iterate(run, oracle):
    """Best iterate of a run, re-evaluating every logged ``x`` with ``oracle``."""
    if not run:
        raise EmptyRun("cannot select from an empty run")
    pairs = [error_pair(oracle, rec.x) for rec in run]
    i, branch = select_best(pairs)
    return BestIterate(i, run[i].x, pairs[i], branch)


def check_iteration_invariants(record, params, n_phi_samples=100):
    return invariant_violations(record, params, n_phi_samples=n_phi_samples)


def check_run_invariants(records, params, n_phi_samples=100):
    out = []
    for rec in records:
        out.extend(invariant_violations(rec, params, n_phi_samples=n_phi_samples))
    out.extend(sequence_violations(records, params))
    return out


def quantiles(values):
    """min, q1, median, q3, max (linear interpolation) and mean."""
    v = np.asarray(values, dtype=float)
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    return OrderedDict(zip(("min", "q1", "median", "q3", "max", "mean"), [*map(float, q), float(v.mean())]))


def format_sci(value):
    return f"{value:.2e}"


def summarize(results):
    """Quantile table per ``(group, noise, method)``.

    ``results`` is an iterable of ``(meta, best)`` where ``meta`` is a mapping
    with keys ``group``, ``noise`` and ``method`` and ``best`` a BestIterate.
    """
    groups = OrderedDict()
    for meta, best in results:
        key = (meta["group"], meta["noise"], meta["method"])
        groups.setdefault(key, []).append(best.errors)
    if not groups:
        raise EmptyRun("nothing to summarize")
    rows = []
    for (group, noise, method), errs in sorted(groups.items(), key=lambda kv: tuple(map(str, kv[0]))):
        row = OrderedDict(group=group, noise=noise, method=method, count=len(errs))
        for name in ("feas", "stat"):
            for stat, val in quantiles([getattr(e, name) for e in errs]).items():
                row[f"{name}_{stat}"] = val
        rows.append(row)
    return rows
