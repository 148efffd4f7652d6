"""Stochastic subgradient descent on the exact l1 penalty ``tau f + ||c||_1``.

The comparison method: fixed ``tau``, non-adaptive step
``alpha_k = beta_k tau / (tau L + Gamma)``, and the same estimates the SQP
method would see at each point.
"""

import time
from dataclasses import dataclass

import numpy as np

from .core import IterateRecord
from .errors import RankDeficient
from .kkt import kkt_error
from .rng import Streams

DEFAULT_TAU_SWEEP = tuple(10.0 ** -p for p in range(6, -1, -1))


@dataclass(frozen=True)
class SubgradConfig:
    tau: float = 1.0
    lip_l: float = 1.0
    lip_gamma: float = 1.0
    max_iter: int = 5000
    max_time: float = None
    tau_sweep: tuple = DEFAULT_TAU_SWEEP

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.tau_sweep:
            raise ValueError("tau_sweep must be nonempty")

    def step(self, beta_k):
        return beta_k * self.tau / (self.tau * self.lip_l + self.lip_gamma)


def subgradient(tau, gbar, cbar, jbar):
    # sign(0) = 0 picks the minimal-norm element of the subdifferential
    return tau * gbar + np.atleast_2d(jbar).T @ np.sign(cbar)


def run_subgradient(problem, oracle, cfg, beta_schedule, seed, run_id=0):
    streams = seed if isinstance(seed, Streams) else Streams(seed, run_id)
    x = np.array(problem.x1, dtype=float)
    records = []
    t0 = time.perf_counter()
    for k in range(1, cfg.max_iter + 1):
        if cfg.max_time is not None and time.perf_counter() - t0 > cfg.max_time:
            break
        beta_k = beta_schedule(k)
        truth = problem.truth(x)
        try:
            feas, stat = kkt_error(*truth)
            est = oracle(x, k, beta_k, streams, truth=truth)
        except RankDeficient:
            # the penalty method does not need LICQ, but the metrics do
            break
        s = subgradient(cfg.tau, est.gbar, est.cbar, est.jbar)
        alpha = cfg.step(beta_k)
        records.append(IterateRecord(
            k=k, x=x, beta=beta_k, d_norm_sq=float(s @ s),
            tau=cfg.tau, tau_trial=None, xi=None, xi_trial=None,
            alpha=alpha, alpha_min=None, alpha_max=None, alpha_phi=None,
            model_reduction=None, feas_err=feas, stat_err=stat,
            cbar_l1=float(np.abs(est.cbar).sum()), extra={"draws": est.draws},
        ))
        x = x - alpha * s
        if not np.all(np.isfinite(x)):
            break
    return records


def penalty(problem, x, tau):
    return tau * problem.eval_f(x) + float(np.abs(problem.eval_c(x)).sum())
