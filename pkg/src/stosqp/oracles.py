"""Stochastic estimates of (grad f, c, jac c).

Two regimes are supported:

* additive Gaussian noise around a deterministic oracle, with total
  variances set per iteration by :func:`variance_schedule`;
* mini-batch sampling for the constrained logistic problem, where the
  objective gradient averages ``b1`` data gradients and the linear
  constraint block averages ``b2`` pool samples.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import BatchTooLarge, RankDeficient
from .kkt import has_full_row_rank
from .problems import logistic_grad
from .rng import TAG_BATCH_CON, TAG_BATCH_OBJ, TAG_GC, TAG_JAC

MAX_RESAMPLES = 10

MODES = ("coupled", "raw", "complexity")


@dataclass(frozen=True)
class NoiseConfig:
    eps_g: float = 0.0
    eps_c: float = 0.0
    eps_j: float = 0.0
    mode: str = "coupled"
    omega_rho: float = 1.0
    k_max: Optional[int] = None
    tied_eps: bool = False

    def __post_init__(self):
        if min(self.eps_g, self.eps_c, self.eps_j) < 0:
            raise ValueError("noise levels must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "complexity" and not self.k_max:
            raise ValueError("complexity mode needs k_max")
        if self.tied_eps and not np.isclose(self.eps_c, self.eps_j ** 2, rtol=1e-12, atol=0):
            raise ValueError("tied noise requires eps_c == eps_j**2")

    @property
    def couple_beta(self):
        return self.mode == "coupled"

    @property
    def is_zero(self):
        return self.mode != "complexity" and self.eps_g == self.eps_c == self.eps_j == 0.0


@dataclass(frozen=True)
class StochasticEstimate:
    gbar: np.ndarray
    cbar: np.ndarray
    jbar: np.ndarray
    variances: tuple = (None, None, None)
    draws: int = 1  # oracle calls spent, counting Jacobian resamples


def variance_schedule(mode, k, beta_k, cfg):
    """Target total variances ``(rho_g, rho_c, rho_j)`` at iteration ``k``."""
    if mode == "coupled":
        b2 = beta_k * beta_k
        return cfg.eps_g * b2, cfg.eps_c * b2, cfg.eps_j * b2
    if mode == "raw":
        return cfg.eps_g, cfg.eps_c, cfg.eps_j
    if mode == "complexity":
        rho = (cfg.omega_rho / 3.0) ** 2 / cfg.k_max
        return rho, rho, rho
    raise ValueError(f"unknown variance mode {mode!r}")


def gaussian_estimate(truth, beta_k, cfg, streams, k, attempt=0):
    """Perturb ``truth = (g, c, jac)`` with Gaussian noise.

    Per-entry variances are ``rho_g/n``, ``rho_c/m`` and ``rho_j/(m n)`` so that
    the expected squared error of each component equals its total variance.
    The (g, c) pair and the Jacobian use independent generators; ``attempt``
    only moves the Jacobian draw, which is what gets resampled on rank loss.
    """
    g, c, jac = truth
    n, m = g.size, c.size
    rho_g, rho_c, rho_j = variance_schedule(cfg.mode, k, beta_k, cfg)
    gbar, cbar, jbar = g, c, jac
    if rho_g > 0 or rho_c > 0:
        rng = streams.generator(k, TAG_GC)
        zg = rng.standard_normal(n)
        zc = rng.standard_normal(m)
        gbar = g + np.sqrt(rho_g / n) * zg if rho_g > 0 else g.copy()
        cbar = c + np.sqrt(rho_c / m) * zc if rho_c > 0 else c.copy()
    if rho_j > 0:
        rng = streams.generator(k, TAG_JAC, attempt)
        jbar = jac + np.sqrt(rho_j / (m * n)) * rng.standard_normal((m, n))
    return StochasticEstimate(gbar, cbar, jbar, (rho_g, rho_c, rho_j))


def minibatch_estimate(dataset, pool, x, b1, b2, rng_obj, rng_con):
    """Mini-batch estimate for the constrained logistic problem.

    Batches are drawn without replacement; indices are sorted so that a full
    batch reproduces the deterministic oracle exactly.  The sphere row is
    exact.
    """
    X, y = dataset
    N, K = y.size, pool.K
    if not 1 <= b1 <= N:
        raise BatchTooLarge(f"objective batch {b1} not in [1, {N}]")
    if not 1 <= b2 <= K:
        raise BatchTooLarge(f"constraint batch {b2} not in [1, {K}]")
    idx = np.sort(rng_obj.choice(N, b1, replace=False))
    kdx = np.sort(rng_con.choice(K, b2, replace=False))
    if b1 == N:
        gbar = logistic_grad(X, y, x)
    else:
        gbar = logistic_grad(X[idx], y[idx], x)
    if b2 == K:
        A_b, a_b = pool.A_mean, pool.a_mean
    else:
        A_b, a_b = pool.A[kdx].mean(axis=0), pool.a[kdx].mean(axis=0)
    cbar = np.concatenate([A_b @ x - a_b, [x @ x - pool.a2]])
    jbar = np.vstack([A_b, 2.0 * x[None, :]])
    return StochasticEstimate(gbar, cbar, jbar)


class ExactOracle:
    """Returns the deterministic values unchanged."""

    def __init__(self, problem):
        self.problem = problem

    def __call__(self, x, k, beta_k, streams, truth=None):
        g, c, jac = self.problem.truth(x) if truth is None else truth
        return StochasticEstimate(g, c, jac, (0.0, 0.0, 0.0))


class GaussianOracle:
    """Estimator wrapping a deterministic problem with Gaussian noise."""

    def __init__(self, problem, noise):
        self.problem = problem
        self.noise = noise

    def __call__(self, x, k, beta_k, streams, truth=None):
        if truth is None:
            truth = self.problem.truth(x)
        for attempt in range(MAX_RESAMPLES + 1):
            est = gaussian_estimate(truth, beta_k, self.noise, streams, k, attempt)
            if has_full_row_rank(est.jbar):
                return replace(est, draws=attempt + 1)
        raise RankDeficient(f"iteration {k}: noisy Jacobian rank deficient after {MAX_RESAMPLES} resamples")


class MinibatchOracle:
    """Estimator for the logistic problem built from a dataset and pool."""

    def __init__(self, dataset, pool, b1, b2):
        self.dataset = dataset
        self.pool = pool
        self.b1 = int(b1)
        self.b2 = int(b2)

    def __call__(self, x, k, beta_k, streams, truth=None):
        return minibatch_estimate(self.dataset, self.pool, x, self.b1, self.b2,
                                  streams.generator(k, TAG_BATCH_OBJ),
                                  streams.generator(k, TAG_BATCH_CON))
