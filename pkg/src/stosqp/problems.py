"""Deterministic test problems.

Each :class:`ProblemOracle` is the exact (noise-free) evaluator of
``f, grad f, c, jac c`` for ``min f(x) s.t. c(x) = 0``.  The builtin registry
holds small analytic problems with known KKT points; the logistic problem is
built from a labeled dataset plus a generated pool of linear constraint
samples.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateSamples, UnknownProblem
from .rng import TAG_INIT, TAG_LIPSCHITZ, TAG_POOL, Streams

LIPSCHITZ_INFLATION = 1.5
LIPSCHITZ_FLOOR = 1e-8


@dataclass(frozen=True)
class LipschitzEstimate:
    lip_l: float
    lip_gamma: float
    method: str = "sampled"


@dataclass(frozen=True)
class ProblemOracle:
    name: str
    n: int
    m: int
    eval_f: Callable
    eval_grad: Callable
    eval_c: Callable
    eval_jac: Callable
    x1: np.ndarray
    known_solution: Optional[np.ndarray] = None
    known_multiplier: Optional[np.ndarray] = None
    # constraint curvature sum when known in closed form; overrides sampling
    analytic_gamma: Optional[float] = None
    lipschitz: Optional[LipschitzEstimate] = None
    description: str = ""

    def truth(self, x):
        return self.eval_grad(x), self.eval_c(x), self.eval_jac(x)

    def with_lipschitz(self, est):
        return replace(self, lipschitz=est)


# ---------------------------------------------------------------------------
# builtin analytic problems


def _sphere_linear():
    def f(x):
        return x[0] + x[1]

    def grad(x):
        return np.array([1.0, 1.0])

    def c(x):
        return np.array([x @ x - 1.0])

    def jac(x):
        return 2.0 * x.reshape(1, 2)

    s = 1.0 / np.sqrt(2.0)
    return ProblemOracle(
        "sphere-linear", 2, 1, f, grad, c, jac,
        x1=np.array([2.0, 0.0]),
        known_solution=np.array([-s, -s]),
        known_multiplier=np.array([s]),
        analytic_gamma=2.0,
        description="min x1+x2 s.t. ||x||^2 = 1",
    )


def _quad_plane(n=5):
    def f(x):
        return 0.5 * (x @ x)

    def grad(x):
        return x.copy()

    def c(x):
        return np.array([x.sum() - 1.0])

    def jac(x):
        return np.ones((1, n))

    return ProblemOracle(
        "quad-plane", n, 1, f, grad, c, jac,
        x1=np.array([1.0, -1.0, 2.0, 0.5, -0.5]),
        known_solution=np.full(n, 1.0 / n),
        known_multiplier=np.array([-1.0 / n]),
        analytic_gamma=0.0,
        description="min 0.5||x||^2 s.t. sum(x) = 1",
    )


def _rosenbrock_eq():
    def f(x):
        return 100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2

    def grad(x):
        t = x[1] - x[0] ** 2
        return np.array([-400.0 * x[0] * t - 2.0 * (1.0 - x[0]), 200.0 * t])

    def c(x):
        return np.array([x @ x - 2.0])

    def jac(x):
        return 2.0 * x.reshape(1, 2)

    return ProblemOracle(
        "rosenbrock-eq", 2, 1, f, grad, c, jac,
        x1=np.array([1.2, 0.7]),
        known_solution=np.array([1.0, 1.0]),
        known_multiplier=np.array([0.0]),
        analytic_gamma=2.0,
        description="Rosenbrock s.t. x1^2 + x2^2 = 2",
    )


def _circle_two():
    # KKT: x1 = x2 = -3/(4 y1), x3 = -1/(2 y1), y1 = sqrt(11/24), y2 = 1/2
    y1 = np.sqrt(11.0 / 24.0)
    xs = np.array([-3.0 / (4 * y1), -3.0 / (4 * y1), -1.0 / (2 * y1)])
    w = np.array([1.0, 2.0, 1.0])

    def f(x):
        return w @ x

    def grad(x):
        return w.copy()

    def c(x):
        return np.array([x @ x - 3.0, x[0] - x[1]])

    def jac(x):
        return np.array([2.0 * x, [1.0, -1.0, 0.0]])

    return ProblemOracle(
        "circle-two", 3, 2, f, grad, c, jac,
        x1=np.array([-1.5, -0.5, -1.0]),
        known_solution=xs,
        known_multiplier=np.array([y1, 0.5]),
        analytic_gamma=2.0,
        description="min x1+2x2+x3 s.t. ||x||^2 = 3, x1 = x2",
    )


def _powell_h(x):
    return (0.1 * (x[0] + 10 * x[1]) ** 2 + 5 * (x[2] - x[3]) ** 2
            + (x[1] - 2 * x[2]) ** 4 + 10 * (x[0] - x[3]) ** 4)


def _powell_h_grad(x):
    a = x[0] + 10 * x[1]
    b = x[2] - x[3]
    p = x[1] - 2 * x[2]
    q = x[0] - x[3]
    return np.array([
        0.2 * a + 40 * q ** 3,
        2.0 * a + 4 * p ** 3,
        10 * b - 8 * p ** 3,
        -10 * b - 40 * q ** 3,
    ])


def _powell_like():
    # Powell-singular terms plus a linear tilt chosen so that xs is a KKT point
    # with multipliers ys; the Lagrangian is strictly convex at ys, so xs is
    # the global minimizer.
    xs = np.array([1.0, -1.0, 1.0, 1.0])
    ys = np.array([0.5, 0.25])

    def c(x):
        return np.array([x @ x - 4.0, x[0] * x[1] + x[2] * x[3]])

    def jac(x):
        return np.array([2.0 * x, [x[1], x[0], x[3], x[2]]])

    tilt = _powell_h_grad(xs) + jac(xs).T @ ys

    def f(x):
        return _powell_h(x) - tilt @ x

    def grad(x):
        return _powell_h_grad(x) - tilt

    return ProblemOracle(
        "powell-like", 4, 2, f, grad, c, jac,
        x1=np.array([1.3, -0.8, 0.7, 1.2]),
        known_solution=xs,
        known_multiplier=ys,
        analytic_gamma=3.0,
        description="tilted Powell function s.t. ||x||^2 = 4, x1 x2 + x3 x4 = 0",
    )


_REGISTRY = {
    "sphere-linear": _sphere_linear,
    "quad-plane": _quad_plane,
    "rosenbrock-eq": _rosenbrock_eq,
    "circle-two": _circle_two,
    "powell-like": _powell_like,
}

BUILTIN_NAMES = tuple(_REGISTRY)

# (seed, samples, radius) used to fix each builtin problem's (L, Gamma) once
_LIP_SETUP = (0, 200, 0.5)


def builtin_problem(name, with_lipschitz=True):
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise UnknownProblem(
            f"unknown problem {name!r}; choose from {', '.join(BUILTIN_NAMES)}") from None
    prob = factory()
    if with_lipschitz:
        seed, n_samples, radius = _LIP_SETUP
        stream = Streams(seed).child("lipschitz", name).generator(0, TAG_LIPSCHITZ)
        prob = prob.with_lipschitz(estimate_lipschitz(prob, prob.x1, n_samples, radius, stream))
    return prob


# ---------------------------------------------------------------------------
# Lipschitz constants


def _ball(rng, center, radius, count):
    n = center.size
    z = rng.standard_normal((count, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / n)
    return center + z * r[:, None]


def estimate_lipschitz(oracle, x1, n_samples, radius, stream):
    """Sampled gradient-difference estimate of ``(L, Gamma)`` around ``x1``.

    ``stream`` is a numpy Generator.  ``L`` and the per-constraint constants
    are maxima of difference quotients over ``n_samples`` random pairs in the
    ball, inflated by 1.5.  ``oracle.analytic_gamma`` replaces the sampled
    ``Gamma`` when set.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    if radius <= 0:
        raise ValueError("radius must be positive")
    x1 = np.asarray(x1, dtype=float)
    u = _ball(stream, x1, radius, n_samples)
    v = _ball(stream, x1, radius, n_samples)
    dist = np.linalg.norm(u - v, axis=1)
    keep = dist > 1e-14 * (1.0 + np.linalg.norm(x1))
    if not np.any(keep):
        raise DegenerateSamples("all sampled pairs coincide")
    lip_l = 0.0
    gammas = np.zeros(oracle.m)
    for ui, vi, di in zip(u[keep], v[keep], dist[keep]):
        lip_l = max(lip_l, np.linalg.norm(oracle.eval_grad(ui) - oracle.eval_grad(vi)) / di)
        if oracle.analytic_gamma is None:
            dj = np.atleast_2d(oracle.eval_jac(ui) - oracle.eval_jac(vi))
            gammas = np.maximum(gammas, np.linalg.norm(dj, axis=1) / di)
    lip_l = max(LIPSCHITZ_INFLATION * lip_l, LIPSCHITZ_FLOOR)
    if oracle.analytic_gamma is None:
        return LipschitzEstimate(lip_l, LIPSCHITZ_INFLATION * float(gammas.sum()), "sampled")
    return LipschitzEstimate(lip_l, float(oracle.analytic_gamma), "sampled+analytic")


# ---------------------------------------------------------------------------
# constrained logistic regression


@dataclass
class LogisticProblemConfig:
    features: np.ndarray
    labels: np.ndarray
    K: int = 1000
    a2: float = 1.0
    A1: Optional[np.ndarray] = None
    a1: Optional[np.ndarray] = None
    perturbation_var: Optional[float] = None  # default 1e-3 / n
    rhs_var: float = 1e-3
    n_rows: int = 10
    base_mean: float = 1.0
    base_var: float = 100.0
    name: str = "logistic"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be in {-1, +1}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.a2 <= 0:
            raise ValueError("a2 must be positive")
        if self.perturbation_var is None:
            self.perturbation_var = 1e-3 / self.features.shape[1]


@dataclass(frozen=True)
class ConstraintPool:
    A: np.ndarray  # (K, rows, n)
    a: np.ndarray  # (K, rows)
    a2: float
    A_mean: np.ndarray = field(repr=False, default=None)
    a_mean: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_samples(cls, A, a, a2):
        return cls(A, a, a2, A.mean(axis=0), a.mean(axis=0))

    @property
    def K(self):
        return self.A.shape[0]


def logistic_loss(features, labels, x):
    return float(np.mean(np.logaddexp(0.0, -labels * (features @ x))))


def logistic_grad(features, labels, x):
    z = labels * (features @ x)
    # d/dz log(1+e^{-z}) = -sigmoid(-z)
    s = -0.5 * (1.0 - np.tanh(0.5 * z))
    return features.T @ (labels * s) / labels.size


def _min_norm_sq(A, a):
    sol = np.linalg.lstsq(A, a, rcond=None)[0]
    return float(sol @ sol)


def generate_constraint_pool(n, seed, K=1000, a2=1.0, n_rows=10, perturbation_var=None,
                             rhs_var=1e-3, A1=None, a1=None, base_mean=1.0, base_var=100.0,
                             name="logistic", max_redraws=100):
    """Draw ``K`` samples ``(A_k, a_k)`` scattered around a base pair ``(A1, a1)``.

    Base entries are N(base_mean, base_var); sample entries add N(0,
    perturbation_var) to ``A1`` (default ``1e-3 / n``) and N(0, rhs_var) to
    ``a1``.  When the base pair is not supplied it is redrawn (up to
    ``max_redraws`` times) until the minimum-norm solution of the averaged
    linear block has squared norm at most ``a2 / 2``, which keeps the sphere
    ``||x||^2 = a2`` compatible with the linear rows.
    """
    if perturbation_var is None:
        perturbation_var = 1e-3 / n
    rng = Streams(seed).child("logistic", name).generator(0, TAG_POOL)
    sd = np.sqrt(base_var)
    fixed = A1 is not None and a1 is not None
    for _ in range(max_redraws):
        base_A = A1 if A1 is not None else rng.normal(base_mean, sd, (n_rows, n))
        base_a = a1 if a1 is not None else rng.normal(base_mean, sd, n_rows)
        A = base_A[None] + np.sqrt(perturbation_var) * rng.standard_normal((K, n_rows, n))
        a = base_a[None] + np.sqrt(rhs_var) * rng.standard_normal((K, n_rows))
        pool = ConstraintPool.from_samples(A, a, a2)
        if fixed or _min_norm_sq(pool.A_mean, pool.a_mean) <= 0.5 * a2:
            return pool
    raise ValueError("could not draw linear constraints compatible with the sphere")


def build_logistic_problem(cfg, seed):
    """Constrained logistic regression oracle and its constraint sample pool.

    The exact constraint uses the pool means, so mini-batch estimates drawn
    from the pool are unbiased for it.  ``x1`` is a standard Gaussian draw
    scaled to norm 0.1.
    """
    X, y = cfg.features, cfg.labels
    n = X.shape[1]
    rows = cfg.n_rows
    pool = generate_constraint_pool(
        n, seed, K=cfg.K, a2=cfg.a2, n_rows=rows, perturbation_var=cfg.perturbation_var,
        rhs_var=cfg.rhs_var, A1=cfg.A1, a1=cfg.a1, base_mean=cfg.base_mean,
        base_var=cfg.base_var, name=cfg.name)
    streams = Streams(seed).child("logistic", cfg.name)

    A_bar, a_bar, a2 = pool.A_mean, pool.a_mean, cfg.a2

    def f(x):
        return logistic_loss(X, y, x)

    def grad(x):
        return logistic_grad(X, y, x)

    def c(x):
        return np.concatenate([A_bar @ x - a_bar, [x @ x - a2]])

    def jac(x):
        return np.vstack([A_bar, 2.0 * x[None, :]])

    x1 = streams.generator(0, TAG_INIT).standard_normal(n)
    x1 *= 0.1 / np.linalg.norm(x1)
    oracle = ProblemOracle(
        cfg.name, n, rows + 1, f, grad, c, jac, x1=x1,
        analytic_gamma=2.0,
        description=f"logistic regression, N={X.shape[0]}, n={n}, K={cfg.K}",
    )
    return oracle, pool


def synthetic_dataset(N, n, seed, noise=0.1):
    """Gaussian features with labels from a planted separator.

    Rows are scaled to unit norm on average so that the logistic gradient's
    Lipschitz constant stays O(1).
    """
    rng = Streams(seed).child("dataset", N, n).generator(0, TAG_INIT)
    X = rng.standard_normal((N, n)) / np.sqrt(max(n, 1))
    w = rng.standard_normal(n)
    score = X @ w + noise * rng.standard_normal(N)
    y = np.where(score >= 0, 1.0, -1.0)
    return X, y


def logistic_from_dataset(X, y, seed, name="logistic", **cfg_kw):
    """Build the logistic oracle and pool, then fix ``L`` by sampling near x1."""
    cfg = LogisticProblemConfig(X, y, name=name, **cfg_kw)
    oracle, pool = build_logistic_problem(cfg, seed)
    stream = Streams(seed).child("lipschitz", name).generator(0, TAG_LIPSCHITZ)
    est = estimate_lipschitz(oracle, oracle.x1, 50, 1.0, stream)
    return oracle.with_lipschitz(est), pool
