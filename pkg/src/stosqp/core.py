"""Stochastic SQP with adaptive step-size selection.

One iteration: solve the SQP subproblem with the current estimates, update
the merit parameter ``tau`` and the ratio parameter ``xi``, bracket the step
size in ``[alpha_min, alpha_max]`` and take the largest admissible point of a
geometric grid starting at ``alpha_min`` (or ``alpha_min`` itself under the
``"min"`` policy).
"""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvariantViolated, NonConvergent, NonFinite, NotSpd, SolverError
from .kkt import KktSystem, kkt_error, solve_kkt
from .rng import Streams

INF = math.inf
INVARIANT_RTOL = 1e-10
ORDER_SLACK = 1e-12
STEP_GROWTH = 1.1
PHI_SEARCH_HI = 1e6


# ---------------------------------------------------------------------------
# step-size parameter sequences


@dataclass(frozen=True)
class ConstantBeta:
    value: float = 0.1

    def __call__(self, k):
        return self.value

    @property
    def label(self):
        return f"const:{self.value:g}"


@dataclass(frozen=True)
class DiminishingBeta:
    """``beta_k = ((ceil(k/period) - 1) * period + 1) ** -power``."""

    period: int = 500
    power: float = 0.6

    def __call__(self, k):
        block = (k + self.period - 1) // self.period
        return float(((block - 1) * self.period + 1) ** -self.power)

    @property
    def label(self):
        return "dimin"


@dataclass(frozen=True)
class ComplexityBeta:
    """Constant ``omega_beta / sqrt(k_max)`` for a fixed iteration budget."""

    k_max: int
    omega_beta: float = 1.0

    def __call__(self, k):
        return self.omega_beta / math.sqrt(self.k_max)

    @property
    def label(self):
        return f"complexity:{self.k_max}:{self.omega_beta:g}"


def parse_beta(spec):
    """Parse ``const:<v>``, ``dimin`` or ``complexity:<k_max>[:<omega_beta>]``."""
    head, _, rest = str(spec).partition(":")
    try:
        if head in ("const", "constant"):
            return ConstantBeta(float(rest))
        if head in ("dimin", "diminishing") and not rest:
            return DiminishingBeta()
        if head == "complexity":
            parts = rest.split(":")
            omega = float(parts[1]) if len(parts) > 1 and parts[1] else 1.0
            return ComplexityBeta(int(parts[0]), omega)
    except (ValueError, IndexError):
        pass
    raise ValueError(f"bad beta schedule {spec!r}; use const:<v>, dimin or complexity:<k_max>[:<omega>]")


# ---------------------------------------------------------------------------
# parameters, state, records


@dataclass(frozen=True)
class SqpParams:
    tau0: float = 1.0
    xi0: float = 1.0
    eta: float = 0.5
    sigma: float = 0.1
    eps_tau: float = 0.01
    eps_xi: float = 0.01
    theta: float = 10.0
    lip_l: float = 1.0
    lip_gamma: float = 1.0
    zeta: float = 1.0
    kappa_h: float = 1e6
    max_iter: int = 5000
    step_policy: str = "geometric"

    def __post_init__(self):
        checks = [
            (self.tau0 > 0, "tau0 > 0"),
            (self.xi0 > 0, "xi0 > 0"),
            (0 < self.eta < 1, "0 < eta < 1"),
            (0 < self.sigma < 1, "0 < sigma < 1"),
            (0 < self.eps_tau < 1, "0 < eps_tau < 1"),
            (0 < self.eps_xi < 1, "0 < eps_xi < 1"),
            (self.theta >= 0, "theta >= 0"),
            (self.lip_l > 0, "lip_l > 0"),
            (self.lip_gamma >= 0, "lip_gamma >= 0"),
            (0 < self.zeta <= self.kappa_h, "0 < zeta <= kappa_h"),
            (self.max_iter >= 0, "max_iter >= 0"),
            (self.step_policy in ("geometric", "min"), "step_policy in {geometric, min}"),
        ]
        for ok, what in checks:
            if not ok:
                raise ValueError(f"invalid SqpParams: need {what}")

    def beta_ratio(self, beta):
        return 2 * (1 - self.eta) * beta * self.xi0 * self.tau0 / (self.tau0 * self.lip_l + self.lip_gamma)

    def check_schedule(self, schedule, n_iter=None):
        """Validate ``beta_k`` in (0, 1] and the ``alpha_min <= 1`` requirement for k = 1..n_iter."""
        n_iter = self.max_iter if n_iter is None else n_iter
        for k in range(1, n_iter + 1):
            b = schedule(k)
            if not 0 < b <= 1:
                raise ValueError(f"beta_{k} = {b} is outside (0, 1]")
            r = self.beta_ratio(b)
            if not 0 < r <= 1:
                raise ValueError(f"beta_{k} = {b} gives 2(1-eta)beta xi0 tau0/(tau0 L + Gamma) = {r:.4g} > 1")


@dataclass(frozen=True)
class SolverState:
    x: np.ndarray
    tau: float
    xi: float
    k: int = 1
    streams: Optional[Streams] = None


@dataclass(frozen=True)
class StepInterval:
    alpha_min: float
    alpha_max: float
    alpha_phi: float
    beta_k: float
    cap: float  # alpha_min + theta * beta_k


@dataclass
class IterateRecord:
    k: int
    x: np.ndarray
    beta: float
    d_norm_sq: Optional[float]
    tau: Optional[float]
    tau_trial: Optional[float]
    xi: Optional[float]
    xi_trial: Optional[float]
    alpha: float
    alpha_min: Optional[float]
    alpha_max: Optional[float]
    alpha_phi: Optional[float]
    model_reduction: Optional[float]
    feas_err: float
    stat_err: float
    cbar_l1: Optional[float]
    d_zero: bool = False
    kkt_residual: Optional[float] = None
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# scalar building blocks


def _finite(*vals):
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise NonFinite("non-finite input")


def model_reduction(tau, gbar, cbar, dbar):
    _finite(tau, gbar, cbar, dbar)
    return float(-tau * (gbar @ dbar) + np.abs(cbar).sum())


def trial_merit_parameter(gbar, dbar, h, cbar, sigma):
    denom = float(gbar @ dbar + 0.5 * (dbar @ (h @ dbar)))
    if denom <= 0:
        return INF
    return (1 - sigma) * float(np.abs(cbar).sum()) / denom


def update_merit_parameter(tau_prev, tau_trial, eps_tau):
    if tau_prev <= (1 - eps_tau) * tau_trial:
        return tau_prev
    return (1 - eps_tau) * min(tau_prev, tau_trial)


def trial_ratio(delta_l, tau, dbar_norm_sq):
    if dbar_norm_sq == 0:
        return INF
    return delta_l / (tau * dbar_norm_sq)


def update_ratio(xi_prev, xi_trial, eps_xi):
    if xi_prev <= xi_trial:
        return xi_prev
    return min((1 - eps_xi) * xi_prev, xi_trial)


def _phi_terms(alpha, beta_k, delta_l, cbar_l1, tau, lip_l, lip_gamma, dbar_norm_sq, eta):
    return (
        (eta - 1) * alpha * beta_k * delta_l,
        (abs(1 - alpha) - (1 - alpha)) * cbar_l1,
        0.5 * (tau * lip_l + lip_gamma) * alpha * alpha * dbar_norm_sq,
    )


def phi(alpha, beta_k, delta_l, cbar_l1, tau, lip_l, lip_gamma, dbar_norm_sq, eta=0.5):
    return sum(_phi_terms(alpha, beta_k, delta_l, cbar_l1, tau, lip_l, lip_gamma, dbar_norm_sq, eta))


def phi_scale(alpha, *args, eta=0.5):
    return 1.0 + sum(abs(t) for t in _phi_terms(alpha, *args, eta))


def alpha_phi(beta_k, delta_l, cbar_l1, tau, lip_l, lip_gamma, dbar_norm_sq,
              eta=0.5, alpha_min=None, theta=None):
    """Largest ``alpha > 0`` with ``phi(alpha) <= 0``.

    Each side of ``alpha = 1`` is a quadratic with leading coefficient
    ``a = (tau L + Gamma)||d||^2 / 2``; the root is found in closed form and
    checked, with bisection as a fallback.  With ``dbar_norm_sq == 0`` the
    value ``alpha_min + theta * beta_k`` is returned.
    """
    if dbar_norm_sq == 0:
        if alpha_min is None or theta is None:
            raise ValueError("alpha_min and theta are required when d = 0")
        return alpha_min + theta * beta_k
    args = (beta_k, delta_l, cbar_l1, tau, lip_l, lip_gamma, dbar_norm_sq)
    a = 0.5 * (tau * lip_l + lip_gamma) * dbar_norm_sq
    b = (1 - eta) * beta_k * delta_l
    if a <= 0 or not math.isfinite(a) or not math.isfinite(b):
        raise NonConvergent(f"degenerate phi coefficients a={a}, b={b}")
    root = b / a
    if root >= 1:
        # alpha > 1 piece: a t^2 + (2 c1 - b) t - 2 c1 = 0
        bb = 2 * cbar_l1 - b
        disc = math.sqrt(bb * bb + 8 * a * cbar_l1)
        root = (disc - bb) / (2 * a) if bb < 0 else 4 * cbar_l1 / (bb + disc)
        root = max(root, 1.0)
    if abs(phi(root, *args, eta=eta)) <= INVARIANT_RTOL * phi_scale(root, *args, eta=eta):
        return root
    return _alpha_phi_bisect(args, eta, a, b)


def _alpha_phi_bisect(args, eta, a, b):
    lo = min(b / (2 * a), 1.0)
    hi = PHI_SEARCH_HI
    if not (lo > 0 and phi(lo, *args, eta=eta) <= 0 < phi(hi, *args, eta=eta)):
        raise NonConvergent("could not bracket the positive root of phi")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phi(mid, *args, eta=eta) <= 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    if abs(phi(lo, *args, eta=eta)) > INVARIANT_RTOL * phi_scale(lo, *args, eta=eta):
        raise NonConvergent("bisection for the root of phi did not converge")
    return lo


def step_interval(state, params, beta_k, delta_l, cbar_l1, dbar_norm_sq):
    tau, xi = state.tau, state.xi
    a_min = 2 * (1 - params.eta) * beta_k * xi * tau / (tau * params.lip_l + params.lip_gamma)
    cap = a_min + params.theta * beta_k
    if dbar_norm_sq == 0:
        interval = StepInterval(a_min, cap, cap, beta_k, cap)
    else:
        a_phi = alpha_phi(beta_k, delta_l, cbar_l1, tau, params.lip_l, params.lip_gamma,
                          dbar_norm_sq, eta=params.eta)
        interval = StepInterval(a_min, min(cap, a_phi), a_phi, beta_k, cap)
    lo, mid, hi = interval.alpha_min, interval.alpha_max, interval.alpha_phi
    slack = ORDER_SLACK * max(1.0, hi)
    if not (0 < lo <= mid + slack and mid <= hi + slack):
        raise InvariantViolated(
            f"step ordering failed: alpha_min={lo!r}, alpha_max={mid!r}, alpha_phi={hi!r}")
    return interval


def select_alpha(interval, phi_evaluator):
    """Largest ``alpha_min * 1.1**t`` (t = 0, 1, ...) with phi <= 0 that stays under the cap."""
    a0 = interval.alpha_min
    best = a0
    t = 1
    while True:
        cand = a0 * STEP_GROWTH ** t
        if cand > interval.cap or phi_evaluator(cand) > 0:
            return best
        best = cand
        t += 1


# ---------------------------------------------------------------------------
# invariants


@dataclass(frozen=True)
class Violation:
    tag: str
    k: int
    detail: str


def invariant_violations(rec, params, n_phi_samples=0, tol=INVARIANT_RTOL):
    """Per-iteration guarantees of the method, evaluated on a record."""
    out = []

    def bad(tag, detail):
        out.append(Violation(tag, rec.k, detail))

    zeta = params.zeta
    if not (0 < rec.tau <= params.tau0 * (1 + tol)):
        bad("merit-positivity", f"tau={rec.tau!r}")
    if math.isfinite(rec.tau_trial) and rec.tau > (1 - params.eps_tau) * rec.tau_trial * (1 + tol):
        bad("merit-gap", f"tau={rec.tau!r} > (1-eps_tau)*tau_trial={(1 - params.eps_tau) * rec.tau_trial!r}")
    if not rec.d_zero:
        lower = 0.5 * zeta * rec.tau * rec.d_norm_sq + params.sigma * rec.cbar_l1
        if rec.model_reduction < lower - tol * (1 + abs(rec.model_reduction)):
            bad("model-reduction", f"delta_l={rec.model_reduction!r} < {lower!r}")
        if not rec.model_reduction > 0:
            bad("model-reduction", f"delta_l={rec.model_reduction!r} is not positive")
    if math.isfinite(rec.xi_trial) and rec.xi_trial < 0.5 * zeta - 1e-12:
        bad("ratio-floor", f"xi_trial={rec.xi_trial!r} < zeta/2")
    if not ((1 - params.eps_xi) * 0.5 * zeta * (1 - tol) <= rec.xi <= params.xi0 * (1 + tol)):
        bad("ratio-floor", f"xi={rec.xi!r} outside [(1-eps_xi) zeta/2, xi0]")
    lo, mid, hi = rec.alpha_min, rec.alpha_max, rec.alpha_phi
    slack = tol * max(1.0, hi)
    if not (0 < lo <= mid + slack and mid <= hi + slack):
        bad("step-order", f"alpha_min={lo!r}, alpha_max={mid!r}, alpha_phi={hi!r}")
    if not (lo * (1 - tol) <= rec.alpha <= mid + slack):
        bad("step-choice", f"alpha={rec.alpha!r} outside [{lo!r}, {mid!r}]")
    if lo > 1 + tol:
        bad("alpha-min-bound", f"alpha_min={lo!r} > 1")
    if n_phi_samples and not rec.d_zero:
        args = (rec.beta, rec.model_reduction, rec.cbar_l1, rec.tau,
                params.lip_l, params.lip_gamma, rec.d_norm_sq)
        for a in np.linspace(hi / n_phi_samples, hi, n_phi_samples):
            a = float(a)
            val = phi(a, *args, eta=params.eta)
            if val > tol * phi_scale(a, *args, eta=params.eta):
                bad("phi-sign", f"phi({a!r}) = {val!r} > 0")
                break
    return out


def sequence_violations(records, params):
    """Monotonicity of tau and xi across consecutive records."""
    out = []
    prev_tau, prev_xi = params.tau0, params.xi0
    for rec in records:
        if rec.tau is None:
            continue
        if rec.tau > prev_tau:
            out.append(Violation("merit-monotone", rec.k, f"tau rose {prev_tau!r} -> {rec.tau!r}"))
        if rec.xi > prev_xi:
            out.append(Violation("ratio-monotone", rec.k, f"xi rose {prev_xi!r} -> {rec.xi!r}"))
        prev_tau, prev_xi = rec.tau, rec.xi
    return out


# ---------------------------------------------------------------------------
# iteration


def is_zero_direction(d, x):
    return float(np.max(np.abs(d), initial=0.0)) <= 1e-12 * (1.0 + float(np.max(np.abs(x), initial=0.0)))


def iterate(state, estimate, h, params, beta_k, errors=(math.nan, math.nan), check=True):
    """One iteration of the method; returns ``(new_state, record)``."""
    gbar, cbar, jbar = estimate.gbar, estimate.cbar, estimate.jbar
    sol = solve_kkt(KktSystem(h, jbar, gbar, cbar))
    d = sol.d
    x = state.x
    cbar_l1 = float(np.abs(cbar).sum())
    d_zero = is_zero_direction(d, x)

    if not d_zero:
        tau_trial = trial_merit_parameter(gbar, d, h, cbar, params.sigma)
        tau = update_merit_parameter(state.tau, tau_trial, params.eps_tau)
        delta_l = model_reduction(tau, gbar, cbar, d)
        dsq = float(d @ d)
        xi_trial = trial_ratio(delta_l, tau, dsq)
        xi = update_ratio(state.xi, xi_trial, params.eps_xi)
        inner = SolverState(x, tau, xi, state.k, state.streams)
        interval = step_interval(inner, params, beta_k, delta_l, cbar_l1, dsq)
        if params.step_policy == "min":
            alpha = interval.alpha_min
        else:
            args = (beta_k, delta_l, cbar_l1, tau, params.lip_l, params.lip_gamma, dsq)
            alpha = select_alpha(interval, lambda a: phi(a, *args, eta=params.eta))
    else:
        tau, tau_trial, xi, xi_trial = state.tau, INF, state.xi, INF
        dsq = float(d @ d)
        delta_l = model_reduction(tau, gbar, cbar, d)
        inner = SolverState(x, tau, xi, state.k, state.streams)
        interval = step_interval(inner, params, beta_k, delta_l, cbar_l1, 0.0)
        alpha = interval.alpha_min

    rec = IterateRecord(
        k=state.k, x=x, beta=beta_k, d_norm_sq=dsq,
        tau=tau, tau_trial=tau_trial, xi=xi, xi_trial=xi_trial,
        alpha=alpha, alpha_min=interval.alpha_min, alpha_max=interval.alpha_max,
        alpha_phi=interval.alpha_phi, model_reduction=delta_l,
        feas_err=errors[0], stat_err=errors[1], cbar_l1=cbar_l1,
        d_zero=d_zero, kkt_residual=sol.residual_inf,
    )
    if check:
        bad = invariant_violations(rec, params)
        if bad:
            raise InvariantViolated(f"iteration {state.k}: " + "; ".join(v.tag for v in bad), bad, [rec])
    new_state = SolverState(x + alpha * d, tau, xi, state.k + 1, state.streams)
    return new_state, rec


def identity_hessian(n):
    eye = np.eye(n)

    def h_oracle(k):
        return eye

    return h_oracle


def check_hessian(h, params):
    lam = np.linalg.eigvalsh(h)
    if not np.allclose(h, h.T, rtol=0, atol=1e-12 * max(1.0, np.abs(h).max())):
        raise NotSpd("H_k is not symmetric")
    if lam[0] < params.zeta * (1 - 1e-12) or lam[-1] > params.kappa_h * (1 + 1e-12):
        raise NotSpd(f"H_k eigenvalues [{lam[0]:.3e}, {lam[-1]:.3e}] outside [zeta, kappa_h]")


def run(problem, oracle, params, beta_schedule, seed, run_id=0, h_oracle=None,
        max_time=None, check=True):
    """Run ``params.max_iter`` iterations from ``problem.x1``.

    ``oracle(x, k, beta_k, streams, truth=...)`` supplies the estimates;
    ``problem`` is the exact oracle used for the logged error metrics.
    On an invariant failure the partial log is attached to the exception.
    """
    params.check_schedule(beta_schedule)
    streams = seed if isinstance(seed, Streams) else Streams(seed, run_id)
    h_oracle = h_oracle or identity_hessian(problem.n)
    state = SolverState(np.array(problem.x1, dtype=float), params.tau0, params.xi0, 1, streams)
    records = []
    checked_h = None
    t0 = time.perf_counter()
    for k in range(1, params.max_iter + 1):
        if max_time is not None and time.perf_counter() - t0 > max_time:
            break
        beta_k = beta_schedule(k)
        truth = problem.truth(state.x)
        errors = kkt_error(*truth)
        h = h_oracle(k)
        if h is not checked_h:
            check_hessian(h, params)
            checked_h = h
        try:
            est = oracle(state.x, k, beta_k, streams, truth=truth)
            state, rec = iterate(state, est, h, params, beta_k, errors, check=check)
        except SolverError as err:
            err.records = records + (getattr(err, "records", None) or [])
            raise
        rec.extra["draws"] = est.draws
        records.append(rec)
    return records
