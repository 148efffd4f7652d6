"""Dense KKT solves for the equality-constrained SQP subproblem.

The saddle-point system

    [ H   J^T ] [d]     [g]
    [ J   0   ] [y] = - [c]

is solved by block elimination.  ``H`` is SPD by assumption, so we factor
it with Cholesky, form the Schur complement ``S = J H^{-1} J^T`` and factor
that as well.  Both factorizations double as the rank / definiteness
checks required by the solver.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import NonFinite, NotSpd, RankDeficient

PIVOT_RTOL = 1e-12
SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class KktSystem:
    h: np.ndarray
    jac: np.ndarray
    rhs_g: np.ndarray
    rhs_c: np.ndarray

    def validate(self, zeta=None):
        """Check symmetry, the eigenvalue floor ``zeta`` and full row rank of ``jac``."""
        h = np.asarray(self.h, dtype=float)
        jac = np.atleast_2d(np.asarray(self.jac, dtype=float))
        for name, arr in (("h", h), ("jac", jac), ("rhs_g", self.rhs_g), ("rhs_c", self.rhs_c)):
            if not np.all(np.isfinite(arr)):
                raise NonFinite(f"{name} has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(h))))
        if np.max(np.abs(h - h.T)) > SYMMETRY_RTOL * scale:
            raise NotSpd("h is not symmetric")
        lam = np.linalg.eigvalsh(h)
        if lam[0] <= 0 or (zeta is not None and lam[0] < zeta * (1 - 1e-12)):
            raise NotSpd(f"min eigenvalue of h is {lam[0]:.3e}")
        if jac.shape[0]:
            sv = np.linalg.svd(jac, compute_uv=False)
            if sv[-1] <= PIVOT_RTOL * sv[0]:
                raise RankDeficient("jac does not have full row rank")
        return self


@dataclass(frozen=True)
class KktSolution:
    d: np.ndarray
    y: np.ndarray
    residual_inf: float
    min_sv: float = None


def _cholesky(a, exc, what):
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as err:
        raise exc(f"{what}: factorization failed") from err
    piv = np.diag(low) ** 2
    if piv.size and (piv.min() <= 0 or piv.min() < PIVOT_RTOL * piv.max()):
        raise exc(f"{what}: pivot ratio {piv.min() / piv.max():.3e}")
    return low


def assemble(h, jac):
    """Return the full ``(n+m) x (n+m)`` saddle-point matrix."""
    h = np.asarray(h, dtype=float)
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    m = jac.shape[0]
    return np.block([[h, jac.T], [jac, np.zeros((m, m))]])


def solve_kkt(sys, diagnostics=False, refine=2):
    """Solve the saddle-point system by block elimination.

    Up to ``refine`` steps of iterative refinement reuse both factorizations.
    They matter near convergence: a single elimination pass leaves
    ``jac d + c`` accurate only to ``eps * ||g||``, which swamps ``g^T d``
    once ``d`` is tiny.
    """
    h = np.asarray(sys.h, dtype=float)
    jac = np.atleast_2d(np.asarray(sys.jac, dtype=float))
    g = np.asarray(sys.rhs_g, dtype=float)
    c = np.atleast_1d(np.asarray(sys.rhs_c, dtype=float))

    lh = _cholesky(h, NotSpd, "h")
    hinv_jt = cho_solve((lh, True), jac.T)
    ls = _cholesky(jac @ hinv_jt, RankDeficient, "Schur complement")

    def block_solve(rg, rc):
        w = cho_solve((lh, True), rg)
        y = cho_solve((ls, True), rc - jac @ w)
        return -w - hinv_jt @ y, y

    def residual(d, y):
        r_top = h @ d + jac.T @ y + g
        r_bot = jac @ d + c
        return r_top, r_bot, max(np.max(np.abs(r_top), initial=0.0), np.max(np.abs(r_bot), initial=0.0))

    d, y = block_solve(g, c)
    r_top, r_bot, res = residual(d, y)
    for _ in range(refine):
        if res == 0.0:
            break
        dd, dy = block_solve(r_top, r_bot)
        d2, y2 = d + dd, y + dy
        r_top2, r_bot2, res2 = residual(d2, y2)
        if not res2 < res and not np.max(np.abs(r_bot2), initial=0.0) < np.max(np.abs(r_bot), initial=0.0):
            break
        d, y, r_top, r_bot, res = d2, y2, r_top2, r_bot2, res2

    min_sv = min_singular_value(assemble(h, jac)) if diagnostics else None
    return KktSolution(d=d, y=y, residual_inf=float(res), min_sv=min_sv)


def least_squares_multiplier(g, jac):
    """Multiplier minimizing ``||g + jac^T y||_2`` and the resulting residual.

    Solved through the normal equations ``jac jac^T y = -jac g``.
    """
    g = np.asarray(g, dtype=float)
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    low = _cholesky(jac @ jac.T, RankDeficient, "jac jac^T")
    y = cho_solve((low, True), -(jac @ g))
    return y, g + jac.T @ y


def has_full_row_rank(jac):
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    if not np.all(np.isfinite(jac)):
        return False
    try:
        _cholesky(jac @ jac.T, RankDeficient, "jac jac^T")
    except RankDeficient:
        return False
    return True


def min_singular_value(block):
    block = np.asarray(block, dtype=float)
    if not np.all(np.isfinite(block)):
        raise NonFinite("block has non-finite entries")
    return float(np.linalg.svd(block, compute_uv=False)[-1])


def kkt_error(g, c, jac):
    """``(||c||_inf, ||g + jac^T y_LS||_inf)`` for exact first-order data."""
    c = np.atleast_1d(c)
    _, resid = least_squares_multiplier(g, jac)
    return float(np.max(np.abs(c), initial=0.0)), float(np.max(np.abs(resid), initial=0.0))
