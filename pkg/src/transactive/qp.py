"""Convex QP solver: minimize 0.5 x'Qx + q'x  s.t.  Ax = b, Gx <= h, lo <= x <= hi.

Operator-splitting method on the boxed form l <= Mx <= u with
M = [A; G; I], factorizing the KKT system once and iterating with fixed
per-row step sizes. A polishing step (equality solve on the detected active
set) is used to reach tight KKT tolerances. Everything is dense and
deterministic; intended for problems up to a few thousand variables.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 20000

_SIGMA = 1e-6          # primal regularization in the KKT matrix
_ALPHA = 1.6           # over-relaxation
_RHO_INEQ = 0.1        # step size for inequality / box rows
_RHO_EQ_FACTOR = 1e3   # equality rows get a stiffer step
_CHECK_EVERY = 25
_POLISH_DELTA = 1e-9


class QpError(ValueError):
    """Raised on malformed problem data."""


class QpStatus(Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"


def _as_matrix(x, name: str, cols: int | None = None) -> np.ndarray:
    m = np.asarray(x, dtype=float)
    if m.ndim != 2:
        raise QpError(f"{name} must be a 2-d array, got ndim={m.ndim}")
    if cols is not None and m.shape[1] != cols:
        raise QpError(f"{name} must have {cols} columns, got {m.shape[1]}")
    return m


@dataclass
class QpProblem:
    """Problem data. G/h are optional general inequality rows Gx <= h.

    Q must be symmetric positive semidefinite; lo/hi may contain +-inf.
    """

    Q: np.ndarray
    q: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    G: np.ndarray | None = None
    h: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.Q = _as_matrix(self.Q, "Q")
        n = self.Q.shape[0]
        if self.Q.shape != (n, n):
            raise QpError(f"Q must be square, got {self.Q.shape}")
        self.q = np.asarray(self.q, dtype=float)
        if self.q.shape != (n,):
            raise QpError(f"q must have shape ({n},), got {self.q.shape}")

        scale = 1.0 + np.abs(self.Q).max(initial=0.0)
        if np.abs(self.Q - self.Q.T).max(initial=0.0) > 1e-9 * scale:
            raise QpError("Q must be symmetric")
        self.Q = 0.5 * (self.Q + self.Q.T)
        try:
            np.linalg.cholesky(self.Q + (1e-10 * scale) * np.eye(n))
        except np.linalg.LinAlgError:
            raise QpError("Q must be positive semidefinite") from None

        self.A = _as_matrix(self.A, "A", cols=n) if np.size(self.A) else np.zeros((0, n))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.b.shape[0] != self.A.shape[0]:
            raise QpError(f"b must have {self.A.shape[0]} entries, got {self.b.shape[0]}")

        if self.G is None:
            self.G = np.zeros((0, n))
            self.h = np.zeros(0)
        else:
            self.G = _as_matrix(self.G, "G", cols=n)
            self.h = np.asarray(self.h, dtype=float).reshape(-1)
            if self.h.shape[0] != self.G.shape[0]:
                raise QpError(f"h must have {self.G.shape[0]} entries, got {self.h.shape[0]}")

        self.lo = np.asarray(self.lo, dtype=float).reshape(-1)
        self.hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if self.lo.shape != (n,) or self.hi.shape != (n,):
            raise QpError(f"lo and hi must have shape ({n},)")
        if np.any(self.lo > self.hi):
            i = int(np.argmax(self.lo > self.hi))
            raise QpError(f"lo[{i}]={self.lo[i]} exceeds hi[{i}]={self.hi[i]}")

    @property
    def n(self) -> int:
        return self.Q.shape[0]


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: QpStatus
    iterations: int
    primal_residual: float
    dual_residual: float


@dataclass
class _Warm:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray


class CachedQpSolver:
    """Solver bound to one problem structure, reusable across changes of q.

    The KKT factorization depends only on (Q, A, G, bounds layout), so an
    outer loop that re-solves with a new linear term pays one factorization
    total. Warm starts carry over between solve() calls.
    """

    def __init__(self, problem: QpProblem):
        self.problem = problem
        n = problem.n
        # stacked constraint rows: equalities, general inequalities, box
        self._M = np.vstack([problem.A, problem.G, np.eye(n)])
        m_eq = problem.A.shape[0]
        m_in = problem.G.shape[0]
        self._l = np.concatenate([problem.b, np.full(m_in, -np.inf), problem.lo])
        self._u = np.concatenate([problem.b, problem.h, problem.hi])
        self._m_eq = m_eq
        rho = np.full(self._M.shape[0], _RHO_INEQ)
        rho[:m_eq] *= _RHO_EQ_FACTOR
        self._rho = rho
        self._factor = None
        self._warm: _Warm | None = None

    def _factorize(self) -> None:
        n = self.problem.n
        m = self._M.shape[0]
        kkt = np.zeros((n + m, n + m))
        kkt[:n, :n] = self.problem.Q + _SIGMA * np.eye(n)
        kkt[:n, n:] = self._M.T
        kkt[n:, :n] = self._M
        kkt[n:, n:] = -np.diag(1.0 / self._rho)
        self._factor = scipy.linalg.lu_factor(kkt)

    def _residuals(self, x, z, y, q):
        Q = self.problem.Q
        mx = self._M @ x
        qx = Q @ x
        mty = self._M.T @ y
        r_prim = np.abs(mx - z).max(initial=0.0)
        r_dual = np.abs(qx + q + mty).max(initial=0.0)
        s_prim = max(np.abs(mx).max(initial=0.0), np.abs(z).max(initial=0.0))
        s_dual = max(
            np.abs(qx).max(initial=0.0),
            np.abs(mty).max(initial=0.0),
            np.abs(q).max(initial=0.0),
        )
        return r_prim, r_dual, s_prim, s_dual

    def _polish(self, x, y, q, r_prim):
        """Equality solve on the active set guessed from the bound gaps.

        Rows within the activation tolerance of a bound get pinned there.
        A wrong guess is harmless: stray multiplier signs are zeroed below
        and the caller only keeps the polished point if its residuals are
        no worse than the unpolished ones.
        """
        prob = self.problem
        n = prob.n
        mx = self._M @ x
        atol = max(10.0 * r_prim, 1e-9 * (1.0 + np.abs(mx).max(initial=0.0)))
        gap_l = mx - self._l
        gap_u = self._u - mx
        lower = np.isfinite(self._l) & (gap_l <= atol) & (gap_l <= gap_u)
        upper = np.isfinite(self._u) & (gap_u <= atol) & ~lower
        lower[: self._m_eq] = True  # equality rows always active
        upper[: self._m_eq] = False
        act = lower | upper
        rhs_act = np.where(lower, self._l, self._u)[act]
        a_act = self._M[act]
        k = a_act.shape[0]

        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = prob.Q + _POLISH_DELTA * np.eye(n)
        kkt[:n, n:] = a_act.T
        kkt[n:, :n] = a_act
        kkt[n:, n:] = -_POLISH_DELTA * np.eye(k)
        rhs = np.concatenate([-q, rhs_act])
        try:
            factor = scipy.linalg.lu_factor(kkt)
        except (scipy.linalg.LinAlgError, ValueError):
            return None
        sol = scipy.linalg.lu_solve(factor, rhs)
        # iterative refinement against the unregularized system
        kkt0 = kkt.copy()
        kkt0[:n, :n] = prob.Q
        kkt0[n:, n:] = 0.0
        for _ in range(3):
            sol = sol + scipy.linalg.lu_solve(factor, rhs - kkt0 @ sol)
        x_pol = sol[:n]
        y_pol = np.zeros_like(y)
        y_pol[act] = sol[n:]
        # multipliers must point out of the feasible box; zero the strays
        # so a bad active-set guess surfaces as a dual residual instead of
        # silently passing a sign violation through
        free = np.arange(len(y_pol)) >= self._m_eq
        y_pol[free & lower & (y_pol > 0)] = 0.0
        y_pol[free & upper & (y_pol < 0)] = 0.0
        z_pol = np.clip(self._M @ x_pol, self._l, self._u)
        return x_pol, z_pol, y_pol

    def solve(
        self,
        q: np.ndarray | None = None,
        tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER,
    ) -> QpSolution:
        prob = self.problem
        n = prob.n
        q = prob.q if q is None else np.asarray(q, dtype=float)
        if q.shape != (n,):
            raise QpError(f"q must have shape ({n},), got {q.shape}")
        if self._factor is None:
            self._factorize()

        m = self._M.shape[0]
        if self._warm is None:
            x = np.zeros(n)
            z = np.clip(np.zeros(m), self._l, self._u)
            y = np.zeros(m)
        else:
            x, z, y = self._warm.x.copy(), self._warm.z.copy(), self._warm.y.copy()

        rho = self._rho
        l, u = self._l, self._u

        best = None  # (max-residual, x, z, y, r_prim, r_dual)
        y_at_last_check = y.copy()
        it = 0
        status = QpStatus.MAX_ITERATIONS

        while it < max_iter:
            for _ in range(min(_CHECK_EVERY, max_iter - it)):
                rhs = np.concatenate([_SIGMA * x - q, z - y / rho])
                sol = scipy.linalg.lu_solve(self._factor, rhs)
                x_t = sol[:n]
                nu = sol[n:]
                z_t = z + (nu - y) / rho
                x = _ALPHA * x_t + (1 - _ALPHA) * x
                z_rel = _ALPHA * z_t + (1 - _ALPHA) * z
                z_new = np.clip(z_rel + y / rho, l, u)
                y = y + rho * (z_rel - z_new)
                z = z_new
                it += 1

            r_prim, r_dual, s_prim, s_dual = self._residuals(x, z, y, q)
            eps_pri = tol + tol * s_prim
            eps_dua = tol + tol * s_dual
            score = max(r_prim / eps_pri, r_dual / eps_dua)
            if best is None or score < best[0]:
                best = (score, x.copy(), z.copy(), y.copy(), r_prim, r_dual)
            if r_prim < eps_pri and r_dual < eps_dua:
                status = QpStatus.OPTIMAL
                break

            dy = y - y_at_last_check
            y_at_last_check = y.copy()
            if self._certifies_infeasible(dy):
                status = QpStatus.INFEASIBLE
                break

            # re-tune step sizes when primal/dual progress is lopsided
            if score > 1.0 and it % (_CHECK_EVERY * 8) == 0:
                ratio = np.sqrt(
                    (r_prim / max(eps_pri, 1e-300)) / max(r_dual / max(eps_dua, 1e-300), 1e-12)
                )
                if ratio > 5.0 or ratio < 0.2:
                    scale = float(np.clip(ratio, 1e-3, 1e3))
                    new_rho = np.clip(self._rho * scale, 1e-6, 1e6)
                    if not np.allclose(new_rho, self._rho):
                        self._rho = new_rho
                        rho = self._rho
                        self._factorize()

        if status == QpStatus.OPTIMAL:
            polished = self._polish(x, y, q, r_prim)
            if polished is not None:
                xp, zp, yp = polished
                rp, rd, sp, sd = self._residuals(xp, zp, yp, q)
                if max(rp, rd) <= max(r_prim, r_dual):
                    x, z, y, r_prim, r_dual = xp, zp, yp, rp, rd
        elif status == QpStatus.MAX_ITERATIONS and best is not None:
            _, x, z, y, r_prim, r_dual = best

        self._warm = _Warm(x=x.copy(), z=z.copy(), y=y.copy())
        obj = float(0.5 * x @ (prob.Q @ x) + q @ x)
        return QpSolution(
            x=x,
            objective=obj,
            status=status,
            iterations=it,
            primal_residual=float(r_prim),
            dual_residual=float(r_dual),
        )

    def _certifies_infeasible(self, dy: np.ndarray) -> bool:
        """Primal-infeasibility certificate from the dual-variable drift."""
        norm = np.abs(dy).max(initial=0.0)
        if norm < 1e-11:
            return False
        d = dy / norm
        eps = 1e-9
        if np.abs(self._M.T @ d).max(initial=0.0) > eps:
            return False
        pos = np.maximum(d, 0.0)
        neg = np.minimum(d, 0.0)
        if np.any(pos[~np.isfinite(self._u)] > eps) or np.any(-neg[~np.isfinite(self._l)] > eps):
            return False
        support = float(
            np.sum(self._u[np.isfinite(self._u)] * pos[np.isfinite(self._u)])
            + np.sum(self._l[np.isfinite(self._l)] * neg[np.isfinite(self._l)])
        )
        return support < -eps


def solve_qp(
    problem: QpProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> QpSolution:
    """One-shot solve; see CachedQpSolver for repeated solves with varying q."""
    return CachedQpSolver(problem).solve(tol=tol, max_iter=max_iter)
