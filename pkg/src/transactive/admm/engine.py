"""Per-prosumer subproblems, dual closed forms, and the iteration driver.

Each prosumer repeatedly solves a small QP over its own schedule and
trade offers, given the latest auxiliary trades p' and multipliers
lambda from the coordinator. The coordinator (a replicated contract in
production, an in-process one in tests) projects the submitted trades
onto the reciprocity subspace p[u,v] = -p[v,u] and advances the
multipliers. The loop stops when the summed distance between submitted
and projected trades drops below epsilon.

Sign convention: the primal objective carries -lambda * p and the
multiplier step is lambda += rho * (p' - p). Flipping both signs (and
so the sign of every lambda iterate) leaves all primal iterates
unchanged; see the engine tests for the mirrored-run check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import (
    HORIZON,
    CostBreakdown,
    ProsumerProfile,
    Schedule,
    Tariff,
    check_trade_matrix,
    prosumer_cost,
)
from ..qp import CachedQpSolver, QpProblem, QpStatus
from .coordinator import CoordinatorPort, CoordinatorTimeout

DEFAULT_RHO = 0.5
DEFAULT_EPSILON = 1e-6
DEFAULT_MAX_ITERATIONS = 2000
DEFAULT_TRADE_LIMIT = 10.0

# Battery state is recomputed from c and d when a schedule is checked, so
# equality-row slack in the subproblem accumulates over the horizon. The
# primal solves run tighter than the default QP tolerance to keep the
# 24-step drift comfortably inside the 1e-6 feasibility budget.
PRIMAL_QP_TOL = 1e-9


class AdmmError(RuntimeError):
    pass


class PrimalSolveError(AdmmError):
    """A prosumer subproblem failed to reach an optimal point."""


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = DEFAULT_RHO
    epsilon: float = DEFAULT_EPSILON
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    trade_limit: float = DEFAULT_TRADE_LIMIT

    def __post_init__(self) -> None:
        if not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.trade_limit > 0:
            raise ValueError("trade_limit must be > 0")


@dataclass(frozen=True)
class DualState:
    """Auxiliary trades p_aux[u][v][t], multipliers lam[u][v][t], and the round."""

    p_aux: np.ndarray
    lam: np.ndarray
    iteration: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "p_aux", check_trade_matrix(self.p_aux))
        lam = np.asarray(self.lam, dtype=float)
        if lam.shape != self.p_aux.shape:
            raise ValueError(
                f"lam shape {lam.shape} does not match p_aux {self.p_aux.shape}"
            )
        object.__setattr__(self, "lam", lam)

    @staticmethod
    def zeros(num_prosumers: int) -> "DualState":
        shape = (num_prosumers, num_prosumers, HORIZON)
        return DualState(p_aux=np.zeros(shape), lam=np.zeros(shape), iteration=0)

    @property
    def num_prosumers(self) -> int:
        return self.p_aux.shape[0]


@dataclass(frozen=True)
class IterationReport:
    k: int
    residual: float
    per_prosumer_cost: tuple[CostBreakdown, ...]
    converged: bool


@dataclass(frozen=True)
class AdmmResult:
    """Final schedules plus the full iteration trace.

    trades is the coordinator's projected matrix (antisymmetric by
    construction); local_trades holds each prosumer's last submitted
    row, the one its schedule actually balances against.
    """

    schedules: list[Schedule]
    trades: np.ndarray
    local_trades: np.ndarray
    history: list[IterationReport]
    converged: bool
    aborted: bool = False

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def total_cost(self) -> float:
        if not self.history:
            return float("nan")
        return sum(c.total for c in self.history[-1].per_prosumer_cost)


class VariableMap:
    """Column layout of one prosumer's decision vector.

    Order: g, r, l_fl, c, d, e_as, b (24 each), one 24-block per peer in
    ascending index order, then the scalar peak epigraph variable.
    """

    def __init__(self, u_index: int, num_prosumers: int, horizon: int = HORIZON):
        if not 0 <= u_index < num_prosumers:
            raise ValueError(f"u_index {u_index} out of range for {num_prosumers} prosumers")
        self.u_index = u_index
        self.num_prosumers = num_prosumers
        self.horizon = h = horizon
        self.peers = tuple(v for v in range(num_prosumers) if v != u_index)
        self.g = slice(0, h)
        self.r = slice(h, 2 * h)
        self.l_fl = slice(2 * h, 3 * h)
        self.c = slice(3 * h, 4 * h)
        self.d = slice(4 * h, 5 * h)
        self.e_as = slice(5 * h, 6 * h)
        self.b = slice(6 * h, 7 * h)
        self.trade = {
            v: slice(7 * h + j * h, 7 * h + (j + 1) * h) for j, v in enumerate(self.peers)
        }
        self.peak = 7 * h + len(self.peers) * h
        self.n = self.peak + 1


def primal_linear_term(
    profile: ProsumerProfile,
    tariff: Tariff,
    vmap: VariableMap,
    rho: float,
    p_aux_row: np.ndarray,
    lam_row: np.ndarray,
) -> np.ndarray:
    """Linear coefficients of the subproblem for the given dual rows.

    Only this vector changes between iterations, so the factorized QP
    can be reused with a fresh q.
    """
    p_aux_row = np.asarray(p_aux_row, dtype=float)
    lam_row = np.asarray(lam_row, dtype=float)
    expect = (vmap.num_prosumers, vmap.horizon)
    if p_aux_row.shape != expect or lam_row.shape != expect:
        raise ValueError(f"dual rows must have shape {expect}")
    q = np.zeros(vmap.n)
    q[vmap.g] = tariff.alpha
    q[vmap.l_fl] = -2.0 * profile.preferred_flexible
    q[vmap.c] = tariff.wear_price
    q[vmap.d] = tariff.wear_price
    q[vmap.e_as] = -tariff.pi_as
    for v, cols in vmap.trade.items():
        q[cols] = tariff.pi_p2p - rho * p_aux_row[v] - lam_row[v]
    q[vmap.peak] = tariff.beta
    return q


def _prosumer_block(
    profile: ProsumerProfile,
    tariff: Tariff,
    vmap: VariableMap,
    rho: float,
    trade_limit: float,
    p_aux_row: np.ndarray,
    lam_row: np.ndarray,
):
    """Q diagonal, q, equality rows, inequality rows, and box bounds."""
    h = vmap.horizon
    n = vmap.n
    bat = profile.battery

    q_diag = np.zeros(n)
    q_diag[vmap.l_fl] = 2.0
    for cols in vmap.trade.values():
        q_diag[cols] = rho
    q = primal_linear_term(profile, tariff, vmap, rho, p_aux_row, lam_row)

    # balance rows: l_fl + c - g - r - d - sum_v p = -inflexible
    # flex row: sum_t l_fl = sum_t preferred
    # storage rows: b[t] - b[t-1] - eff*c[t] + d[t]/eff = (initial_soc if t == 0)
    a_mat = np.zeros((2 * h + 1, n))
    b_vec = np.zeros(2 * h + 1)
    for t in range(h):
        a_mat[t, vmap.l_fl.start + t] = 1.0
        a_mat[t, vmap.c.start + t] = 1.0
        a_mat[t, vmap.g.start + t] = -1.0
        a_mat[t, vmap.r.start + t] = -1.0
        a_mat[t, vmap.d.start + t] = -1.0
        for cols in vmap.trade.values():
            a_mat[t, cols.start + t] = -1.0
        b_vec[t] = -profile.inflexible[t]
    a_mat[h, vmap.l_fl] = 1.0
    b_vec[h] = profile.preferred_flexible.sum()
    for t in range(h):
        row = h + 1 + t
        a_mat[row, vmap.b.start + t] = 1.0
        if t > 0:
            a_mat[row, vmap.b.start + t - 1] = -1.0
        a_mat[row, vmap.c.start + t] = -bat.efficiency
        a_mat[row, vmap.d.start + t] = 1.0 / bat.efficiency
        b_vec[row] = bat.initial_soc if t == 0 else 0.0

    # e_as[t] <= b[t]; g[t] <= g_peak
    g_mat = np.zeros((2 * h, n))
    h_vec = np.zeros(2 * h)
    for t in range(h):
        g_mat[t, vmap.e_as.start + t] = 1.0
        g_mat[t, vmap.b.start + t] = -1.0
        g_mat[h + t, vmap.g.start + t] = 1.0
        g_mat[h + t, vmap.peak] = -1.0

    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    hi[vmap.r] = profile.renewable_avail
    hi[vmap.c] = bat.charge_limit
    hi[vmap.d] = bat.discharge_limit
    hi[vmap.e_as] = bat.capacity
    hi[vmap.b] = bat.capacity
    for cols in vmap.trade.values():
        lo[cols] = -trade_limit
        hi[cols] = trade_limit

    return q_diag, q, a_mat, b_vec, g_mat, h_vec, lo, hi


def build_primal(
    profile: ProsumerProfile,
    tariff: Tariff,
    dual: DualState,
    rho: float,
    u_index: int = 0,
    trade_limit: float = DEFAULT_TRADE_LIMIT,
) -> QpProblem:
    """One prosumer's scheduling QP given the current dual state."""
    vmap = VariableMap(u_index, dual.num_prosumers)
    q_diag, q, a_mat, b_vec, g_mat, h_vec, lo, hi = _prosumer_block(
        profile, tariff, vmap, rho, trade_limit, dual.p_aux[u_index], dual.lam[u_index]
    )
    return QpProblem(
        Q=np.diag(q_diag), q=q, A=a_mat, b=b_vec, lo=lo, hi=hi, G=g_mat, h=h_vec
    )


def extract_schedule(x: np.ndarray, vmap: VariableMap) -> tuple[Schedule, np.ndarray]:
    """Split a solution vector into a Schedule and the prosumer's trade row.

    Schedule vectors are clamped at zero: the solver may sit a few
    machine epsilons below an active bound and the cost functions
    reject negative energy outright.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (vmap.n,):
        raise ValueError(f"expected solution of length {vmap.n}, got {x.shape}")
    sched = Schedule(
        g=np.maximum(x[vmap.g], 0.0),
        r=np.maximum(x[vmap.r], 0.0),
        l_fl=np.maximum(x[vmap.l_fl], 0.0),
        c=np.maximum(x[vmap.c], 0.0),
        d=np.maximum(x[vmap.d], 0.0),
        e_as=np.maximum(x[vmap.e_as], 0.0),
    )
    p_row = np.zeros((vmap.num_prosumers, vmap.horizon))
    for v, cols in vmap.trade.items():
        p_row[v] = x[cols]
    return sched, p_row


def solve_dual(trades: np.ndarray, dual: DualState, rho: float) -> DualState:
    """Project trades onto reciprocity, shifted by the multiplier gap.

    For each pair and slot: p'[u,v] = (p[u,v] - p[v,u]) / 2
    - (lam[u,v] - lam[v,u]) / (2 rho), with p'[v,u] set to the exact
    negation so reciprocity holds bitwise.
    """
    p = check_trade_matrix(trades)
    if p.shape != dual.p_aux.shape:
        raise ValueError(f"trades shape {p.shape} does not match dual {dual.p_aux.shape}")
    aux = np.zeros_like(p)
    num = p.shape[0]
    for u in range(num):
        for v in range(u + 1, num):
            val = (p[u, v] - p[v, u]) / 2.0 - (dual.lam[u, v] - dual.lam[v, u]) / (2.0 * rho)
            aux[u, v] = val
            aux[v, u] = -val
    return DualState(p_aux=aux, lam=dual.lam.copy(), iteration=dual.iteration)


def update_multipliers(dual: DualState, trades: np.ndarray, rho: float) -> DualState:
    """Ascent step lam += rho * (p' - p); advances the round counter."""
    p = check_trade_matrix(trades)
    lam = dual.lam + rho * (dual.p_aux - p)
    return DualState(p_aux=dual.p_aux.copy(), lam=lam, iteration=dual.iteration + 1)


def residual(trades: np.ndarray, dual: DualState) -> float:
    """Sum over ordered pairs of the euclidean gap between p' and p."""
    p = check_trade_matrix(trades)
    total = 0.0
    num = p.shape[0]
    for u in range(num):
        for v in range(num):
            if u != v:
                total += float(np.linalg.norm(dual.p_aux[u, v] - p[u, v]))
    return total


def run_admm(
    profiles: list[ProsumerProfile],
    tariff: Tariff,
    config: AdmmConfig,
    coordinator: CoordinatorPort,
) -> AdmmResult:
    """Drive the full loop against a coordinator until convergence.

    Every round: read the dual rows, re-solve each prosumer's QP with
    the updated linear term (structure and factorization are reused),
    submit the trade rows, and record the post-barrier residual and
    costs. A coordinator timeout aborts with the partial history.
    """
    if not profiles:
        raise AdmmError("at least one prosumer required")
    num = len(profiles)
    vmaps = [VariableMap(u, num) for u in range(num)]
    zero = DualState.zeros(num)
    solvers = []
    for u in range(num):
        problem = build_primal(
            profiles[u], tariff, zero, config.rho, u_index=u, trade_limit=config.trade_limit
        )
        solvers.append(CachedQpSolver(problem))

    schedules = [Schedule.zeros() for _ in range(num)]
    local = np.zeros((num, num, HORIZON))
    history: list[IterationReport] = []
    converged = False
    aborted = False
    while True:
        try:
            status = coordinator.status()
        except CoordinatorTimeout:
            aborted = True
            break
        converged = status.converged
        if converged or status.iteration >= config.max_iterations:
            break
        k = status.iteration
        try:
            for u in range(num):
                view = coordinator.read_duals(u)
                q = primal_linear_term(
                    profiles[u], tariff, vmaps[u], config.rho, view.p_aux_row, view.lam_row
                )
                sol = solvers[u].solve(q=q, tol=PRIMAL_QP_TOL)
                if sol.status is not QpStatus.OPTIMAL:
                    raise PrimalSolveError(
                        f"prosumer {profiles[u].id} subproblem ended "
                        f"{sol.status.name} at iteration {k}"
                    )
                schedules[u], local[u] = extract_schedule(sol.x, vmaps[u])
                coordinator.submit_trades(u, k, local[u])
            after = coordinator.status()
        except CoordinatorTimeout:
            aborted = True
            break
        costs = tuple(
            prosumer_cost(profiles[u], schedules[u], local[u], tariff) for u in range(num)
        )
        history.append(
            IterationReport(
                k=k,
                residual=float("inf") if after.residual is None else after.residual,
                per_prosumer_cost=costs,
                converged=after.converged,
            )
        )

    aux = np.zeros((num, num, HORIZON))
    if not aborted:
        for u in range(num):
            aux[u] = coordinator.read_duals(u).p_aux_row
    return AdmmResult(
        schedules=schedules,
        trades=aux,
        local_trades=local,
        history=history,
        converged=converged,
        aborted=aborted,
    )
