"""Whole-fleet scheduling as a single QP, the benchmark for the loop.

All prosumers' variables are stacked into one problem, reciprocity
p[u,v] + p[v,u] = 0 is imposed as equality rows, and no penalty or
multiplier terms appear (rho = 0). The distributed loop should land on
the same total cost; the acceptance suite checks that to 1e-3 relative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import HORIZON, ProsumerProfile, Schedule, Tariff, prosumer_cost
from ..qp import DEFAULT_MAX_ITER, DEFAULT_TOL, QpProblem, QpStatus, solve_qp
from .engine import DEFAULT_TRADE_LIMIT, AdmmError, DualState, VariableMap, _prosumer_block, extract_schedule


class InfeasibleScenario(AdmmError):
    """The stacked problem admits no feasible schedule."""


@dataclass(frozen=True)
class CentralizedResult:
    schedules: list[Schedule]
    trades: np.ndarray
    total_cost: float


def solve_centralized(
    profiles: list[ProsumerProfile],
    tariff: Tariff,
    trade_limit: float = DEFAULT_TRADE_LIMIT,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> CentralizedResult:
    if not profiles:
        raise AdmmError("at least one prosumer required")
    num = len(profiles)
    vmaps = [VariableMap(u, num) for u in range(num)]
    offsets = np.concatenate([[0], np.cumsum([vm.n for vm in vmaps])])
    total_n = int(offsets[-1])
    zero = DualState.zeros(num)

    q_diag = np.zeros(total_n)
    q = np.zeros(total_n)
    eq_rows = []
    eq_rhs = []
    ineq_rows = []
    ineq_rhs = []
    lo = np.zeros(total_n)
    hi = np.zeros(total_n)
    for u, vm in enumerate(vmaps):
        off = int(offsets[u])
        dq, lq, a_mat, b_vec, g_mat, h_vec, lo_u, hi_u = _prosumer_block(
            profiles[u], tariff, vm, 0.0, trade_limit, zero.p_aux[u], zero.lam[u]
        )
        q_diag[off : off + vm.n] = dq
        q[off : off + vm.n] = lq
        lo[off : off + vm.n] = lo_u
        hi[off : off + vm.n] = hi_u
        pad_a = np.zeros((a_mat.shape[0], total_n))
        pad_a[:, off : off + vm.n] = a_mat
        eq_rows.append(pad_a)
        eq_rhs.append(b_vec)
        pad_g = np.zeros((g_mat.shape[0], total_n))
        pad_g[:, off : off + vm.n] = g_mat
        ineq_rows.append(pad_g)
        ineq_rhs.append(h_vec)

    # couple the fleet: u's purchase is v's sale, slot by slot
    for u in range(num):
        for v in range(u + 1, num):
            rows = np.zeros((HORIZON, total_n))
            for t in range(HORIZON):
                rows[t, int(offsets[u]) + vmaps[u].trade[v].start + t] = 1.0
                rows[t, int(offsets[v]) + vmaps[v].trade[u].start + t] = 1.0
            eq_rows.append(rows)
            eq_rhs.append(np.zeros(HORIZON))

    problem = QpProblem(
        Q=np.diag(q_diag),
        q=q,
        A=np.vstack(eq_rows),
        b=np.concatenate(eq_rhs),
        lo=lo,
        hi=hi,
        G=np.vstack(ineq_rows),
        h=np.concatenate(ineq_rhs),
    )
    sol = solve_qp(problem, tol=tol, max_iter=max_iter)
    if sol.status is QpStatus.INFEASIBLE:
        raise InfeasibleScenario("no schedule satisfies the balance and storage rows")
    if sol.status is not QpStatus.OPTIMAL:
        raise AdmmError(f"stacked solve ended {sol.status.name}")

    schedules = []
    trades = np.zeros((num, num, HORIZON))
    for u, vm in enumerate(vmaps):
        off = int(offsets[u])
        sched, p_row = extract_schedule(sol.x[off : off + vm.n], vm)
        schedules.append(sched)
        trades[u] = p_row
    total = sum(
        prosumer_cost(profiles[u], schedules[u], trades[u], tariff).total
        for u in range(num)
    )
    return CentralizedResult(schedules=schedules, trades=trades, total_cost=float(total))
