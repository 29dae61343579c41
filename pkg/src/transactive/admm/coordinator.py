"""Ports through which prosumers reach the shared dual state.

The engine only ever sees this interface; whether the contract runs in
the same process or replicated behind a ledger is invisible to it.
Trade rows cross the port as floats and are quantized here with the
same rounding the contract itself uses, so every implementation feeds
the contract byte-identical integers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from ..contract import TradingContract
from ..fixedpoint import SCALE, vec_to_fixed
from ..model import HORIZON


@dataclass(frozen=True)
class CoordinatorView:
    """One prosumer's slice of the committed dual state."""

    p_aux_row: np.ndarray
    lam_row: np.ndarray
    iteration: int
    converged: bool


@dataclass(frozen=True)
class CoordinatorStatus:
    iteration: int
    converged: bool
    residual: float | None


class CoordinatorTimeout(RuntimeError):
    """The coordinator did not advance within the allotted time."""


@runtime_checkable
class CoordinatorPort(Protocol):
    def read_duals(self, u: int) -> CoordinatorView: ...

    def submit_trades(self, u: int, k: int, p_row: np.ndarray) -> None: ...

    def status(self) -> CoordinatorStatus: ...


def quantize_trade_row(p_row: np.ndarray, u: int) -> list[list[int]]:
    """Float row to contract mantissas, forcing the self entry to zero."""
    p_row = np.asarray(p_row, dtype=float)
    rows = []
    for v in range(p_row.shape[0]):
        if v == u:
            rows.append([0] * p_row.shape[1])
        else:
            rows.append(vec_to_fixed(p_row[v]))
    return rows


def _rows_to_floats(rows: list[list[int]]) -> np.ndarray:
    return np.asarray(rows, dtype=float) / SCALE


class InProcessCoordinator:
    """Contract driven by direct calls, for tests and single-host runs."""

    def __init__(self, num_prosumers: int, rho: float, epsilon: float, horizon: int = HORIZON):
        ids = tuple(f"prosumer-{i}" for i in range(num_prosumers))
        self.contract = TradingContract(ids, rho=rho, epsilon=epsilon, horizon=horizon)

    def read_duals(self, u: int) -> CoordinatorView:
        view = self.contract.func_c(self.contract.participants[u])
        return CoordinatorView(
            p_aux_row=_rows_to_floats(view.p_aux_row),
            lam_row=_rows_to_floats(view.lam_row),
            iteration=view.iteration,
            converged=view.converged,
        )

    def submit_trades(self, u: int, k: int, p_row: np.ndarray) -> None:
        self.contract.func_b(
            self.contract.participants[u], k, quantize_trade_row(p_row, u)
        )

    def status(self) -> CoordinatorStatus:
        res = self.contract.residual_m
        return CoordinatorStatus(
            iteration=self.contract.k,
            converged=self.contract.converged,
            residual=None if res is None else res / SCALE,
        )
