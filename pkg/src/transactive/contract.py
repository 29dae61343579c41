"""Deterministic trading-coordination contract.

This is the state machine replicated by the ledger. Prosumers submit
trade rows (func_b), the contract runs the dual update (func_a) once
every registered prosumer has submitted for the current round, and
anyone can read the result back (func_c). All arithmetic is integer
fixed-point so that every replica computes bit-identical state, see
:mod:`transactive.fixedpoint` for the scale.

The same object backs the in-process coordinator and the chain-hosted
one; only the call path differs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

from .fixedpoint import SCALE, div_round_half_even, to_fixed


class ContractError(Exception):
    """Base class for rejected contract calls."""


class UnknownCallerError(ContractError):
    pass


class WrongRoundError(ContractError):
    pass


class DuplicateSubmissionError(ContractError):
    pass


class MalformedTradeRowError(ContractError):
    pass


@dataclass(frozen=True)
class DualView:
    """func_c response for a registered caller: their own dual rows."""

    p_aux_row: list[list[int]]
    lam_row: list[list[int]]
    iteration: int
    converged: bool


@dataclass(frozen=True)
class PublicView:
    """func_c response for everyone else: aggregates only."""

    iteration: int
    converged: bool
    residual_m: int | None


def _zeros(u: int, horizon: int) -> list[list[list[int]]]:
    return [[[0] * horizon for _ in range(u)] for _ in range(u)]


class TradingContract:
    """Barrier-synchronized dual update over fixed-point trade matrices.

    Participants, rho and epsilon are frozen at deployment. Rounds are
    counted by ``k``; within a round each participant may submit exactly
    one trade row and the dual update fires atomically with the final
    submission. A round left incomplete for ``round_timeout`` ticks
    (block boundaries) is aborted and reopened at the same ``k`` with
    all partial submissions discarded.
    """

    def __init__(
        self,
        participants: Sequence[str],
        rho: float = 0.5,
        epsilon: float = 1e-6,
        horizon: int = 24,
        round_timeout: int = 30,
    ) -> None:
        ids = tuple(participants)
        if not ids:
            raise ValueError("at least one participant required")
        if len(set(ids)) != len(ids):
            raise ValueError("participant ids must be distinct")
        if rho <= 0.0:
            raise ValueError("rho must be positive")
        if epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        if round_timeout < 1:
            raise ValueError("round_timeout must be at least 1")
        self.participants = ids
        self.rho_m = to_fixed(rho)
        self.eps_m = to_fixed(epsilon)
        self.horizon = int(horizon)
        self.round_timeout = int(round_timeout)
        self._index = {pid: i for i, pid in enumerate(ids)}
        u = len(ids)
        self.k = 0
        self.converged = False
        self.residual_m: int | None = None
        self.round_age = 0
        self.trades = _zeros(u, self.horizon)
        self.p_aux = _zeros(u, self.horizon)
        self.lam = _zeros(u, self.horizon)
        self._staged: dict[int, list[list[int]]] = {}

    @property
    def size(self) -> int:
        return len(self.participants)

    @property
    def pending(self) -> frozenset[int]:
        """Indices that have submitted for the open round."""
        return frozenset(self._staged)

    def index_of(self, account: str) -> int:
        try:
            return self._index[account]
        except KeyError:
            raise UnknownCallerError(f"account {account!r} is not registered") from None

    # -- calls ---------------------------------------------------------

    def func_b(self, caller: str, k: int, trade_row: Sequence[Sequence[int]]) -> None:
        """Submit the caller's trade row for round ``k``.

        ``trade_row[v][t]`` is the fixed-point quantity the caller plans
        to trade with participant ``v`` in slot ``t``; the self entry
        must be zero. The final submission of a round triggers the dual
        update before this call returns.
        """
        u = self.index_of(caller)
        if k != self.k:
            raise WrongRoundError(f"current round is {self.k}, got {k}")
        if u in self._staged:
            raise DuplicateSubmissionError(f"{caller!r} already submitted for round {k}")
        self._staged[u] = self._checked_row(trade_row, self_index=u)
        if len(self._staged) == self.size:
            for i, row in self._staged.items():
                self.trades[i] = row
            self._func_a()
            self._staged = {}
            self.k += 1
            self.round_age = 0

    def func_c(self, caller: str) -> DualView | PublicView:
        """Read committed dual state.

        Registered callers get their own auxiliary and multiplier rows;
        anyone else gets only round-level aggregates.
        """
        if caller not in self._index:
            return PublicView(
                iteration=self.k,
                converged=self.converged,
                residual_m=self.residual_m,
            )
        u = self._index[caller]
        return DualView(
            p_aux_row=[list(row) for row in self.p_aux[u]],
            lam_row=[list(row) for row in self.lam[u]],
            iteration=self.k,
            converged=self.converged,
        )

    def tick(self) -> bool:
        """Advance one block boundary; returns True if the round aborted.

        Aging only starts once somebody has submitted: an idle contract
        never times out. No default rows are ever substituted, stragglers
        force a full resubmission at the same round counter.
        """
        if not self._staged:
            self.round_age = 0
            return False
        self.round_age += 1
        if self.round_age >= self.round_timeout:
            self._staged = {}
            self.round_age = 0
            return True
        return False

    # -- internals -----------------------------------------------------

    def _checked_row(
        self, trade_row: Sequence[Sequence[int]], self_index: int
    ) -> list[list[int]]:
        if len(trade_row) != self.size:
            raise MalformedTradeRowError(
                f"expected {self.size} peer rows, got {len(trade_row)}"
            )
        out: list[list[int]] = []
        for v, row in enumerate(trade_row):
            vals = list(row)
            if len(vals) != self.horizon:
                raise MalformedTradeRowError(
                    f"peer row {v} has {len(vals)} slots, expected {self.horizon}"
                )
            for t, x in enumerate(vals):
                if isinstance(x, bool) or not isinstance(x, int):
                    raise MalformedTradeRowError(
                        f"entry [{v}][{t}] is {type(x).__name__}, expected int"
                    )
            if v == self_index and any(vals):
                raise MalformedTradeRowError("self-trade entries must be zero")
            out.append(vals)
        return out

    def _func_a(self) -> None:
        """Closed-form dual update, evaluated in integers.

        p_aux is the reciprocity-projected trade, lam accumulates the
        scaled disagreement, and the residual is the sum over ordered
        pairs of the euclidean distance between submitted and projected
        trades (isqrt floors each pair's norm to whole mantissa units).
        """
        u_count = self.size
        horizon = self.horizon
        two_rho = 2 * self.rho_m
        p = self.trades
        new_aux = _zeros(u_count, horizon)
        for u in range(u_count):
            for v in range(u_count):
                if u == v:
                    continue
                row_p = p[u][v]
                row_p_rev = p[v][u]
                row_l = self.lam[u][v]
                row_l_rev = self.lam[v][u]
                out = new_aux[u][v]
                for t in range(horizon):
                    avg = div_round_half_even(row_p[t] - row_p_rev[t], 2)
                    shift = div_round_half_even(
                        (row_l[t] - row_l_rev[t]) * SCALE, two_rho
                    )
                    out[t] = avg - shift
        residual = 0
        for u in range(u_count):
            for v in range(u_count):
                if u == v:
                    continue
                row_aux = new_aux[u][v]
                row_p = p[u][v]
                row_l = self.lam[u][v]
                sq = 0
                for t in range(horizon):
                    diff = row_aux[t] - row_p[t]
                    sq += diff * diff
                    row_l[t] += div_round_half_even(self.rho_m * diff, SCALE)
                residual += math.isqrt(sq)
        self.p_aux = new_aux
        self.residual_m = residual
        if residual < self.eps_m:
            self.converged = True

    # -- persistence ---------------------------------------------------

    def to_state_dict(self) -> dict:
        return {
            "participants": list(self.participants),
            "rho_m": self.rho_m,
            "eps_m": self.eps_m,
            "horizon": self.horizon,
            "round_timeout": self.round_timeout,
            "k": self.k,
            "converged": self.converged,
            "residual_m": self.residual_m,
            "round_age": self.round_age,
            "trades": [[list(r) for r in row] for row in self.trades],
            "p_aux": [[list(r) for r in row] for row in self.p_aux],
            "lam": [[list(r) for r in row] for row in self.lam],
            "staged": {str(i): [list(r) for r in rows] for i, rows in self._staged.items()},
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "TradingContract":
        contract = cls.__new__(cls)
        contract.participants = tuple(state["participants"])
        contract.rho_m = int(state["rho_m"])
        contract.eps_m = int(state["eps_m"])
        contract.horizon = int(state["horizon"])
        contract.round_timeout = int(state["round_timeout"])
        contract._index = {pid: i for i, pid in enumerate(contract.participants)}
        contract.k = int(state["k"])
        contract.converged = bool(state["converged"])
        raw = state["residual_m"]
        contract.residual_m = None if raw is None else int(raw)
        contract.round_age = int(state["round_age"])
        contract.trades = [[list(r) for r in row] for row in state["trades"]]
        contract.p_aux = [[list(r) for r in row] for row in state["p_aux"]]
        contract.lam = [[list(r) for r in row] for row in state["lam"]]
        contract._staged = {
            int(i): [list(r) for r in rows] for i, rows in state["staged"].items()
        }
        return contract

    def state_bytes(self) -> bytes:
        """Canonical encoding, stable across replicas for state roots."""
        return json.dumps(
            self.to_state_dict(), sort_keys=True, separators=(",", ":")
        ).encode("ascii")

    def snapshot(self) -> dict:
        return self.to_state_dict()

    def restore(self, snap: dict) -> None:
        other = TradingContract.from_state_dict(snap)
        self.__dict__.update(other.__dict__)
