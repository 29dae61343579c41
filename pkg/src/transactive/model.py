"""Prosumer scheduling model: cost terms, battery dynamics, and feasibility checks.

All quantities are 24-slot day-ahead vectors (kWh per slot, one-hour slots).
Functions here are pure and shared by the centralized solve and the
per-prosumer subproblems.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HORIZON = 24
SLOT_HOURS = 1.0

#: per-slot tolerance below which a supply/demand residual counts as balanced
BALANCE_TOL = 1e-6


class EnergyModelError(ValueError):
    """Raised when inputs violate the model's domain (shape or sign)."""


@dataclass(frozen=True)
class Horizon:
    """Fixed day-ahead horizon: 24 one-hour slots."""

    slots: int = HORIZON
    slot_duration: float = SLOT_HOURS

    def __post_init__(self) -> None:
        if self.slots != HORIZON:
            raise EnergyModelError(f"horizon must have {HORIZON} slots, got {self.slots}")


def _vec24(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (HORIZON,):
        raise EnergyModelError(f"{name} must be a vector of length {HORIZON}, got shape {v.shape}")
    return v


def _nonneg24(x, name: str) -> np.ndarray:
    v = _vec24(x, name)
    if np.any(v < 0):
        t = int(np.argmax(v < 0))
        raise EnergyModelError(f"{name}[{t}] is negative ({v[t]})")
    return v


@dataclass(frozen=True)
class Tariff:
    """Grid and trading prices.

    alpha: energy rate (currency/kWh), beta: peak rate (currency/kW),
    pi_p2p: flat peer-to-peer price, pi_as: per-slot ancillary reward price,
    wear_price: currency per kWh of battery throughput (charge + discharge).
    """

    alpha: float
    beta: float
    pi_p2p: float
    pi_as: np.ndarray
    wear_price: float = 1.0

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise EnergyModelError(f"alpha must be > 0, got {self.alpha}")
        if self.beta < 0:
            raise EnergyModelError(f"beta must be >= 0, got {self.beta}")
        if not 0 < self.pi_p2p < self.alpha:
            raise EnergyModelError(
                f"pi_p2p must lie in (0, alpha={self.alpha}), got {self.pi_p2p}"
            )
        if self.wear_price < 0:
            raise EnergyModelError(f"wear_price must be >= 0, got {self.wear_price}")
        object.__setattr__(self, "pi_as", _nonneg24(self.pi_as, "pi_as"))


@dataclass(frozen=True)
class BatterySpec:
    """Battery energy storage parameters for one prosumer."""

    capacity: float = 10.0
    charge_limit: float = 3.0
    discharge_limit: float = 3.0
    efficiency: float = 0.95
    initial_soc: float = 0.0

    def __post_init__(self) -> None:
        if self.capacity < 0:
            raise EnergyModelError(f"capacity must be >= 0, got {self.capacity}")
        if not (self.charge_limit > 0 and self.discharge_limit > 0):
            raise EnergyModelError("charge_limit and discharge_limit must be > 0")
        if not 0 < self.efficiency <= 1:
            raise EnergyModelError(f"efficiency must be in (0, 1], got {self.efficiency}")
        if not 0 <= self.initial_soc <= self.capacity:
            raise EnergyModelError(
                f"initial_soc must be in [0, capacity={self.capacity}], got {self.initial_soc}"
            )


@dataclass(frozen=True)
class ProsumerProfile:
    """Exogenous data for one prosumer: loads, renewable availability, battery."""

    id: int
    inflexible: np.ndarray
    preferred_flexible: np.ndarray
    renewable_avail: np.ndarray
    battery: BatterySpec = field(default_factory=BatterySpec)

    def __post_init__(self) -> None:
        object.__setattr__(self, "inflexible", _nonneg24(self.inflexible, "inflexible"))
        object.__setattr__(
            self, "preferred_flexible", _nonneg24(self.preferred_flexible, "preferred_flexible")
        )
        object.__setattr__(
            self, "renewable_avail", _nonneg24(self.renewable_avail, "renewable_avail")
        )


@dataclass(frozen=True)
class Schedule:
    """One prosumer's decision vectors over the horizon."""

    g: np.ndarray
    r: np.ndarray
    l_fl: np.ndarray
    c: np.ndarray
    d: np.ndarray
    e_as: np.ndarray

    def __post_init__(self) -> None:
        for name in ("g", "r", "l_fl", "c", "d", "e_as"):
            object.__setattr__(self, name, _vec24(getattr(self, name), name))

    @staticmethod
    def zeros() -> "Schedule":
        z = np.zeros(HORIZON)
        return Schedule(g=z, r=z, l_fl=z, c=z, d=z, e_as=z)


def new_trade_matrix(num_prosumers: int) -> np.ndarray:
    """All-zero pairwise trade tensor p[u, v, t] (positive: u purchases from v)."""
    if num_prosumers < 1:
        raise EnergyModelError("need at least one prosumer")
    return np.zeros((num_prosumers, num_prosumers, HORIZON))


def check_trade_matrix(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 3 or p.shape[0] != p.shape[1] or p.shape[2] != HORIZON:
        raise EnergyModelError(f"trade matrix must have shape (U, U, {HORIZON}), got {p.shape}")
    diag = np.einsum("uut->ut", p)
    if np.any(diag != 0):
        raise EnergyModelError("self-trades p[u, u, t] must be zero")
    return p


@dataclass(frozen=True)
class CostBreakdown:
    """Per-prosumer daily cost, split by source. total excludes nothing:
    total = grid + discomfort + battery_wear + p2p - ancillary_reward."""

    grid: float
    discomfort: float
    battery_wear: float
    p2p: float
    ancillary_reward: float
    total: float


def grid_cost(g: np.ndarray, tariff: Tariff) -> float:
    """Electricity charge: alpha * sum(g) + beta * max(g)."""
    g = _nonneg24(g, "g")
    return float(tariff.alpha * g.sum() + tariff.beta * g.max())


def discomfort_cost(l_fl: np.ndarray, preferred: np.ndarray) -> float:
    """Sum of squared deviations from the preferred flexible schedule."""
    l_fl = _vec24(l_fl, "l_fl")
    preferred = _vec24(preferred, "preferred")
    diff = l_fl - preferred
    return float(diff @ diff)


def battery_wear_cost(c: np.ndarray, d: np.ndarray) -> float:
    """Battery throughput sum(c) + sum(d); the wear price is applied by the caller."""
    c = _nonneg24(c, "c")
    d = _nonneg24(d, "d")
    return float(c.sum() + d.sum())


def p2p_cost(p_row: np.ndarray, pi_p2p: float) -> float:
    """Signed trading payment pi_p2p * sum(p_row); negative means net revenue."""
    p_row = np.asarray(p_row, dtype=float)
    if p_row.ndim != 2 or p_row.shape[1] != HORIZON:
        raise EnergyModelError(f"p_row must have shape (U, {HORIZON}), got {p_row.shape}")
    return float(pi_p2p * p_row.sum())


def ancillary_reward(e_as: np.ndarray, pi_as: np.ndarray) -> float:
    """Reserve reward: dot(pi_as, e_as)."""
    e_as = _nonneg24(e_as, "e_as")
    pi_as = _vec24(pi_as, "pi_as")
    return float(pi_as @ e_as)


def soc_trajectory(battery: BatterySpec, c: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Battery level b[t] = b[t-1] + eta * c[t] - d[t] / eta, from initial_soc.

    No clamping: capacity violations show up in the returned trajectory and are
    the feasibility checker's business.
    """
    c = _nonneg24(c, "c")
    d = _nonneg24(d, "d")
    eta = battery.efficiency
    return battery.initial_soc + np.cumsum(eta * c - d / eta)


def balance_residual(
    profile: ProsumerProfile, sched: Schedule, p_row: np.ndarray
) -> np.ndarray:
    """Per-slot supply/demand residual.

    residual[t] = (l_fl + L_if + c)[t] - (r + g + d + sum_v p_row[v])[t];
    a feasible schedule has |residual| <= BALANCE_TOL everywhere.
    """
    p_row = np.asarray(p_row, dtype=float)
    if p_row.ndim != 2 or p_row.shape[1] != HORIZON:
        raise EnergyModelError(f"p_row must have shape (U, {HORIZON}), got {p_row.shape}")
    lhs = sched.l_fl + profile.inflexible + sched.c
    rhs = sched.r + sched.g + sched.d + p_row.sum(axis=0)
    return lhs - rhs


def prosumer_cost(
    profile: ProsumerProfile, sched: Schedule, p_row: np.ndarray, tariff: Tariff
) -> CostBreakdown:
    """Assemble the five cost terms for one prosumer."""
    grid = grid_cost(sched.g, tariff)
    discomfort = discomfort_cost(sched.l_fl, profile.preferred_flexible)
    wear = tariff.wear_price * battery_wear_cost(sched.c, sched.d)
    p2p = p2p_cost(p_row, tariff.pi_p2p)
    reward = ancillary_reward(sched.e_as, tariff.pi_as)
    return CostBreakdown(
        grid=grid,
        discomfort=discomfort,
        battery_wear=wear,
        p2p=p2p,
        ancillary_reward=reward,
        total=grid + discomfort + wear + p2p - reward,
    )


def schedule_violations(
    profile: ProsumerProfile,
    sched: Schedule,
    p_row: np.ndarray,
    tol: float = BALANCE_TOL,
) -> list[str]:
    """All feasibility violations of a schedule, as human-readable strings.

    Checks sign/bound constraints on every decision vector, the battery
    trajectory, reserve coverage e_as[t] <= b[t], and the per-slot balance.
    """
    out: list[str] = []
    bat = profile.battery

    def bound(name: str, v: np.ndarray, lo: np.ndarray | float, hi: np.ndarray | float) -> None:
        low = v - lo
        high = hi - v
        if np.any(low < -tol):
            t = int(np.argmin(low))
            out.append(f"{name}[{t}] = {v[t]:.9g} below lower bound")
        if np.any(high < -tol):
            t = int(np.argmin(high))
            out.append(f"{name}[{t}] = {v[t]:.9g} above upper bound")

    bound("g", sched.g, 0.0, np.inf)
    bound("r", sched.r, 0.0, profile.renewable_avail)
    bound("l_fl", sched.l_fl, 0.0, np.inf)
    bound("c", sched.c, 0.0, bat.charge_limit)
    bound("d", sched.d, 0.0, bat.discharge_limit)
    bound("e_as", sched.e_as, 0.0, np.inf)

    soc = soc_trajectory(bat, np.maximum(sched.c, 0), np.maximum(sched.d, 0))
    bound("soc", soc, 0.0, bat.capacity)
    reserve_gap = soc - sched.e_as
    if np.any(reserve_gap < -tol):
        t = int(np.argmin(reserve_gap))
        out.append(f"e_as[{t}] = {sched.e_as[t]:.9g} exceeds battery level {soc[t]:.9g}")

    flex_gap = sched.l_fl.sum() - profile.preferred_flexible.sum()
    if abs(flex_gap) > tol * HORIZON:
        out.append(f"flexible load total off by {flex_gap:.9g} from preferred total")

    res = balance_residual(profile, sched, p_row)
    if np.any(np.abs(res) > tol):
        t = int(np.argmax(np.abs(res)))
        out.append(f"balance residual {res[t]:.9g} at slot {t}")
    return out
