"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

Series = list[float]


class BatteryBody(BaseModel):
    capacity: float = 10.0
    charge_limit: float = 3.0
    discharge_limit: float = 3.0
    efficiency: float = 0.95
    initial_soc: float = 0.0


class ProsumerBody(BaseModel):
    id: int
    inflexible: Series
    preferred_flexible: Series
    renewable: Series
    battery: BatteryBody = Field(default_factory=BatteryBody)


class TariffBody(BaseModel):
    alpha: float
    beta: float
    pi_p2p: float
    pi_as: float | Series = 0.02
    wear_price: float = 1.0


class AdmmBody(BaseModel):
    rho: float = 0.5
    epsilon: float = 1e-6
    max_iterations: int = 2000
    trade_limit: float = 10.0


class ChainBody(BaseModel):
    validators: int = 3
    block_interval_ms: int = 50
    seed: int = 0


class SolveRequest(BaseModel):
    mode: Literal["centralized", "admm", "chain"] = "admm"
    prosumers: list[ProsumerBody]
    tariff: TariffBody
    admm: AdmmBody = Field(default_factory=AdmmBody)
    chain: ChainBody = Field(default_factory=ChainBody)


class ScheduleBody(BaseModel):
    prosumer: int
    g: Series
    r: Series
    l_fl: Series
    c: Series
    d: Series
    e_as: Series
    soc: Series


class TradeBody(BaseModel):
    buyer: int
    seller: int
    energy: Series


class IterationBody(BaseModel):
    k: int
    residual: float
    total_cost: float
    converged: bool = False


class SolveResponse(BaseModel):
    mode: str
    converged: bool
    aborted: bool = False
    iterations: int
    total_cost: float
    schedules: list[ScheduleBody]
    trades: list[TradeBody]
    history: list[IterationBody] = []


class ValidateRequest(BaseModel):
    scenario_yaml: str
    profiles_tsv: str


class ValidateResponse(BaseModel):
    ok: bool
    name: str | None = None
    prosumers: int | None = None
    error: str | None = None


class BenchRequest(BaseModel):
    committee_sizes: list[int] = [5, 10, 20]
    block_interval_ms: int = 100
    tcd_samples: int = 20
    rates: list[float] | None = None
    max_block_txs: int = 32
    tps_block_interval_ms: int = 200
    duration_s: float = 3.0
    seed: int = 0


class TcdBody(BaseModel):
    committee_size: int
    block_interval_ms: int
    samples_ms: Series
    mean_ms: float
    max_ms: float


class TpsCurveBody(BaseModel):
    committee_size: int
    capacity_tps: float
    plateau_tps: float
    offered: Series
    confirmed: Series


class BenchResponse(BaseModel):
    tcd: list[TcdBody]
    tps: list[TpsCurveBody]


class HealthResponse(BaseModel):
    status: str
    version: str
