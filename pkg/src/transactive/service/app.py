"""HTTP face of the package: solve, validate, and bench endpoints.

The CLI talks to this app in-process through an ASGI transport by
default, so everything here stays synchronous and desk-scale: a solve
request blocks until the run finishes.
"""

from __future__ import annotations

import tempfile
from importlib.metadata import version as pkg_version
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException

from ..admm import AdmmConfig, AdmmError, InProcessCoordinator, run_admm, solve_centralized
from ..admm.coordinator import CoordinatorTimeout
from ..chain.client import launch_sim_trading_network
from ..model import (
    HORIZON,
    BatterySpec,
    EnergyModelError,
    ProsumerProfile,
    Tariff,
    soc_trajectory,
)
from ..scenario import ScenarioError, load_scenario
from ..transport.bench import measure_tcd, measure_tps
from .schemas import (
    BenchRequest,
    BenchResponse,
    HealthResponse,
    IterationBody,
    ProsumerBody,
    ScheduleBody,
    SolveRequest,
    SolveResponse,
    TariffBody,
    TcdBody,
    TpsCurveBody,
    TradeBody,
    ValidateRequest,
    ValidateResponse,
)


def _to_profile(body: ProsumerBody) -> ProsumerProfile:
    return ProsumerProfile(
        id=body.id,
        inflexible=np.asarray(body.inflexible, dtype=float),
        preferred_flexible=np.asarray(body.preferred_flexible, dtype=float),
        renewable_avail=np.asarray(body.renewable, dtype=float),
        battery=BatterySpec(**body.battery.model_dump()),
    )


def _to_tariff(body: TariffBody) -> Tariff:
    pi_as = body.pi_as
    if isinstance(pi_as, (int, float)):
        pi_as = np.full(HORIZON, float(pi_as))
    else:
        pi_as = np.asarray(pi_as, dtype=float)
    return Tariff(
        alpha=body.alpha,
        beta=body.beta,
        pi_p2p=body.pi_p2p,
        pi_as=pi_as,
        wear_price=body.wear_price,
    )


def _schedule_bodies(profiles, schedules) -> list[ScheduleBody]:
    out = []
    for profile, sched in zip(profiles, schedules):
        out.append(
            ScheduleBody(
                prosumer=profile.id,
                g=sched.g.tolist(),
                r=sched.r.tolist(),
                l_fl=sched.l_fl.tolist(),
                c=sched.c.tolist(),
                d=sched.d.tolist(),
                e_as=sched.e_as.tolist(),
                soc=soc_trajectory(profile.battery, sched.c, sched.d).tolist(),
            )
        )
    return out


def _trade_bodies(profiles, trades: np.ndarray) -> list[TradeBody]:
    out = []
    num = len(profiles)
    for u in range(num):
        for v in range(num):
            if u != v:
                out.append(
                    TradeBody(
                        buyer=profiles[u].id,
                        seller=profiles[v].id,
                        energy=trades[u, v].tolist(),
                    )
                )
    return out


def solve_request_to_response(req: SolveRequest) -> SolveResponse:
    """Shared by the HTTP endpoint and the CLI's direct path."""
    try:
        profiles = [_to_profile(p) for p in req.prosumers]
        tariff = _to_tariff(req.tariff)
        config = AdmmConfig(**req.admm.model_dump())
    except (EnergyModelError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    ids = [p.id for p in profiles]
    if len(set(ids)) != len(ids):
        raise HTTPException(status_code=422, detail=f"duplicate prosumer ids {ids}")

    try:
        if req.mode == "centralized":
            central = solve_centralized(profiles, tariff, config.trade_limit)
            return SolveResponse(
                mode=req.mode,
                converged=True,
                iterations=0,
                total_cost=central.total_cost,
                schedules=_schedule_bodies(profiles, central.schedules),
                trades=_trade_bodies(profiles, central.trades),
            )
        if req.mode == "admm":
            coordinator = InProcessCoordinator(
                len(profiles), rho=config.rho, epsilon=config.epsilon
            )
        else:
            net, _validators, _client, coordinator = launch_sim_trading_network(
                len(profiles),
                num_validators=req.chain.validators,
                rho=config.rho,
                epsilon=config.epsilon,
                block_interval_ms=req.chain.block_interval_ms,
                seed=req.chain.seed,
            )
        result = run_admm(profiles, tariff, config, coordinator)
    except (AdmmError, CoordinatorTimeout) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc

    return SolveResponse(
        mode=req.mode,
        converged=result.converged,
        aborted=result.aborted,
        iterations=result.iterations,
        total_cost=result.total_cost,
        schedules=_schedule_bodies(profiles, result.schedules),
        trades=_trade_bodies(profiles, result.trades),
        history=[
            IterationBody(
                k=r.k,
                residual=r.residual,
                total_cost=sum(c.total for c in r.per_prosumer_cost),
                converged=r.converged,
            )
            for r in result.history
        ],
    )


def run_bench(req: BenchRequest) -> BenchResponse:
    tcd = []
    tps = []
    rates = req.rates
    if rates is None:
        capacity = req.max_block_txs / (req.tps_block_interval_ms / 1000.0)
        rates = [capacity * f for f in (0.25, 0.5, 0.75, 1.0, 1.25, 1.5)]
    for size in req.committee_sizes:
        tcd_report = measure_tcd(
            committee_size=size,
            num_samples=req.tcd_samples,
            block_interval_ms=req.block_interval_ms,
            seed=req.seed,
        )
        tcd.append(
            TcdBody(
                committee_size=size,
                block_interval_ms=req.block_interval_ms,
                samples_ms=tcd_report.samples_ms,
                mean_ms=tcd_report.mean_ms,
                max_ms=tcd_report.max_ms,
            )
        )
        tps_report = measure_tps(
            rates,
            committee_size=size,
            block_interval_ms=req.tps_block_interval_ms,
            max_block_txs=req.max_block_txs,
            duration_s=req.duration_s,
            seed=req.seed,
        )
        tps.append(
            TpsCurveBody(
                committee_size=size,
                capacity_tps=tps_report.capacity_tps,
                plateau_tps=tps_report.plateau_tps,
                offered=[p.offered_tps for p in tps_report.points],
                confirmed=[p.confirmed_tps for p in tps_report.points],
            )
        )
    return BenchResponse(tcd=tcd, tps=tps)


def create_app() -> FastAPI:
    app = FastAPI(title="transactive", version=pkg_version("transactive"))

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=app.version)

    @app.post("/solve", response_model=SolveResponse)
    def solve(req: SolveRequest) -> SolveResponse:
        return solve_request_to_response(req)

    @app.post("/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest) -> ValidateResponse:
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            (root / "scenario.yaml").write_text(req.scenario_yaml)
            (root / "profiles.tsv").write_text(req.profiles_tsv)
            try:
                cfg = load_scenario(root)
            except ScenarioError as exc:
                # strip the throwaway directory from the diagnostic
                return ValidateResponse(ok=False, error=str(exc).replace(tmp + "/", ""))
        return ValidateResponse(ok=True, name=cfg.name, prosumers=cfg.num_prosumers)

    @app.post("/bench", response_model=BenchResponse)
    def bench(req: BenchRequest) -> BenchResponse:
        return run_bench(req)

    return app
