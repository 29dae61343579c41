"""Bundled scenario definitions and their generators.

Every bundled scenario is synthetic and fully reproducible from this
module: rerunning regenerate_bundled() rewrites the packaged data
files byte for byte. Profiles follow one design rule learned the hard
way: each active trading pair needs a prosumer whose marginal
economics stay quadratic (a substantial flexible load), otherwise the
primal responses can mirror each other for one full round and the
summed trade gap transiently hits zero, stopping the loop far from the
optimum. Totals, shapes, and iteration bounds here were validated
against the centralized solution before being frozen.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .admm.engine import AdmmConfig
from .model import HORIZON, BatterySpec, ProsumerProfile, Tariff
from .scenario import ChainScenarioConfig, ScenarioConfig, write_scenario

DATA_DIR = Path(__file__).parent / "data"


def flat(value: float) -> np.ndarray:
    return np.full(HORIZON, float(value))


def bell(total: float, center: float, width: float = 6.0) -> np.ndarray:
    """Generation profile with the given daily total, peaked at center."""
    t = np.arange(HORIZON)
    shape = np.exp(-0.5 * ((t - center) / width) ** 2)
    return total * shape / shape.sum()


def tent(peak: float, center: int, slope: float) -> np.ndarray:
    """Piecewise-linear solar-like profile with round-number values."""
    t = np.arange(HORIZON)
    return np.maximum(0.0, peak - slope * np.abs(t - center))


def standard_tariff(**kw) -> Tariff:
    base = dict(alpha=0.3, beta=0.12, pi_p2p=0.14, pi_as=flat(0.02), wear_price=0.8)
    base.update(kw)
    return Tariff(**base)


def build_solo_prosumer() -> ScenarioConfig:
    return ScenarioConfig(
        name="solo_prosumer",
        description="One prosumer, no trading: schedule against the grid only.",
        profiles=(
            ProsumerProfile(
                id=0,
                inflexible=flat(0.7),
                preferred_flexible=flat(0.9),
                renewable_avail=tent(1.5, 13, 0.25),
                battery=BatterySpec(),
            ),
        ),
        tariff=standard_tariff(),
    )


def build_two_prosumer_tiny() -> ScenarioConfig:
    """Two prosumers with offset solar tents; values stay hand-checkable."""
    return ScenarioConfig(
        name="two_prosumer_tiny",
        description="Morning-solar and evening-solar prosumers trading midday.",
        profiles=(
            ProsumerProfile(
                id=0,
                inflexible=flat(0.6),
                preferred_flexible=flat(1.0),
                renewable_avail=tent(3.0, 10, 0.5),
                battery=BatterySpec(),
            ),
            ProsumerProfile(
                id=1,
                inflexible=flat(0.8),
                preferred_flexible=flat(1.2),
                renewable_avail=tent(1.5, 16, 0.25),
                battery=BatterySpec(),
            ),
        ),
        tariff=standard_tariff(),
        chain=ChainScenarioConfig(validators=3),
    )


def build_two_prosumer_surplus() -> ScenarioConfig:
    """Seller with twice its own demand in renewables, buyer with none."""
    return ScenarioConfig(
        name="two_prosumer_surplus",
        description="A 2x-surplus generator next to a renewable-less consumer.",
        profiles=(
            ProsumerProfile(
                id=0,
                inflexible=flat(0.4),
                preferred_flexible=flat(0.6),
                renewable_avail=bell(48.0, center=12.0, width=5.0),
                battery=BatterySpec(),
            ),
            ProsumerProfile(
                id=1,
                inflexible=flat(0.8),
                preferred_flexible=flat(1.2),
                renewable_avail=flat(0.0),
                battery=BatterySpec(),
            ),
        ),
        tariff=standard_tariff(beta=0.05, wear_price=0.05),
    )


def build_three_prosumer_mixed() -> ScenarioConfig:
    return ScenarioConfig(
        name="three_prosumer_mixed",
        description="Solar seller, storage-only consumer, evening-wind prosumer.",
        profiles=(
            ProsumerProfile(
                id=0,
                inflexible=flat(0.4),
                preferred_flexible=flat(0.8),
                renewable_avail=bell(36.0, center=12.0),
                battery=BatterySpec(),
            ),
            ProsumerProfile(
                id=1,
                inflexible=flat(0.9),
                preferred_flexible=flat(1.4),
                renewable_avail=flat(0.0),
                battery=BatterySpec(),
            ),
            ProsumerProfile(
                id=2,
                inflexible=flat(0.7),
                preferred_flexible=flat(1.0),
                renewable_avail=bell(10.0, center=15.0),
                battery=BatterySpec(),
            ),
        ),
        tariff=standard_tariff(),
    )


def build_five_prosumer_vpp() -> ScenarioConfig:
    return ScenarioConfig(
        name="five_prosumer_vpp",
        description="Five mixed prosumers run as one virtual power plant.",
        profiles=(
            ProsumerProfile(
                id=0,
                inflexible=flat(0.4),
                preferred_flexible=flat(0.8),
                renewable_avail=bell(40.0, center=11.0),
                battery=BatterySpec(),
            ),
            ProsumerProfile(
                id=1,
                inflexible=flat(1.2),
                preferred_flexible=flat(1.5),
                renewable_avail=flat(0.0),
                battery=BatterySpec(),
            ),
            ProsumerProfile(
                id=2,
                inflexible=flat(0.7),
                preferred_flexible=flat(1.0),
                renewable_avail=bell(14.0, center=16.0, width=8.0),
                battery=BatterySpec(),
            ),
            ProsumerProfile(
                id=3,
                inflexible=flat(0.5),
                preferred_flexible=flat(2.0),
                renewable_avail=bell(8.0, center=9.0),
                battery=BatterySpec(),
            ),
            ProsumerProfile(
                id=4,
                inflexible=flat(0.9),
                preferred_flexible=flat(1.1),
                renewable_avail=bell(20.0, center=13.0, width=4.0),
                battery=BatterySpec(capacity=6.0, charge_limit=2.0, discharge_limit=2.0),
            ),
        ),
        tariff=standard_tariff(),
    )


def build_ten_prosumer_week() -> list[tuple[str, ScenarioConfig]]:
    """Seven daily scenarios for a 10-prosumer fleet, seeded and frozen.

    Four solar households, two wind sites, four pure consumers. Daily
    weather factors and load wiggles come from one fixed seed.
    """
    rng = np.random.default_rng(20240817)
    base_infl = rng.uniform(0.3, 1.0, 10)
    base_pref = rng.uniform(0.8, 1.6, 10)
    solar_total = rng.uniform(18.0, 40.0, 4)
    solar_center = rng.uniform(10.0, 14.0, 4)
    wind_total = rng.uniform(10.0, 22.0, 2)
    days = []
    for day in range(1, 8):
        weather_solar = rng.uniform(0.6, 1.3)
        weather_wind = rng.uniform(0.5, 1.4)
        load_scale = rng.uniform(0.9, 1.1, 10)
        profiles = []
        for u in range(10):
            if u < 4:
                renewable = bell(
                    solar_total[u] * weather_solar, center=solar_center[u], width=3.5
                )
            elif u < 6:
                renewable = bell(
                    wind_total[u - 4] * weather_wind,
                    center=float(4 + 9 * (u - 4)),
                    width=9.0,
                )
            else:
                renewable = flat(0.0)
            profiles.append(
                ProsumerProfile(
                    id=u,
                    inflexible=flat(base_infl[u] * load_scale[u]),
                    preferred_flexible=flat(base_pref[u]),
                    renewable_avail=renewable,
                    battery=BatterySpec(),
                )
            )
        days.append(
            (
                f"day{day}",
                ScenarioConfig(
                    name=f"ten_prosumer_week_day{day}",
                    description=f"Trading day {day} of the 10-prosumer week.",
                    profiles=tuple(profiles),
                    tariff=standard_tariff(),
                    admm=AdmmConfig(max_iterations=2000),
                ),
            )
        )
    return days


def bundled_names() -> list[str]:
    return [
        "solo_prosumer",
        "two_prosumer_tiny",
        "two_prosumer_surplus",
        "three_prosumer_mixed",
        "five_prosumer_vpp",
    ] + [f"ten_prosumer_week/day{d}" for d in range(1, 8)]


def bundled_path(name: str) -> Path:
    path = DATA_DIR / name
    if not (path / "scenario.yaml").exists():
        raise FileNotFoundError(
            f"no bundled scenario {name!r}; known: {', '.join(bundled_names())}"
        )
    return path


def regenerate_bundled(root: Path | None = None) -> list[Path]:
    """Write every bundled scenario under root (default: packaged data)."""
    root = DATA_DIR if root is None else Path(root)
    written = []
    for build in (
        build_solo_prosumer,
        build_two_prosumer_tiny,
        build_two_prosumer_surplus,
        build_three_prosumer_mixed,
        build_five_prosumer_vpp,
    ):
        cfg = build()
        written.append(write_scenario(cfg, root / cfg.name))
    for day, cfg in build_ten_prosumer_week():
        written.append(write_scenario(cfg, root / "ten_prosumer_week" / day))
    return written
