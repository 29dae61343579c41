"""Scenario files: a YAML header plus tabular 24-column time series.

A scenario is a directory holding `scenario.yaml` (tariff, solver and
chain settings, per-prosumer battery specs, schema tag) and a TSV file
of profile rows, one `(prosumer, series)` pair per line with 24 value
columns. Results are written back in the same tabular style so a run
can be reloaded and compared exactly; floats are serialized with repr
precision and survive the round trip bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .admm.engine import AdmmConfig
from .model import (
    HORIZON,
    BatterySpec,
    EnergyModelError,
    ProsumerProfile,
    Schedule,
    Tariff,
    soc_trajectory,
)

SCHEMA = "transactive-scenario/1"
SERIES_NAMES = ("inflexible", "preferred_flexible", "renewable")
SCHEDULE_SERIES = ("g", "r", "l_fl", "c", "d", "e_as", "soc")


class ScenarioError(ValueError):
    """Schema or content problem, annotated with file and field."""


@dataclass(frozen=True)
class ChainScenarioConfig:
    validators: int = 3
    block_interval_ms: int = 50
    max_block_txs: int = 256
    round_timeout: int = 30
    seed: int = 0

    def __post_init__(self) -> None:
        if self.validators < 1:
            raise ScenarioError("chain.validators must be >= 1")
        if self.block_interval_ms < 1:
            raise ScenarioError("chain.block_interval_ms must be >= 1")
        if self.round_timeout < 1:
            raise ScenarioError("chain.round_timeout must be >= 1")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    profiles: tuple[ProsumerProfile, ...]
    tariff: Tariff
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    chain: ChainScenarioConfig = field(default_factory=ChainScenarioConfig)
    description: str = ""

    @property
    def num_prosumers(self) -> int:
        return len(self.profiles)


def _fmt(x: float) -> str:
    return repr(float(x))


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ScenarioError(f"{where}: missing field '{key}'")
    return mapping[key]


def _vector(value, where: str) -> np.ndarray:
    if isinstance(value, (int, float)):
        return np.full(HORIZON, float(value))
    arr = np.asarray(value, dtype=float)
    if arr.shape != (HORIZON,):
        raise ScenarioError(
            f"{where}: expected {HORIZON} values, got {arr.size}"
        )
    return arr


def _load_profiles_tsv(path: Path) -> dict[int, dict[str, np.ndarray]]:
    if not path.exists():
        raise ScenarioError(f"{path}: profiles file not found")
    table: dict[int, dict[str, np.ndarray]] = {}
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 + HORIZON:
                raise ScenarioError(
                    f"{path}:{lineno}: expected 2 + {HORIZON} columns, got {len(parts)}"
                )
            where = f"{path}:{lineno}"
            try:
                pid = int(parts[0])
            except ValueError:
                raise ScenarioError(f"{where}: bad prosumer id {parts[0]!r}") from None
            series = parts[1]
            if series not in SERIES_NAMES:
                raise ScenarioError(
                    f"{where}: unknown series {series!r}, expected one of {SERIES_NAMES}"
                )
            try:
                values = np.array([float(v) for v in parts[2:]])
            except ValueError:
                raise ScenarioError(f"{where}: non-numeric value in row") from None
            row = table.setdefault(pid, {})
            if series in row:
                raise ScenarioError(f"{where}: duplicate series {series!r} for prosumer {pid}")
            row[series] = values
    return table


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load and fully validate a scenario directory or yaml file."""
    path = Path(path)
    if path.is_dir():
        path = path / "scenario.yaml"
    if not path.exists():
        raise ScenarioError(f"{path}: no such scenario file")
    with path.open() as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"{path}: yaml parse error: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    schema = _require(doc, "schema", str(path))
    if schema != SCHEMA:
        raise ScenarioError(f"{path}: schema {schema!r}, expected {SCHEMA!r}")
    name = _require(doc, "name", str(path))

    tariff_doc = _require(doc, "tariff", str(path))
    where = f"{path}: tariff"
    try:
        tariff = Tariff(
            alpha=float(_require(tariff_doc, "alpha", where)),
            beta=float(_require(tariff_doc, "beta", where)),
            pi_p2p=float(_require(tariff_doc, "pi_p2p", where)),
            pi_as=_vector(_require(tariff_doc, "pi_as", where), f"{where}.pi_as"),
            wear_price=float(tariff_doc.get("wear_price", 1.0)),
        )
    except EnergyModelError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc

    admm_doc = doc.get("admm", {})
    try:
        admm = AdmmConfig(
            rho=float(admm_doc.get("rho", AdmmConfig.rho)),
            epsilon=float(admm_doc.get("epsilon", AdmmConfig.epsilon)),
            max_iterations=int(admm_doc.get("max_iterations", AdmmConfig.max_iterations)),
            trade_limit=float(admm_doc.get("trade_limit", AdmmConfig.trade_limit)),
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: admm: {exc}") from exc

    chain_doc = doc.get("chain", {})
    chain = ChainScenarioConfig(
        validators=int(chain_doc.get("validators", 3)),
        block_interval_ms=int(chain_doc.get("block_interval_ms", 50)),
        max_block_txs=int(chain_doc.get("max_block_txs", 256)),
        round_timeout=int(chain_doc.get("round_timeout", 30)),
        seed=int(chain_doc.get("seed", 0)),
    )

    profile_rel = _require(doc, "profiles_file", str(path))
    table = _load_profiles_tsv(path.parent / profile_rel)

    prosumer_docs = _require(doc, "prosumers", str(path))
    if not isinstance(prosumer_docs, list) or not prosumer_docs:
        raise ScenarioError(f"{path}: 'prosumers' must be a non-empty list")
    profiles = []
    for entry in prosumer_docs:
        pid = int(_require(entry, "id", f"{path}: prosumers[]"))
        where = f"{path}: prosumer {pid}"
        if pid not in table:
            raise ScenarioError(f"{where}: no profile rows in {profile_rel}")
        rows = table[pid]
        missing = [s for s in SERIES_NAMES if s not in rows]
        if missing:
            raise ScenarioError(f"{where}: missing series {missing} in {profile_rel}")
        bat_doc = entry.get("battery", {})
        try:
            battery = BatterySpec(
                capacity=float(bat_doc.get("capacity", 10.0)),
                charge_limit=float(bat_doc.get("charge_limit", 3.0)),
                discharge_limit=float(bat_doc.get("discharge_limit", 3.0)),
                efficiency=float(bat_doc.get("efficiency", 0.95)),
                initial_soc=float(bat_doc.get("initial_soc", 0.0)),
            )
            profiles.append(
                ProsumerProfile(
                    id=pid,
                    inflexible=rows["inflexible"],
                    preferred_flexible=rows["preferred_flexible"],
                    renewable_avail=rows["renewable"],
                    battery=battery,
                )
            )
        except EnergyModelError as exc:
            raise ScenarioError(f"{where}: {exc}") from exc
    ids = [p.id for p in profiles]
    if len(set(ids)) != len(ids):
        raise ScenarioError(f"{path}: duplicate prosumer ids {ids}")

    return ScenarioConfig(
        name=name,
        profiles=tuple(profiles),
        tariff=tariff,
        admm=admm,
        chain=chain,
        description=doc.get("description", ""),
    )


def write_scenario(cfg: ScenarioConfig, out_dir: str | Path) -> Path:
    """Write scenario.yaml plus profiles.tsv; returns the directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema": SCHEMA,
        "name": cfg.name,
        "description": cfg.description,
        "profiles_file": "profiles.tsv",
        "tariff": {
            "alpha": cfg.tariff.alpha,
            "beta": cfg.tariff.beta,
            "pi_p2p": cfg.tariff.pi_p2p,
            "pi_as": [float(x) for x in cfg.tariff.pi_as],
            "wear_price": cfg.tariff.wear_price,
        },
        "admm": {
            "rho": cfg.admm.rho,
            "epsilon": cfg.admm.epsilon,
            "max_iterations": cfg.admm.max_iterations,
            "trade_limit": cfg.admm.trade_limit,
        },
        "chain": {
            "validators": cfg.chain.validators,
            "block_interval_ms": cfg.chain.block_interval_ms,
            "max_block_txs": cfg.chain.max_block_txs,
            "round_timeout": cfg.chain.round_timeout,
            "seed": cfg.chain.seed,
        },
        "prosumers": [
            {
                "id": p.id,
                "battery": {
                    "capacity": p.battery.capacity,
                    "charge_limit": p.battery.charge_limit,
                    "discharge_limit": p.battery.discharge_limit,
                    "efficiency": p.battery.efficiency,
                    "initial_soc": p.battery.initial_soc,
                },
            }
            for p in cfg.profiles
        ],
    }
    with (out / "scenario.yaml").open("w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    with (out / "profiles.tsv").open("w") as fh:
        header = ["# prosumer", "series"] + [f"t{t:02d}" for t in range(HORIZON)]
        fh.write("\t".join(header) + "\n")
        for p in cfg.profiles:
            for series, values in (
                ("inflexible", p.inflexible),
                ("preferred_flexible", p.preferred_flexible),
                ("renewable", p.renewable_avail),
            ):
                cells = [str(p.id), series] + [_fmt(v) for v in values]
                fh.write("\t".join(cells) + "\n")
    return out


# -- results ---------------------------------------------------------------


@dataclass(frozen=True)
class ResultFiles:
    schedules: dict[int, dict[str, np.ndarray]]
    trades: np.ndarray
    iterations: list[dict]
    summary: dict


def write_results(
    out_dir: str | Path,
    profiles: tuple[ProsumerProfile, ...] | list[ProsumerProfile],
    result,
) -> Path:
    """Persist schedules, the pairwise trade table, and the residual trace.

    Accepts anything with .schedules and .trades; iteration history,
    convergence flags, and cost totals are picked up when present.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    num = len(profiles)

    with (out / "schedules.tsv").open("w") as fh:
        header = ["# prosumer", "series"] + [f"t{t:02d}" for t in range(HORIZON)]
        fh.write("\t".join(header) + "\n")
        for u, profile in enumerate(profiles):
            sched: Schedule = result.schedules[u]
            soc = soc_trajectory(profile.battery, sched.c, sched.d)
            series = {
                "g": sched.g,
                "r": sched.r,
                "l_fl": sched.l_fl,
                "c": sched.c,
                "d": sched.d,
                "e_as": sched.e_as,
                "soc": soc,
            }
            for name, values in series.items():
                cells = [str(profile.id), name] + [_fmt(v) for v in values]
                fh.write("\t".join(cells) + "\n")

    with (out / "trades.tsv").open("w") as fh:
        header = ["# buyer", "seller"] + [f"t{t:02d}" for t in range(HORIZON)]
        fh.write("\t".join(header) + "\n")
        for u in range(num):
            for v in range(num):
                if u == v:
                    continue
                cells = [str(profiles[u].id), str(profiles[v].id)] + [
                    _fmt(x) for x in result.trades[u, v]
                ]
                fh.write("\t".join(cells) + "\n")

    history = getattr(result, "history", [])
    with (out / "iterations.tsv").open("w") as fh:
        fh.write("# k\tresidual\ttotal_cost\tconverged\n")
        for report in history:
            costs = getattr(report, "per_prosumer_cost", None)
            total = (
                sum(c.total for c in costs)
                if costs is not None
                else float(report.total_cost)
            )
            fh.write(
                f"{report.k}\t{_fmt(report.residual)}\t{_fmt(total)}\t"
                f"{int(report.converged)}\n"
            )

    summary = {
        "prosumers": num,
        "converged": bool(getattr(result, "converged", True)),
        "aborted": bool(getattr(result, "aborted", False)),
        "iterations": len(history),
        "total_cost": float(result.total_cost),
    }
    with (out / "summary.yaml").open("w") as fh:
        yaml.safe_dump(summary, fh, sort_keys=False)
    return out


def load_results(out_dir: str | Path) -> ResultFiles:
    out = Path(out_dir)
    schedules: dict[int, dict[str, np.ndarray]] = {}
    with (out / "schedules.tsv").open() as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            pid, series = int(parts[0]), parts[1]
            schedules.setdefault(pid, {})[series] = np.array(
                [float(x) for x in parts[2:]]
            )

    rows = []
    with (out / "trades.tsv").open() as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            rows.append((int(parts[0]), int(parts[1]), [float(x) for x in parts[2:]]))
    ids = sorted(schedules)
    index = {pid: i for i, pid in enumerate(ids)}
    trades = np.zeros((len(ids), len(ids), HORIZON))
    for u, v, values in rows:
        trades[index[u], index[v]] = values

    iterations = []
    with (out / "iterations.tsv").open() as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            k, residual, total, conv = line.rstrip("\n").split("\t")
            iterations.append(
                {
                    "k": int(k),
                    "residual": float(residual),
                    "total_cost": float(total),
                    "converged": bool(int(conv)),
                }
            )

    with (out / "summary.yaml").open() as fh:
        summary = yaml.safe_load(fh)
    return ResultFiles(
        schedules=schedules, trades=trades, iterations=iterations, summary=summary
    )
