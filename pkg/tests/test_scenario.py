"""Scenario and result file round trips, schema rejection, bundled data."""

import numpy as np
import pytest
import yaml

from transactive.admm import AdmmConfig, InProcessCoordinator, run_admm
from transactive.fixtures import (
    bundled_names,
    bundled_path,
    build_two_prosumer_tiny,
    regenerate_bundled,
)
from transactive.model import BatterySpec, HORIZON, ProsumerProfile, Tariff, soc_trajectory
from transactive.scenario import (
    SCHEMA,
    ScenarioConfig,
    ScenarioError,
    load_results,
    load_scenario,
    write_results,
    write_scenario,
)


def small_config(name="roundtrip"):
    rng = np.random.default_rng(7)
    profiles = tuple(
        ProsumerProfile(
            id=u,
            inflexible=rng.uniform(0.1, 1.0, HORIZON),
            preferred_flexible=rng.uniform(0.5, 1.5, HORIZON),
            renewable_avail=rng.uniform(0.0, 2.0, HORIZON),
            battery=BatterySpec(capacity=8.0, initial_soc=1.5),
        )
        for u in range(2)
    )
    # awkward floats on purpose: the TSV writer must preserve them exactly
    tariff = Tariff(
        alpha=0.1 + 0.2, beta=0.12, pi_p2p=1.0 / 7.0, pi_as=rng.uniform(0.0, 0.05, HORIZON),
        wear_price=0.8,
    )
    return ScenarioConfig(name=name, profiles=profiles, tariff=tariff)


def test_write_then_load_is_exact(tmp_path):
    cfg = small_config()
    write_scenario(cfg, tmp_path / "s")
    back = load_scenario(tmp_path / "s")
    assert back.name == cfg.name
    assert back.tariff.alpha == cfg.tariff.alpha
    assert back.tariff.pi_p2p == cfg.tariff.pi_p2p
    assert np.array_equal(back.tariff.pi_as, cfg.tariff.pi_as)
    assert back.admm == cfg.admm
    assert back.chain == cfg.chain
    for orig, loaded in zip(cfg.profiles, back.profiles):
        assert loaded.id == orig.id
        assert np.array_equal(loaded.inflexible, orig.inflexible)
        assert np.array_equal(loaded.preferred_flexible, orig.preferred_flexible)
        assert np.array_equal(loaded.renewable_avail, orig.renewable_avail)
        assert loaded.battery == orig.battery


def test_load_accepts_yaml_path_or_directory(tmp_path):
    cfg = small_config()
    out = write_scenario(cfg, tmp_path / "s")
    via_dir = load_scenario(out)
    via_file = load_scenario(out / "scenario.yaml")
    assert via_dir.name == via_file.name == cfg.name


def test_short_pi_as_vector_rejected_with_field_name(tmp_path):
    cfg = small_config()
    out = write_scenario(cfg, tmp_path / "s")
    doc = yaml.safe_load((out / "scenario.yaml").read_text())
    doc["tariff"]["pi_as"] = [0.01] * 23
    (out / "scenario.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))
    with pytest.raises(ScenarioError, match=r"pi_as.*expected 24 values, got 23"):
        load_scenario(out)


def test_short_profile_row_rejected_with_line_number(tmp_path):
    cfg = small_config()
    out = write_scenario(cfg, tmp_path / "s")
    lines = (out / "profiles.tsv").read_text().splitlines()
    lines[2] = "\t".join(lines[2].split("\t")[:-1])  # drop t23 from one row
    (out / "profiles.tsv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ScenarioError, match=r"profiles\.tsv:3: expected 2 \+ 24 columns"):
        load_scenario(out)


def test_unknown_series_rejected(tmp_path):
    out = write_scenario(small_config(), tmp_path / "s")
    with (out / "profiles.tsv").open("a") as fh:
        fh.write("0\twind_guess\t" + "\t".join(["0.0"] * 24) + "\n")
    with pytest.raises(ScenarioError, match="unknown series 'wind_guess'"):
        load_scenario(out)


def test_duplicate_series_rejected(tmp_path):
    out = write_scenario(small_config(), tmp_path / "s")
    lines = (out / "profiles.tsv").read_text().splitlines()
    with (out / "profiles.tsv").open("a") as fh:
        fh.write(lines[1] + "\n")
    with pytest.raises(ScenarioError, match="duplicate series"):
        load_scenario(out)


def test_non_numeric_cell_rejected(tmp_path):
    out = write_scenario(small_config(), tmp_path / "s")
    lines = (out / "profiles.tsv").read_text().splitlines()
    cells = lines[1].split("\t")
    cells[5] = "lots"
    lines[1] = "\t".join(cells)
    (out / "profiles.tsv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ScenarioError, match="non-numeric"):
        load_scenario(out)


def test_missing_profiles_file(tmp_path):
    out = write_scenario(small_config(), tmp_path / "s")
    (out / "profiles.tsv").unlink()
    with pytest.raises(ScenarioError, match="profiles file not found"):
        load_scenario(out)


def test_missing_series_for_listed_prosumer(tmp_path):
    out = write_scenario(small_config(), tmp_path / "s")
    lines = [
        ln
        for ln in (out / "profiles.tsv").read_text().splitlines()
        if not ln.startswith("1\trenewable")
    ]
    (out / "profiles.tsv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ScenarioError, match=r"prosumer 1: missing series \['renewable'\]"):
        load_scenario(out)


def test_wrong_schema_tag_rejected(tmp_path):
    out = write_scenario(small_config(), tmp_path / "s")
    doc = yaml.safe_load((out / "scenario.yaml").read_text())
    doc["schema"] = "transactive-scenario/9"
    (out / "scenario.yaml").write_text(yaml.safe_dump(doc))
    with pytest.raises(ScenarioError, match=SCHEMA):
        load_scenario(out)


def test_negative_profile_value_names_prosumer(tmp_path):
    out = write_scenario(small_config(), tmp_path / "s")
    lines = (out / "profiles.tsv").read_text().splitlines()
    cells = lines[1].split("\t")
    cells[7] = "-0.25"
    lines[1] = "\t".join(cells)
    (out / "profiles.tsv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ScenarioError, match="prosumer 0"):
        load_scenario(out)


def test_scalar_pi_as_expands_to_horizon(tmp_path):
    out = write_scenario(small_config(), tmp_path / "s")
    doc = yaml.safe_load((out / "scenario.yaml").read_text())
    doc["tariff"]["pi_as"] = 0.02
    (out / "scenario.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))
    cfg = load_scenario(out)
    assert np.array_equal(cfg.tariff.pi_as, np.full(HORIZON, 0.02))


def test_bad_admm_settings_rejected(tmp_path):
    out = write_scenario(small_config(), tmp_path / "s")
    doc = yaml.safe_load((out / "scenario.yaml").read_text())
    doc["admm"]["epsilon"] = -1.0
    (out / "scenario.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))
    with pytest.raises(ScenarioError, match="epsilon"):
        load_scenario(out)


# -- bundled data ------------------------------------------------------------


def test_bundled_scenarios_all_load():
    expected_sizes = {
        "solo_prosumer": 1,
        "two_prosumer_tiny": 2,
        "two_prosumer_surplus": 2,
        "three_prosumer_mixed": 3,
        "five_prosumer_vpp": 5,
    }
    names = bundled_names()
    assert set(expected_sizes) <= set(names)
    assert sum(1 for n in names if n.startswith("ten_prosumer_week/")) == 7
    for name in names:
        cfg = load_scenario(bundled_path(name))
        want = expected_sizes.get(name, 10)
        assert cfg.num_prosumers == want, name
        assert cfg.admm.epsilon == 1e-6


def test_bundled_path_rejects_unknown_name():
    with pytest.raises(FileNotFoundError, match="solo_prosumer"):
        bundled_path("no_such_scenario")


def test_bundled_files_match_their_generators(tmp_path):
    regenerate_bundled(tmp_path)
    for name in bundled_names():
        frozen = bundled_path(name)
        for fname in ("scenario.yaml", "profiles.tsv"):
            regenerated = (tmp_path / name / fname).read_bytes()
            assert regenerated == (frozen / fname).read_bytes(), f"{name}/{fname}"


def test_surplus_scenario_has_twice_the_sellers_demand():
    cfg = load_scenario(bundled_path("two_prosumer_surplus"))
    seller = cfg.profiles[0]
    demand = seller.inflexible.sum() + seller.preferred_flexible.sum()
    assert seller.renewable_avail.sum() == pytest.approx(2 * demand, rel=1e-12)
    assert cfg.profiles[1].renewable_avail.sum() == 0.0


# -- results -----------------------------------------------------------------


def run_tiny():
    cfg = build_two_prosumer_tiny()
    coord = InProcessCoordinator(2, rho=cfg.admm.rho, epsilon=cfg.admm.epsilon)
    result = run_admm(list(cfg.profiles), cfg.tariff, cfg.admm, coord)
    assert result.converged
    return cfg, result


def test_results_round_trip(tmp_path):
    cfg, result = run_tiny()
    write_results(tmp_path / "out", cfg.profiles, result)
    back = load_results(tmp_path / "out")
    assert back.summary["converged"] is True
    assert back.summary["aborted"] is False
    assert back.summary["prosumers"] == 2
    assert back.summary["iterations"] == result.iterations
    assert back.summary["total_cost"] == result.total_cost
    assert np.array_equal(back.trades, result.trades)
    for u, profile in enumerate(cfg.profiles):
        sched = result.schedules[u]
        stored = back.schedules[profile.id]
        for series, values in (
            ("g", sched.g), ("r", sched.r), ("l_fl", sched.l_fl),
            ("c", sched.c), ("d", sched.d), ("e_as", sched.e_as),
        ):
            assert np.array_equal(stored[series], values), series
        assert np.array_equal(
            stored["soc"], soc_trajectory(profile.battery, sched.c, sched.d)
        )
    assert len(back.iterations) == result.iterations
    assert back.iterations[-1]["converged"] is True
    assert back.iterations[-1]["residual"] == result.history[-1].residual


def test_solo_results_have_empty_trade_table(tmp_path):
    cfg = load_scenario(bundled_path("solo_prosumer"))
    coord = InProcessCoordinator(1, rho=cfg.admm.rho, epsilon=cfg.admm.epsilon)
    result = run_admm(list(cfg.profiles), cfg.tariff, cfg.admm, coord)
    write_results(tmp_path / "out", cfg.profiles, result)
    lines = [
        ln
        for ln in (tmp_path / "out" / "trades.tsv").read_text().splitlines()
        if ln and not ln.startswith("#")
    ]
    assert lines == []
    back = load_results(tmp_path / "out")
    assert back.trades.shape == (1, 1, HORIZON)
    assert np.all(back.trades == 0.0)
