from pathlib import Path
from typing import Optional, Tuple

import pytest

from nopkit.config import (
    RunConfig,
    dump_config,
    load_config,
    parse_value,
)
from nopkit.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("NOPKIT_THREADS", raising=False)
    monkeypatch.delenv("NOPKIT_LOG_LEVEL", raising=False)


def test_defaults_are_a_burgers_run():
    cfg = load_config()
    assert isinstance(cfg, RunConfig)
    assert cfg.data.pde == "burgers"
    assert cfg.model.d == 1 and cfg.model.modes == (16,)
    assert cfg.grf.power == 3.0
    assert cfg.grid == 256
    assert cfg.plan is None


@pytest.mark.parametrize("name", ["burgers.ini", "ns.ini", "ns_mg.ini", "fno_large.ini"])
def test_shipped_configs_load_and_round_trip(name):
    cfg = load_config(CONFIGS / name)
    assert load_config(text=dump_config(cfg)) == cfg


def test_ns_defaults_follow_the_pde():
    cfg = load_config(CONFIGS / "ns.ini")
    assert cfg.grf.scale == 27.0 and cfg.grf.d == 2
    assert cfg.model.form == "tucker"
    assert cfg.solver is cfg.ns


def test_multigrid_config_builds_a_plan():
    plan = load_config(CONFIGS / "ns_mg.ini").plan
    assert plan.grid_exponent == 6
    assert plan.window_extent == 48


def test_overrides_win_over_file():
    cfg = load_config(CONFIGS / "burgers.ini", ["model.width=8", "train.epochs=3"])
    assert cfg.model.width == 8
    assert cfg.train.epochs == 3


def test_environment_fills_run_defaults(monkeypatch):
    monkeypatch.setenv("NOPKIT_THREADS", "3")
    assert load_config().run.threads == 3
    assert load_config(overrides=["run.threads=2"]).run.threads == 2


@pytest.mark.parametrize(
    "overrides",
    [
        ["model.bogus=1"],
        ["bogus.width=1"],
        ["model.separable=maybe"],
        ["model.width=wide"],
        ["width=8"],
        ["model.d=2"],
        ["model.modes=200"],
        ["data.pde=heat"],
        ["multigrid.enabled=true", "burgers.grid=250"],
    ],
)
def test_invalid_configs(overrides):
    with pytest.raises(ConfigError):
        load_config(overrides=overrides)


def test_multigrid_channels_are_checked():
    with pytest.raises(ConfigError, match="in_channels"):
        load_config(CONFIGS / "ns_mg.ini", ["model.in_channels=1"])


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")
    bad = tmp_path / "bad.ini"
    bad.write_text("width = 3\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_parse_value_types():
    assert parse_value(Tuple[int, ...], "3, 4", "x") == (3, 4)
    assert parse_value(Tuple[int, ...], "", "x") == ()
    assert parse_value(Optional[int], "none", "x") is None
    assert parse_value(bool, "Yes", "x") is True
    assert parse_value(float, "1e-3", "x") == 1e-3
