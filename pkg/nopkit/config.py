# nopkit/config.py
from __future__ import annotations

import configparser
import dataclasses
import logging
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

from dotenv import load_dotenv

from nopkit.errors import ConfigError
from nopkit.multigrid import MultiGridPlan
from nopkit.neural_operator import ModelConfig
from nopkit.pde_data import PDE_KINDS, BurgersConfig, GrfSpec, NsConfig
from nopkit.training import TrainConfig

logger = logging.getLogger(__name__)

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


# ---------------------- DATA CLASSES ----------------------

@dataclass(frozen=True)
class DataConfig:
    pde: str = "burgers"
    n: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.pde not in PDE_KINDS:
            raise ConfigError(f"data.pde must be one of {PDE_KINDS}, got '{self.pde}'")
        if self.n < 1:
            raise ConfigError("data.n must be >= 1")


@dataclass(frozen=True)
class MultiGridConfig:
    enabled: bool = False
    levels: int = 0
    padding: int = 0
    regions_per_dim: int = 0

    def plan(self, grid: int, d: int) -> Optional[MultiGridPlan]:
        if not self.enabled:
            return None
        exponent = grid.bit_length() - 1
        if 2**exponent != grid:
            raise ConfigError(f"multi-grid needs a power-of-two grid, got {grid}")
        return MultiGridPlan(exponent, self.levels, self.padding, d, self.regions_per_dim or None)


@dataclass(frozen=True)
class RunSettings:
    threads: int = 1
    log_level: str = "INFO"

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError("run.threads must be >= 1")
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigError(f"unknown run.log_level '{self.log_level}'")


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    grf: GrfSpec = field(default_factory=GrfSpec.burgers)
    burgers: BurgersConfig = field(default_factory=BurgersConfig)
    ns: NsConfig = field(default_factory=NsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    multigrid: MultiGridConfig = field(default_factory=MultiGridConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunSettings = field(default_factory=RunSettings)

    @property
    def solver(self) -> Union[BurgersConfig, NsConfig]:
        return self.burgers if self.data.pde == "burgers" else self.ns

    @property
    def grid(self) -> int:
        return self.solver.grid

    @property
    def plan(self) -> Optional[MultiGridPlan]:
        return self.multigrid.plan(self.grid, self.model.d)


SECTIONS = {f.name: f for f in dataclasses.fields(RunConfig)}


# ---------------------- TYPED VALUES ----------------------

def parse_value(hint: Any, text: str, where: str) -> Any:
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    try:
        if origin is Union and type(None) in args:
            if text.lower() in ("", "none"):
                return None
            inner = next(a for a in args if a is not type(None))
            return parse_value(inner, text, where)
        if origin in (tuple, Tuple):
            return tuple(parse_value(args[0], part, where) for part in text.split(",") if part.strip())
        if hint is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(f"not a boolean: '{text}'")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: unsupported field type {hint}")


def format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value)


def build_section(cls, values: Mapping[str, str], base=None, section: str = ""):
    """Typed dataclass from string values; unknown keys are rejected."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    parsed = {}
    for key, text in values.items():
        if key not in names:
            raise ConfigError(f"unknown key '{section}.{key}'")
        parsed[key] = parse_value(hints[key], text, f"{section}.{key}")
    base = base if base is not None else cls()
    return dataclasses.replace(base, **parsed)


def section_strings(obj) -> Dict[str, str]:
    return {f.name: format_value(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


# ---------------------- LOADING ----------------------

def _env_defaults() -> Dict[str, str]:
    load_dotenv()
    env = {}
    if os.getenv("NOPKIT_THREADS"):
        env["threads"] = os.environ["NOPKIT_THREADS"]
    if os.getenv("NOPKIT_LOG_LEVEL"):
        env["log_level"] = os.environ["NOPKIT_LOG_LEVEL"]
    return env


def _split_override(item: str) -> Tuple[str, str, str]:
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"override must look like section.key=value, got '{item}'")
    lhs, value = item.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    return section, key, value


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Sequence[str] = (),
    text: Optional[str] = None,
) -> RunConfig:
    """Resolve a run config: defaults ← environment ← file ← overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        if path is not None:
            if not Path(path).is_file():
                raise ConfigError(f"config file not found: {path}")
            parser.read(path)
        if text is not None:
            parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    raw: Dict[str, Dict[str, str]] = {name: {} for name in SECTIONS}
    raw["run"].update(_env_defaults())
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        raw[section].update(parser[section])
    for item in overrides:
        section, key, value = _split_override(item)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section '{section}' in override '{item}'")
        raw[section][key] = value

    data = build_section(DataConfig, raw["data"], section="data")
    grf_base = GrfSpec.burgers() if data.pde == "burgers" else GrfSpec.navier_stokes()
    model_base = ModelConfig(d=1, modes=(16,)) if data.pde == "burgers" else ModelConfig()
    cfg = RunConfig(
        data=data,
        grf=build_section(GrfSpec, raw["grf"], grf_base, "grf"),
        burgers=build_section(BurgersConfig, raw["burgers"], section="burgers"),
        ns=build_section(NsConfig, raw["ns"], section="ns"),
        model=build_section(ModelConfig, raw["model"], model_base, "model"),
        multigrid=build_section(MultiGridConfig, raw["multigrid"], section="multigrid"),
        train=build_section(TrainConfig, raw["train"], section="train"),
        run=build_section(RunSettings, raw["run"], section="run"),
    )
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Cross-section checks, run before any compute."""
    d = 1 if cfg.data.pde == "burgers" else 2
    if cfg.grf.d != d:
        raise ConfigError(f"grf.d = {cfg.grf.d} but {cfg.data.pde} fields are {d}-d")
    if cfg.model.d != d:
        raise ConfigError(f"model.d = {cfg.model.d} but {cfg.data.pde} fields are {d}-d")
    plan = cfg.plan
    d_a = 1
    if plan is not None:
        expected = plan.channels(d_a)
        if cfg.model.in_channels != expected:
            raise ConfigError(
                f"model.in_channels must be {expected} for a {plan.levels}-level multi-grid plan"
            )
        extent = plan.window_extent
    else:
        if cfg.model.in_channels != d_a:
            raise ConfigError(f"model.in_channels must be {d_a} for {cfg.data.pde} data")
        extent = cfg.grid
    for a in cfg.model.modes:
        if a > extent // 2:
            raise ConfigError(f"model.modes {cfg.model.modes} exceed Nyquist of a {extent}-point grid")


def dump_config(cfg: RunConfig) -> str:
    """INI snapshot; ``load_config(text=dump_config(cfg)) == cfg``."""
    lines = []
    for name in SECTIONS:
        lines.append(f"[{name}]")
        lines.extend(f"{key} = {value}" for key, value in section_strings(getattr(cfg, name)).items())
        lines.append("")
    return "\n".join(lines)
