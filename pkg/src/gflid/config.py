"""Pipeline configuration: one file (JSON or TOML) with a section per stage."""
from __future__ import annotations

import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .identify import DsrSettings
from .library import LibrarySpec
from .params import ModelParams
from .simulate import ReferenceSchedule

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUNDLED = {"paper-protocol": "paper_protocol.toml"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimSettings:
    dt: float = 2e-5
    t_end: float = 1.0

    def __post_init__(self):
        for name in ("dt", "t_end"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be a positive number, got {v!r}")
        if self.t_end < self.dt:
            raise ValueError("t_end must be >= dt")


@dataclass(frozen=True)
class DatasetSettings:
    mode: str = "exact"
    stride: int = 10
    noise: float = 0.0
    seed: int = 0
    holdout: float = 0.0

    def __post_init__(self):
        if self.mode not in ("exact", "central-difference"):
            raise ValueError(f"mode must be 'exact' or 'central-difference', got {self.mode!r}")
        if not isinstance(self.stride, int) or self.stride < 1:
            raise ValueError("stride must be an integer >= 1")
        if not self.noise >= 0:
            raise ValueError("noise must be >= 0")
        if not 0 <= self.holdout < 1:
            raise ValueError("holdout must lie in [0, 1)")


@dataclass(frozen=True)
class SindySettings:
    threshold: float = 1e-4
    ridge: float = 1e-10

    def __post_init__(self):
        if not self.threshold >= 0 or not self.ridge >= 0:
            raise ValueError("threshold and ridge must be >= 0")


@dataclass(frozen=True)
class ReportSettings:
    out: str = "out"
    targets: tuple | None = None
    dsr_targets: tuple | None = None
    reintegrate: bool = False

    def __post_init__(self):
        from .model import STATE_NAMES
        for name in ("targets", "dsr_targets"):
            v = getattr(self, name)
            if v is None:
                continue
            v = tuple(v)
            object.__setattr__(self, name, v)
            bad = [t for t in v if t not in STATE_NAMES]
            if bad:
                raise ValueError(f"{name}: unknown targets {bad}")
            if not v:
                raise ValueError(f"{name} must not be empty")


@dataclass(frozen=True)
class PipelineConfig:
    model: ModelParams = field(default_factory=ModelParams)
    schedule: ReferenceSchedule = field(default_factory=ReferenceSchedule)
    sim: SimSettings = field(default_factory=SimSettings)
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    library: LibrarySpec = field(default_factory=LibrarySpec)
    sindy: SindySettings = field(default_factory=SindySettings)
    dsr: DsrSettings = field(default_factory=DsrSettings)
    report: ReportSettings = field(default_factory=ReportSettings)

    @property
    def sindy_targets(self):
        return self.report.targets

    @property
    def dsr_targets(self):
        return self.report.dsr_targets or self.report.targets

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "schedule": self.schedule.to_dict(),
                "sim": dataclasses.asdict(self.sim), "dataset": dataclasses.asdict(self.dataset),
                "library": self.library.to_dict(), "sindy": dataclasses.asdict(self.sindy),
                "dsr": dataclasses.asdict(self.dsr),
                "report": {k: list(v) if isinstance(v, tuple) else v
                           for k, v in dataclasses.asdict(self.report).items()}}


def _plain(section: str, cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected a table of settings")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{exc}" if not str(exc).startswith(section)
                          else str(exc)) from None


def _from_dict_section(section: str, build, d):
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected a table of settings")
    try:
        return build(d)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(section) else f"{section}: {msg}") from None


SECTIONS = ("model", "schedule", "sim", "dataset", "library", "sindy", "dsr", "report")


def config_from_dict(d: dict) -> PipelineConfig:
    unknown = sorted(set(d) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections {unknown}")
    kw = {}
    if "model" in d:
        kw["model"] = _from_dict_section("model", ModelParams.from_dict, d["model"])
    if "schedule" in d:
        kw["schedule"] = _from_dict_section("schedule", ReferenceSchedule.from_dict, d["schedule"])
    if "library" in d:
        kw["library"] = _from_dict_section("library", LibrarySpec.from_dict, d["library"])
    for name, cls in (("sim", SimSettings), ("dataset", DatasetSettings),
                      ("sindy", SindySettings), ("dsr", DsrSettings), ("report", ReportSettings)):
        if name in d:
            kw[name] = _plain(name, cls, d[name])
    return PipelineConfig(**kw)


def parse_config(text: str, fmt: str) -> PipelineConfig:
    try:
        d = json.loads(text) if fmt == "json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("config root must be a table")
    return config_from_dict(d)


def load_config(path=None) -> PipelineConfig:
    """Read a .json or .toml file, or a bundled name such as 'paper-protocol'."""
    if path is None:
        path = "paper-protocol"
    if str(path) in BUNDLED:
        text = resources.files("gflid.configs").joinpath(BUNDLED[str(path)]).read_text()
        return parse_config(text, "toml")
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    fmt = "json" if path.suffix.lower() == ".json" else "toml"
    return parse_config(path.read_text(), fmt)


def dumps_config(cfg: PipelineConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
