"""Declarative experiment configuration (YAML) with full defaults."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .control import PRESETS
from .functional import ROUTES, TOGGLES, VARIANTS


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class MeshConfig:
    n: int = 32                                              # single-run commands
    sizes: list[int] = field(default_factory=lambda: [8, 16, 32, 64])   # convergence study
    control_cells: list[int] | None = None                   # sigma; None ties it to h
    degree: int = 4


@dataclass
class ControlConfig:
    initial: str = "parabolic"          # preset name or path to an x,q CSV
    target: str = "target"              # q_d for the tracking functional


@dataclass
class DataConfig:
    preset: str = "default"
    nu: float = 1.0
    eta: float = 0.0


@dataclass
class FunctionalConfig:
    variant: str = "perimeterEnergy"
    alpha: float = 10.0
    beta: float = 10000.0
    vbar: float | None = None           # explicit target area
    vbar_fraction: float = 0.7          # otherwise this fraction of the area under vbar_reference
    vbar_reference: str = "parabolic"
    toggle: str = "gradientCorrected"


@dataclass
class OptimizerSection:
    eps_hat: float = 0.1
    eps_min: float = 1e-8
    max_iters: int = 100
    gtol: float = 0.0
    route: str = "auto"
    reuse_factorization: bool = True


@dataclass
class ConvergeConfig:
    alphas: list[float] = field(default_factory=lambda: [0.0, 0.01, 0.1, 1.0])
    initial: str = "flat"
    gtol: float = 5e-4
    max_iters: int = 400
    nested: bool = True                 # start each level from the previous optimum
    exclude_saturated: bool = True


@dataclass
class SweepConfig:
    parameter: str = "alpha"
    values: list[float] = field(default_factory=lambda: [0.1, 10.0, 1000.0])


@dataclass
class OutputConfig:
    dir: str = "out"
    physical: bool = True               # extra solution CSV on the physical domain
    gnuplot: bool = True


@dataclass
class ExperimentConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    data: DataConfig = field(default_factory=DataConfig)
    functional: FunctionalConfig = field(default_factory=FunctionalConfig)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    converge: ConvergeConfig = field(default_factory=ConvergeConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True, default_flow_style=False)

    def validate(self) -> "ExperimentConfig":
        m = self.mesh
        if m.n < 1:
            raise ConfigError("mesh.n must be positive")
        if not m.sizes or any(b <= a for a, b in zip(m.sizes, m.sizes[1:])) or m.sizes[0] < 1:
            raise ConfigError("mesh.sizes must be a nonempty ascending list of positive integers")
        if m.control_cells is not None and len(m.control_cells) != len(m.sizes):
            raise ConfigError("mesh.control_cells must match mesh.sizes in length")
        f = self.functional
        if f.variant not in VARIANTS:
            raise ConfigError(f"functional.variant must be one of {VARIANTS}")
        if f.toggle not in TOGGLES:
            raise ConfigError(f"functional.toggle must be one of {TOGGLES}")
        if f.alpha < 0 or f.beta < 0:
            raise ConfigError("functional.alpha and functional.beta must be non-negative")
        o = self.optimizer
        if not 0.0 < o.eps_min < o.eps_hat:
            raise ConfigError("need 0 < optimizer.eps_min < optimizer.eps_hat")
        if o.route != "auto" and o.route not in ROUTES:
            raise ConfigError(f"optimizer.route must be 'auto' or one of {ROUTES}")
        if self.data.preset != "default":
            raise ConfigError("data.preset: only 'default' is available")
        if self.sweep.parameter not in ("alpha", "beta"):
            raise ConfigError("sweep.parameter must be 'alpha' or 'beta'")
        for name in (self.control.target, f.vbar_reference):
            if name not in PRESETS:
                raise ConfigError(f"unknown control preset {name!r}")
        return self


def _merge(base: dict, update: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in out:
            raise ConfigError(f"unknown config key {where + key!r}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {where + key!r} must be a mapping")
            out[key] = _merge(out[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def _build(raw: dict) -> ExperimentConfig:
    sections = {}
    for f in fields(ExperimentConfig):
        cls = type(getattr(ExperimentConfig(), f.name))
        try:
            sections[f.name] = cls(**raw[f.name])
        except TypeError as exc:
            raise ConfigError(f"section {f.name!r}: {exc}") from None
    return ExperimentConfig(**sections)


# Named starting points; a config file may select one with ``preset:``.
PRESET_OVERRIDES: dict[str, dict] = {
    "testcase1": {"functional": {"variant": "perimeterEnergy", "alpha": 10.0, "beta": 10000.0}},
    "testcase2": {"functional": {"variant": "perimeterTracking", "alpha": 0.0, "beta": 0.0},
                  "control": {"initial": "flat"}},
    "alpha-sweep": {"functional": {"beta": 0.0},
                    "sweep": {"parameter": "alpha", "values": [0.1, 10.0, 1000.0]}},
    "beta-sweep": {"functional": {"alpha": 0.0},
                   "sweep": {"parameter": "beta", "values": [1.0, 100.0, 10000.0]}},
}


def resolve_config(raw: dict | None = None) -> ExperimentConfig:
    """Defaults, then an optional named preset, then explicit entries."""
    raw = dict(raw or {})
    merged = ExperimentConfig().to_dict()
    name = raw.pop("preset", None)
    if name is not None:
        if name not in PRESET_OVERRIDES:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESET_OVERRIDES)}")
        merged = _merge(merged, PRESET_OVERRIDES[name])
    merged = _merge(merged, raw)
    return _build(merged).validate()


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return resolve_config({})
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    return resolve_config(raw)
