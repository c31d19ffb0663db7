"""Experiment configuration: defaults, JSON files and command-line overrides."""
from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .baselines import BudgetPolicy
from .engine import PRESETS, HyperParams, TrainSchedule
from .ops import OperationKind
from .signals import CosineConfig, DegradationOperator, make_operator
from .spaces import SpaceSpec

__all__ = [
    "ConfigError",
    "DataConfig",
    "SpaceConfig",
    "ScheduleConfig",
    "BudgetConfig",
    "BohbConfig",
    "RunsToBeatConfig",
    "ExperimentConfig",
    "Resolved",
    "OUTPUT_DIR_ENV",
    "load_config",
    "parse_override",
    "resolve",
]

OUTPUT_DIR_ENV = "DASINV_OUTPUT_DIR"


class ConfigError(ValueError):
    """Bad configuration: unknown key, wrong type or out-of-range value."""


@dataclass
class DataConfig:
    degradation: str = "blur"
    noise_std: float = 0.01
    n: int = 50
    sigma_b: float = 0.2
    kernel_size: int = 7


@dataclass
class SpaceConfig:
    topology: str = "sequential"
    opset: str = "all"
    depth: int = 10
    cells: int = 2
    states: int = 5
    global_residual: bool = True


@dataclass
class ScheduleConfig:
    epochs: int = 50
    steps_per_epoch: int = 19
    batch_size: int = 128
    warmup_epochs: int = 10
    eval_samples: int = 2432


@dataclass
class BudgetConfig:
    mode: str = "count"
    count: int | None = 5
    seconds: float | None = None


@dataclass
class BohbConfig:
    iterations: int = 128
    objective: str = "one-shot"
    max_budget: int = 50
    eta: int = 3
    min_budget: float | None = None


@dataclass
class RunsToBeatConfig:
    threshold: float | None = None
    repetitions: int = 10
    cap: int = 200


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    space: SpaceConfig = field(default_factory=SpaceConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    hp: Any = "h1"
    method: str = "das"
    fixed_kind: str | None = None
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    bohb: BohbConfig = field(default_factory=BohbConfig)
    runs_to_beat: RunsToBeatConfig = field(default_factory=RunsToBeatConfig)
    n_trials: int = 25
    base_seed: int = 0
    parallelism: int = 1
    study: str | None = None
    output_dir: str | None = None
    arch: str | None = None
    input: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------- merging

_HP_FIELDS = {f.name for f in dataclasses.fields(HyperParams)}


def _section_class(name: str):
    default = ExperimentConfig()
    value = getattr(default, name)
    return type(value) if dataclasses.is_dataclass(value) else None


def _merge(target: dict, updates: Mapping, prefix: str = "") -> None:
    for key, value in updates.items():
        path = f"{prefix}{key}"
        if key not in target:
            raise ConfigError(f"unknown config key {path!r}")
        if key == "hp" and not prefix:
            if isinstance(value, Mapping):
                unknown = set(value) - _HP_FIELDS
                if unknown:
                    raise ConfigError(f"unknown config key 'hp.{sorted(unknown)[0]}'")
                base = target["hp"] if isinstance(target["hp"], dict) else {}
                target["hp"] = {**base, **value}
            else:
                target["hp"] = value
            continue
        if isinstance(target[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key {path!r} must be a mapping")
            _merge(target[key], value, path + ".")
        else:
            target[key] = value


def parse_override(text: str) -> dict:
    """``a.b=value`` into ``{"a": {"b": value}}``; values are JSON when they parse."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def load_config(path: str | Path | None = None, overrides: list[Mapping] | None = None) -> ExperimentConfig:
    """Defaults, then the JSON file at ``path``, then each override mapping in order."""
    merged = ExperimentConfig().to_dict()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, Mapping):
            raise ConfigError(f"config {path} must contain a JSON object")
        _merge(merged, data)
    for ov in overrides or []:
        _merge(merged, ov)
    cfg = ExperimentConfig(**{
        k: (_section_class(k)(**v) if _section_class(k) is not None else v) for k, v in merged.items()
    })
    validate(cfg)
    return cfg


# ---------------------------------------------------------------- validation


def _check_type(path: str, value, kind) -> None:
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{path} must be an integer, got {value!r}")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ConfigError(f"{path} must be a number, got {value!r}")
    if kind is bool and not isinstance(value, bool):
        raise ConfigError(f"{path} must be true or false, got {value!r}")
    if kind is str and not isinstance(value, str):
        raise ConfigError(f"{path} must be a string, got {value!r}")


def _range(path: str, value, lo=None, hi=None, kind=float, lo_open=False) -> None:
    _check_type(path, value, kind)
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"{path} must be finite, got {value!r}")
    below = value <= lo if lo_open else value < lo if lo is not None else False
    if below or (hi is not None and value > hi):
        left = "(" if lo_open else "["
        lo_s = "-inf" if lo is None else lo
        hi_s = "inf" if hi is None else hi
        raise ConfigError(f"{path}={value!r} is outside the valid range {left}{lo_s}, {hi_s}]")


def _choice(path: str, value, choices) -> None:
    if value not in choices:
        raise ConfigError(f"{path}={value!r} is not one of {', '.join(map(str, choices))}")


def validate(cfg: ExperimentConfig) -> None:
    d, s, sc = cfg.data, cfg.space, cfg.schedule
    _choice("data.degradation", d.degradation, ("blur", "downsample"))
    _range("data.noise_std", d.noise_std, 0.0, 10.0)
    _range("data.n", d.n, 8, 4096, int)
    _range("data.sigma_b", d.sigma_b, 0.0, 1e3, lo_open=True)
    _range("data.kernel_size", d.kernel_size, 1, 101, int)
    if d.kernel_size % 2 == 0:
        raise ConfigError(f"data.kernel_size={d.kernel_size} must be odd")
    _choice("space.topology", s.topology, ("sequential", "cell"))
    _check_type("space.opset", s.opset, str)
    _range("space.depth", s.depth, 1, 100, int)
    _range("space.cells", s.cells, 1, 10, int)
    _range("space.states", s.states, 2, 10, int)
    _check_type("space.global_residual", s.global_residual, bool)
    _range("schedule.epochs", sc.epochs, 1, 10_000, int)
    _range("schedule.steps_per_epoch", sc.steps_per_epoch, 1, 100_000, int)
    _range("schedule.batch_size", sc.batch_size, 1, 100_000, int)
    _range("schedule.warmup_epochs", sc.warmup_epochs, 0, 10_000, int)
    _range("schedule.eval_samples", sc.eval_samples, 1, 1_000_000, int)
    _choice("method", cfg.method, ("das", "das-single", "random", "random-search", "fixed-op", "runs-to-beat"))
    if cfg.fixed_kind is not None:
        _choice("fixed_kind", cfg.fixed_kind, ("LG", "Net"))
    _choice("budget.mode", cfg.budget.mode, ("count", "wall-clock"))
    if cfg.budget.mode == "count":
        _range("budget.count", cfg.budget.count, 1, 100_000, int)
    else:
        _range("budget.seconds", cfg.budget.seconds, 0.0, 1e7, lo_open=True)
    _range("bohb.iterations", cfg.bohb.iterations, 1, 100_000, int)
    _choice("bohb.objective", cfg.bohb.objective, ("one-shot", "architecture"))
    _range("bohb.max_budget", cfg.bohb.max_budget, 2, 10_000, int)
    _range("bohb.eta", cfg.bohb.eta, 2, 100, int)
    if cfg.bohb.min_budget is not None:
        _range("bohb.min_budget", cfg.bohb.min_budget, 0.0, cfg.bohb.max_budget, lo_open=True)
    if cfg.runs_to_beat.threshold is not None:
        _check_type("runs_to_beat.threshold", cfg.runs_to_beat.threshold, float)
    _range("runs_to_beat.repetitions", cfg.runs_to_beat.repetitions, 1, 10_000, int)
    _range("runs_to_beat.cap", cfg.runs_to_beat.cap, 1, 1_000_000, int)
    _range("n_trials", cfg.n_trials, 1, 1_000_000, int)
    _range("base_seed", cfg.base_seed, 0, 2**40, int)
    _range("parallelism", cfg.parallelism, 1, 1024, int)
    for key in ("study", "output_dir", "arch", "input"):
        if getattr(cfg, key) is not None:
            _check_type(key, getattr(cfg, key), str)
    _resolve_hp(cfg.hp)
    _resolve_spec(cfg)


# ---------------------------------------------------------------- resolution


@dataclass(frozen=True)
class Resolved:
    """Fully typed module inputs built from an ExperimentConfig."""

    config: ExperimentConfig
    op: DegradationOperator
    signals: CosineConfig
    spec: SpaceSpec
    sched: TrainSchedule
    hp: HyperParams
    hp_label: str
    budget: BudgetPolicy
    study: str
    output_dir: Path


def _resolve_hp(hp) -> tuple[HyperParams, str]:
    if isinstance(hp, str):
        if hp.lower() not in PRESETS:
            raise ConfigError(f"hp preset {hp!r} is not one of {', '.join(PRESETS)}")
        return PRESETS[hp.lower()], hp.lower()
    if isinstance(hp, Mapping):
        unknown = set(hp) - _HP_FIELDS
        if unknown:
            raise ConfigError(f"unknown config key 'hp.{sorted(unknown)[0]}'")
        for key in ("param_lr", "alpha_lr"):
            if key in hp:
                _range(f"hp.{key}", hp[key], 0.0, 10.0, lo_open=(key == "param_lr"))
        for key in ("param_wd", "alpha_wd"):
            if key in hp:
                _range(f"hp.{key}", hp[key], 0.0, 10.0)
        for key in ("param_warmup", "alpha_warmup"):
            if key in hp:
                _check_type(f"hp.{key}", hp[key], bool)
        if "alpha_scheduler" in hp:
            _choice("hp.alpha_scheduler", hp["alpha_scheduler"], ("none", "linear"))
        for key in ("alpha_optimizer", "param_optimizer"):
            if key in hp:
                _choice(f"hp.{key}", hp[key], ("gd", "adam"))
        return dataclasses.replace(PRESETS["h1"], **hp), "custom"
    raise ConfigError(f"hp must be a preset name or a mapping, got {hp!r}")


def _resolve_spec(cfg: ExperimentConfig) -> SpaceSpec:
    s = cfg.space
    try:
        if s.topology == "sequential":
            return SpaceSpec.sequential(s.opset, depth=s.depth, global_residual=s.global_residual)
        return SpaceSpec.cell(s.opset, cells=s.cells, states=s.states, global_residual=s.global_residual)
    except ValueError as exc:
        raise ConfigError(f"space: {exc}") from exc


def resolve(cfg: ExperimentConfig) -> Resolved:
    validate(cfg)
    d = cfg.data
    op = make_operator(d.degradation, n=d.n, sigma_b=d.sigma_b, size=d.kernel_size)
    signals = CosineConfig(n=d.n, noise_std=d.noise_std)
    sched = TrainSchedule(**dataclasses.asdict(cfg.schedule))
    hp, label = _resolve_hp(cfg.hp)
    b = cfg.budget
    budget = BudgetPolicy.of_count(b.count) if b.mode == "count" else BudgetPolicy.wall_clock(b.seconds)
    spec = _resolve_spec(cfg)
    study = cfg.study or f"{cfg.method}-{d.degradation}-{cfg.space.topology}-{cfg.space.opset}".replace(",", "+")
    out = Path(cfg.output_dir or os.environ.get(OUTPUT_DIR_ENV) or "runs")
    return Resolved(cfg, op, signals, spec, sched, hp, label, budget, study, out)


def fixed_kind(cfg: ExperimentConfig) -> OperationKind | None:
    return None if cfg.fixed_kind is None else OperationKind.parse(cfg.fixed_kind)
