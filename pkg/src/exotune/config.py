"""Run configuration: defaults, JSON config files, and flag overrides.

Precedence is flags over file over defaults. Unknown keys anywhere in
the file are rejected so a typo cannot silently fall back to a default;
a run is then fully pinned by (config, seed).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .datastore import RewardConfig
from .learner import TrainConfig
from .simulator import SimConfig, ThresholdGrid, VirtualUserConfig

COLLECT_TASKS = ("vertical", "horizontal", "both")


class ConfigError(Exception):
    """Raised for unusable run configuration (unknown keys, bad values, bad files)."""


@dataclass(frozen=True)
class GridSpec:
    """Threshold sweep as low:high:step per axis (same values for both muscles)."""

    low: float = 20.0
    high: float = 50.0
    step: float = 5.0

    def to_grid(self) -> ThresholdGrid:
        try:
            return ThresholdGrid.from_range(self.low, self.high, self.step)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid must look like low:high:step, got {text!r}")
        try:
            low, high, step = (float(p) for p in parts)
        except ValueError as exc:
            raise ConfigError(f"grid values must be numeric: {text!r}") from exc
        return cls(low=low, high=high, step=step)


@dataclass(frozen=True)
class CollectConfig:
    episodes_per_cell: int = 10
    episode_s: float = 40.0


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 20
    episode_s: float = 40.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    task: str = "vertical"
    sim: SimConfig = field(default_factory=SimConfig)
    user: VirtualUserConfig = field(default_factory=lambda: VirtualUserConfig(task="vertical"))
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    collect: CollectConfig = field(default_factory=CollectConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self) -> None:
        if self.task not in COLLECT_TASKS:
            raise ConfigError(f"task must be one of {COLLECT_TASKS}, got {self.task!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not (
            self.sim.angle_min <= self.user.angle_low
            and self.user.angle_high <= self.sim.angle_max
        ):
            raise ConfigError("user trajectory angles must sit inside the joint limits")

    def as_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "sim": SimConfig,
    "user": VirtualUserConfig,
    "reward": RewardConfig,
    "train": TrainConfig,
    "grid": GridSpec,
    "collect": CollectConfig,
    "eval": EvalConfig,
}
_SCALARS = ("seed", "task")


def _build_section(name: str, cls, raw: dict, task: str):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    kwargs = dict(raw)
    if name == "user":
        # the user's task is owned by the top-level task field
        kwargs.pop("task", None)
        kwargs["task"] = "vertical" if task == "both" else task
    if name == "train" and "hidden_sizes" in kwargs:
        kwargs["hidden_sizes"] = tuple(kwargs["hidden_sizes"])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, an optional JSON file, and flag overrides into a RunConfig.

    `overrides` uses dotted keys for section fields ("train.steps") and
    bare keys for top-level scalars ("seed", "task", "grid").
    """
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")

    unknown = set(raw) - set(_SECTIONS) - set(_SCALARS)
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")

    merged: dict = {k: dict(raw.get(k, {})) for k in _SECTIONS}
    scalars = {k: raw[k] for k in _SCALARS if k in raw}

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in _SCALARS:
            scalars[key] = value
        elif key == "grid" and isinstance(value, str):
            spec = GridSpec.parse(value)
            merged["grid"] = {"low": spec.low, "high": spec.high, "step": spec.step}
        elif "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ConfigError(f"unknown override section: {section!r}")
            merged[section][name] = value
        else:
            raise ConfigError(f"unknown override: {key!r}")

    task = str(scalars.get("task", "vertical"))
    if task not in COLLECT_TASKS:
        raise ConfigError(f"task must be one of {COLLECT_TASKS}, got {task!r}")
    try:
        seed = int(scalars.get("seed", 0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed must be an integer: {scalars.get('seed')!r}") from exc
    if "seed" not in merged["train"]:
        merged["train"]["seed"] = seed  # training inherits the run seed by default
    sections = {
        name: _build_section(name, cls, merged[name], task)
        for name, cls in _SECTIONS.items()
    }
    return RunConfig(seed=seed, task=task, **sections)
