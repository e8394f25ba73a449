"""Configuration files and record codecs.

Experiment settings live in a TOML file with one table per parameter group
(robot, controller weights, force field, lean mapping, feedback, operator,
run limits, plan). Every key has a default, so a minimal file is valid; an
unknown key is an error rather than a silent ignore. The same dict codecs
serialize configurations into trial records so a record is replayable on
its own.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import LqrWeights, PdGains, WipParams
from .engine import EngineConfig
from .forcefield import ForceParams
from .operators import SyntheticOperator
from .sharedcontrol import FeedbackConfig, FeedbackMode, VelocityMapping
from .worlds import MAP_BUILDERS

CONFIG_SCHEMA_VERSION = 1

# TOML table name -> EngineConfig field and dataclass
_GROUPS = {
    "robot": ("wip", WipParams),
    "lqr": ("weights", LqrWeights),
    "yaw_pd": ("pd", PdGains),
    "force": ("force", ForceParams),
    "mapping": ("mapping", VelocityMapping),
    "operator": ("operator", SyntheticOperator),
}
_RUN_KEYS = ("dt", "timeout_s", "stall_timeout_s", "robot_radius",
             "trajectory_stride", "contact_hysteresis")


class ConfigError(ValueError):
    """A config document does not match the documented key set."""


def _build(cls, doc: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{where}]: {exc}") from exc


def _feedback_from_dict(doc: dict) -> FeedbackConfig:
    doc = dict(doc)
    mode_name = doc.pop("mode", "none")
    try:
        mode = FeedbackMode(mode_name)
    except ValueError:
        valid = [m.value for m in FeedbackMode]
        raise ConfigError(f"unknown feedback mode {mode_name!r}; one of {valid}")
    act = doc.pop("activation_command", 2.0)
    act_h = doc.pop("activation_haptic", None)
    if doc:
        raise ConfigError(f"unknown keys in [feedback]: {sorted(doc)}")
    if act_h is None:
        return FeedbackConfig.for_mode(mode, activation_command=act)
    return _build(FeedbackConfig,
                  {"mode": mode, "activation_command": act,
                   "activation_haptic": act_h}, "feedback")


def engine_config_from_dict(doc: dict) -> EngineConfig:
    """Build an EngineConfig from a plain (TOML/JSON) document."""
    doc = dict(doc)
    kwargs = {}
    for table, (attr, cls) in _GROUPS.items():
        if table in doc:
            kwargs[attr] = _build(cls, doc.pop(table), table)
    if "feedback" in doc:
        kwargs["feedback"] = _feedback_from_dict(doc.pop("feedback"))
    run = doc.pop("run", {})
    unknown_run = set(run) - set(_RUN_KEYS)
    if unknown_run:
        raise ConfigError(f"unknown keys in [run]: {sorted(unknown_run)}")
    kwargs.update(run)
    doc.pop("plan", None)
    doc.pop("schema_version", None)
    if doc:
        raise ConfigError(f"unknown top-level tables: {sorted(doc)}")
    try:
        return EngineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid engine configuration: {exc}") from exc


def engine_config_to_dict(cfg: EngineConfig) -> dict:
    """Plain-dict image of a configuration, replayable via from_dict."""
    doc: dict = {"schema_version": CONFIG_SCHEMA_VERSION}
    for table, (attr, _) in _GROUPS.items():
        doc[table] = dataclasses.asdict(getattr(cfg, attr))
    fb = cfg.feedback
    doc["feedback"] = {"mode": fb.mode.value,
                       "activation_command": fb.activation_command,
                       "activation_haptic": fb.activation_haptic}
    doc["run"] = {k: getattr(cfg, k) for k in _RUN_KEYS}
    return doc


@dataclass(frozen=True)
class PlanSettings:
    """Which trials an experiment runs and where results go."""

    maps: tuple[str, ...] = ("s1static", "s1dynamic", "s2bright", "s2dark", "s2dyn")
    modes: tuple[FeedbackMode, ...] = (FeedbackMode.NONE, FeedbackMode.HAPTIC,
                                       FeedbackMode.COMMAND, FeedbackMode.COMBINED)
    trials_static: int = 5
    trials_dynamic: int = 10
    base_seed: int = 0
    out_dir: str = "results"
    include_trajectory: bool = False

    def __post_init__(self):
        unknown = [m for m in self.maps if m not in MAP_BUILDERS]
        if unknown:
            raise ConfigError(
                f"unknown maps {unknown}; available: {sorted(MAP_BUILDERS)}")
        if self.trials_static < 1 or self.trials_dynamic < 1:
            raise ConfigError("trial counts must be positive")
        if len(set(self.modes)) != len(self.modes):
            raise ConfigError("duplicate modes in plan")


def _plan_from_dict(doc: dict) -> PlanSettings:
    doc = dict(doc)
    if "maps" in doc:
        doc["maps"] = tuple(doc["maps"])
    if "modes" in doc:
        try:
            doc["modes"] = tuple(FeedbackMode(m) for m in doc["modes"])
        except ValueError as exc:
            raise ConfigError(f"invalid [plan] modes: {exc}") from exc
    known = {f.name for f in dataclasses.fields(PlanSettings)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys in [plan]: {sorted(unknown)}")
    return PlanSettings(**doc)


@dataclass(frozen=True)
class ExperimentSettings:
    engine: EngineConfig = field(default_factory=EngineConfig)
    plan: PlanSettings = field(default_factory=PlanSettings)


def load_experiment(path: str | Path) -> ExperimentSettings:
    """Parse a TOML experiment file into settings."""
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    plan = _plan_from_dict(doc.get("plan", {}))
    engine = engine_config_from_dict(doc)
    return ExperimentSettings(engine=engine, plan=plan)
