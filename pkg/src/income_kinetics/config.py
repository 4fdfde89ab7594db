"""Group parameters and the ``[group:NAME]`` configuration file."""

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LinearSchedule:
    """Value moving linearly between two calendar years, flat outside them."""

    start_year: float
    start_value: float
    end_year: float
    end_value: float

    @classmethod
    def constant(cls, value):
        return cls(0.0, value, 1.0, value)

    def __call__(self, year):
        if self.start_value == self.end_value:
            return self.start_value
        frac = np.clip((np.asarray(year, dtype=float) - self.start_year)
                       / (self.end_year - self.start_year), 0.0, 1.0)
        value = self.start_value + frac * (self.end_value - self.start_value)
        return float(value) if value.ndim == 0 else value

    def value_range(self):
        return min(self.start_value, self.end_value), max(self.start_value, self.end_value)


@dataclass(frozen=True)
class DecayAnchor:
    """Relative income level ``level_a`` reached by the top cell at age ``age_ta``.

    Not to be confused with the instrument size ``GroupConfig.a_min``.
    """

    level_a: float = 0.3
    age_ta: float = 75.0


@dataclass(frozen=True)
class RetirementAnchor:
    level_b: float = 0.4
    age_tb: float = 74.0
    ts: float = 64.0


@dataclass(frozen=True)
class GroupConfig:
    name: str = "all"
    alpha_tilde: float = 0.06
    sigma_min: float = 1.0
    a_min: float = 1.0
    tc0: float = 20.0
    pareto_threshold_schedule: LinearSchedule = field(
        default_factory=lambda: LinearSchedule.constant(0.43)
    )
    fl_schedule: LinearSchedule = field(default_factory=lambda: LinearSchedule.constant(1.0))
    decay_anchor: DecayAnchor = field(default_factory=DecayAnchor)
    retirement_anchor: RetirementAnchor = field(default_factory=RetirementAnchor)
    work_start_age: int = 15
    max_age: int = 85
    pareto_tail_exponent: float = 3.5
    cohort_size: float = 1e5

    @property
    def max_experience(self):
        return self.max_age - self.work_start_age

    def validate(self):
        """Check parameter invariants; raises ConfigError listing every violation."""
        problems = []
        for name in ("alpha_tilde", "sigma_min", "a_min", "tc0", "cohort_size"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                problems.append(f"{name} must be positive, got {value!r}")
        lo, hi = self.fl_schedule.value_range()
        if not (0 < lo and hi <= 1):
            problems.append(f"FL schedule must stay in (0, 1], got [{lo}, {hi}]")
        lo, hi = self.pareto_threshold_schedule.value_range()
        if not (0 < lo and hi < 1):
            problems.append(f"Pareto threshold schedule must stay in (0, 1), got [{lo}, {hi}]")
        da, ra = self.decay_anchor, self.retirement_anchor
        if not 0 < da.level_a < 1:
            problems.append(f"decay level_a must be in (0, 1), got {da.level_a!r}")
        if not da.age_ta > self.work_start_age:
            problems.append("decay anchor age must exceed the work start age")
        if not 0 < ra.level_b < 1:
            problems.append(f"retirement level_b must be in (0, 1), got {ra.level_b!r}")
        if not ra.age_tb > ra.ts:
            problems.append("retirement anchor age T_B must exceed T_S")
        if not self.pareto_tail_exponent > 1:
            problems.append("Pareto tail exponent must exceed 1 for a finite mean")
        if self.max_age <= self.work_start_age:
            problems.append("max_age must exceed work_start_age")
        if problems:
            raise ConfigError(f"group {self.name!r}: " + "; ".join(problems))
        return self


def female_config(name="female", **overrides):
    """Female defaults: instrument factor 0.45 -> 0.65 (1962-2014), threshold 0.29 -> 0.39 (1960-2014)."""
    cfg = GroupConfig(
        name=name,
        fl_schedule=LinearSchedule(1962, 0.45, 2014, 0.65),
        pareto_threshold_schedule=LinearSchedule(1960, 0.29, 2014, 0.39),
    )
    return with_parameters(cfg, overrides) if overrides else cfg


def male_config(name="male", **overrides):
    cfg = GroupConfig(name=name)
    return with_parameters(cfg, overrides) if overrides else cfg


# Flat parameter names usable in config files and calibration problems.
PARAMETER_PATHS = {
    "alpha_tilde": ("alpha_tilde",),
    "sigma_min": ("sigma_min",),
    "a_min": ("a_min",),
    "tc0": ("tc0",),
    "work_start_age": ("work_start_age",),
    "max_age": ("max_age",),
    "pareto_tail_exponent": ("pareto_tail_exponent",),
    "cohort_size": ("cohort_size",),
    "fl_start_year": ("fl_schedule", "start_year"),
    "fl_start": ("fl_schedule", "start_value"),
    "fl_end_year": ("fl_schedule", "end_year"),
    "fl_end": ("fl_schedule", "end_value"),
    "threshold_start_year": ("pareto_threshold_schedule", "start_year"),
    "threshold_start": ("pareto_threshold_schedule", "start_value"),
    "threshold_end_year": ("pareto_threshold_schedule", "end_year"),
    "threshold_end": ("pareto_threshold_schedule", "end_value"),
    "level_a": ("decay_anchor", "level_a"),
    "age_ta": ("decay_anchor", "age_ta"),
    "level_b": ("retirement_anchor", "level_b"),
    "age_tb": ("retirement_anchor", "age_tb"),
    "ts": ("retirement_anchor", "ts"),
}
_INT_PARAMETERS = {"work_start_age", "max_age"}
# Shorthands that set both ends of a schedule.
_SCHEDULE_SHORTHANDS = ("fl", "threshold")


def get_parameter(cfg, name):
    if name == "capacity":
        return cfg.sigma_min * cfg.a_min
    try:
        path = PARAMETER_PATHS[name]
    except KeyError:
        raise ConfigError(f"unknown parameter {name!r}") from None
    obj = cfg
    for attr in path:
        obj = getattr(obj, attr)
    return obj


def with_parameters(cfg, values):
    """Return a copy of ``cfg`` with flat-named parameters replaced.

    ``capacity`` sets the product ``sigma_min * a_min`` by adjusting
    ``sigma_min``; it is applied after ``a_min``.
    """
    values = dict(values)
    capacity = values.pop("capacity", None)
    for key in list(values):
        if key in _SCHEDULE_SHORTHANDS:
            v = values.pop(key)
            values.setdefault(f"{key}_start", v)
            values.setdefault(f"{key}_end", v)
    top, nested = {}, {}
    for name, value in values.items():
        if name == "name":
            top["name"] = str(value)
            continue
        try:
            path = PARAMETER_PATHS[name]
        except KeyError:
            raise ConfigError(f"unknown parameter {name!r}") from None
        if name in _INT_PARAMETERS:
            value = int(value)
        else:
            value = float(value)
        if len(path) == 1:
            top[path[0]] = value
        else:
            nested.setdefault(path[0], {})[path[1]] = value
    for attr, changes in nested.items():
        top[attr] = replace(getattr(cfg, attr), **changes)
    cfg = replace(cfg, **top)
    if capacity is not None:
        cfg = replace(cfg, sigma_min=float(capacity) / cfg.a_min)
    return cfg


_PRESETS = {"male": male_config, "female": female_config, "default": GroupConfig}


def parse_config(text, source="<string>"):
    """Parse a configuration text into ``{group name: GroupConfig}``.

    Sections other than ``[group:NAME]`` are collected under the ``run`` key
    of the second return value.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(source))
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    groups = {}
    settings = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section.startswith("group:"):
            name = section.split(":", 1)[1].strip()
            if not name:
                raise ConfigError(f"{source}: empty group name in [{section}]")
            preset = items.pop("preset", "default").strip()
            try:
                base = _PRESETS[preset](name=name)
            except KeyError:
                raise ConfigError(
                    f"{source}: unknown preset {preset!r} in [{section}]; "
                    f"valid: {', '.join(sorted(_PRESETS))}"
                ) from None
            try:
                cfg = with_parameters(base, items)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}]: {exc}") from exc
            groups[name] = cfg.validate()
        else:
            settings[section] = items
    if not groups:
        raise ConfigError(f"{source}: no [group:NAME] section found")
    return groups, settings


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), source=path)


def format_config(cfg):
    """Inverse of ``parse_config`` for one group (every parameter spelled out)."""
    lines = [f"[group:{cfg.name}]"]
    for name in PARAMETER_PATHS:
        lines.append(f"{name} = {get_parameter(cfg, name)!r}")
    return "\n".join(lines) + "\n"
