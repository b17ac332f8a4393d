"""Flat ``section.key=value`` run configuration.

Blank lines and lines starting with ``#`` are ignored.  Sections map onto
the dataclasses of the simulation stages; ``run.*`` holds the pulse count
and seed and ``output.*`` the file names written by the commands.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .detection import DetectorConfig, _atomic_write_text
from .interface import InterfaceConfig
from .source import InvalidParameter, SourceConfig
from .tomography import TomographyPlan


class ConfigError(ValueError):
    """Malformed configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class RunSettings:
    pulses: int = 4_000_000
    seed: int = 1

    def __post_init__(self):
        if self.pulses < 0:
            raise InvalidParameter("pulses", "must be >= 0")


@dataclass(frozen=True)
class OutputPaths:
    tags: str = "tags.csv"
    histogram: str = "g2_histogram.csv"
    counts: str = "counts.csv"
    report: str = "report.txt"
    table: str = "reproduce.csv"


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    source: SourceConfig = field(default_factory=SourceConfig)
    interface: InterfaceConfig = field(default_factory=InterfaceConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    tomography: TomographyPlan = field(default_factory=TomographyPlan)
    output: OutputPaths = field(default_factory=OutputPaths)

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def n_pulses(self) -> int:
        return self.run.pulses

    def with_overrides(self, **sections) -> "RunConfig":
        """Replace individual fields, e.g. ``with_overrides(run={"seed": 3})``."""
        changes = {}
        for name, values in sections.items():
            changes[name] = dataclasses.replace(getattr(self, name), **values)
        return dataclasses.replace(self, **changes)


SECTIONS = {f.name: f for f in fields(RunConfig)}
SKIPPED_FIELDS = {"tomography": {"settings"}}


def _section_fields(section: str):
    cls = type(getattr(RunConfig(), section))
    return {f.name: f for f in fields(cls) if f.name not in SKIPPED_FIELDS.get(section, ())}


def _parse_value(key: str, raw: str, current):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError("expected true or false")
            return raw.lower() == "true"
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float) or current is None:
            if current is None and raw.lower() in ("", "auto", "none"):
                return None
            value = float(raw)
            if math.isnan(value):
                raise ValueError("NaN is not allowed")
            return value
        return raw
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {raw!r}: {exc}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    updates: dict[str, dict] = {}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(key, "duplicate key")
        seen.add(key)
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(key, "unknown section")
        known = _section_fields(section)
        if name not in known:
            raise ConfigError(key, "unknown key")
        updates.setdefault(section, {})[name] = _parse_value(key, raw, getattr(getattr(base, section), name))
    return build_config(base, updates)


def build_config(base: RunConfig, updates: dict[str, dict]) -> RunConfig:
    changes = {}
    for section, values in updates.items():
        try:
            changes[section] = dataclasses.replace(getattr(base, section), **values)
        except InvalidParameter as exc:
            raise ConfigError(f"{section}.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    return dataclasses.replace(base, **changes)


def _format_value(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for name in _section_fields(section):
            lines.append(f"{section}.{name}={_format_value(getattr(obj, name))}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(path, cfg: RunConfig) -> None:
    _atomic_write_text(Path(path), serialize_config(cfg))


def default_config_text() -> str:
    """Text of the shipped calibrated configuration."""
    from importlib.resources import files

    return files("qdtimebin").joinpath("data/default.cfg").read_text(encoding="utf-8")


def default_config() -> RunConfig:
    return parse_config(default_config_text())
