"""Machine configuration, loaded from an INI file.

Every key is optional; missing keys keep the defaults below.  See
``data/default.ini`` for the full list.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path

__all__ = ["ConfigError", "Config", "load_config", "default_config_text"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    # [timing]
    cycle_ns: int = 5
    ctpg_delay_cycles: int = 16
    measurement_delay_cycles: int = 16
    queue_capacity: int = 4096
    # [ssb]
    frequency_hz: float = -50e6
    reference_ns: float = 0.0
    # [qubit]
    t1_ns: float = 20000.0
    # [readout]
    mu0: float = 0.1
    mu1: float = 0.9
    sigma: float = 0.0
    threshold: float | None = None
    integration_cycles: int = 300
    # [files]
    lookup_table: str | None = None
    microprograms: str | None = None
    # [execution]
    memory_words: int = 65536
    max_steps: int = 10**9

    def __post_init__(self):
        if self.cycle_ns <= 0:
            raise ConfigError("cycle_ns must be positive")
        if self.ctpg_delay_cycles < 0 or self.measurement_delay_cycles < 0:
            raise ConfigError("delays must be non-negative")
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")
        if self.t1_ns <= 0:
            raise ConfigError("t1_ns must be positive")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if self.integration_cycles < 0:
            raise ConfigError("integration_cycles must be non-negative")
        if self.memory_words < 1 or self.max_steps < 1:
            raise ConfigError("memory_words and max_steps must be positive")

    def with_(self, **changes) -> "Config":
        return replace(self, **changes)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {
    "timing": ("cycle_ns", "ctpg_delay_cycles", "measurement_delay_cycles", "queue_capacity"),
    "ssb": ("frequency_hz", "reference_ns"),
    "qubit": ("t1_ns",),
    "readout": ("mu0", "mu1", "sigma", "threshold", "integration_cycles"),
    "files": ("lookup_table", "microprograms"),
    "execution": ("memory_words", "max_steps"),
}
_TYPES = {f.name: f.type for f in fields(Config)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    if kind == "str | None":
        return raw or None
    if kind == "float | None":
        return None if raw.lower() in ("", "none", "auto") else float(raw)
    if kind == "int":
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    return float(raw)


def load_config(path=None, **overrides) -> Config:
    """Read ``path`` (INI).  Relative file paths resolve against its directory."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SECTIONS[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                try:
                    values[key] = _convert(key, raw)
                except ValueError:
                    raise ConfigError(f"{path}: bad value {raw!r} for {key}") from None
        for key in ("lookup_table", "microprograms"):
            if values.get(key):
                p = Path(values[key])
                values[key] = str(p if p.is_absolute() else path.parent / p)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Config(**values)


def default_config_text() -> str:
    return resources.files("quma").joinpath("data/default.ini").read_text()
