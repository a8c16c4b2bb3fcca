"""Run configuration: flat key-value text with sections (INI style).

Paths resolve relative to the config file's directory.  Every stochastic
choice in a command is driven by [common] seed, so a config plus a seed
pins a run exactly.
"""

from __future__ import annotations

import configparser
import os

__all__ = ["RunConfig", "load_config"]


class RunConfig:
    def __init__(self, parser: configparser.ConfigParser, base_dir: str):
        self._parser = parser
        self.base_dir = base_dir
        self._overrides: dict[tuple[str, str], str] = {}

    def override(self, section: str, key: str, value) -> None:
        self._overrides[(section, key)] = str(value)

    def _raw(self, section: str, key: str, default=None):
        if (section, key) in self._overrides:
            return self._overrides[(section, key)]
        if self._parser.has_option(section, key):
            return self._parser.get(section, key)
        return default

    def get_str(self, section: str, key: str, default: str | None = None) -> str:
        val = self._raw(section, key, default)
        if val is None:
            raise KeyError(f"missing config value [{section}] {key}")
        return str(val)

    def get_int(self, section: str, key: str, default: int | None = None) -> int:
        return int(self.get_str(section, key, None if default is None else str(default)))

    def get_float(self, section: str, key: str, default: float | None = None) -> float:
        return float(self.get_str(section, key, None if default is None else str(default)))

    def get_bool(self, section: str, key: str, default: bool = False) -> bool:
        return self.get_str(section, key, str(default)).strip().lower() in ("1", "true", "yes", "on")

    def get_floats(self, section: str, key: str, default: str | None = None) -> tuple:
        return tuple(float(v) for v in self.get_str(section, key, default).split(","))

    def get_ints(self, section: str, key: str, default: str | None = None) -> tuple:
        return tuple(int(v) for v in self.get_str(section, key, default).split(","))

    def path(self, key: str, default: str | None = None) -> str:
        raw = self.get_str("paths", key, default)
        return raw if os.path.isabs(raw) else os.path.join(self.base_dir, raw)

    @property
    def seed(self) -> int:
        return self.get_int("common", "seed", 0)


def load_config(path: str) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    return RunConfig(parser, os.path.dirname(os.path.abspath(path)))
