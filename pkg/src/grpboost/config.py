"""Flat key=value configuration files.

Format: one ``section.key = value`` per line, ``#`` comments, blank
lines ignored. Values are plain strings; typed accessors do the
parsing so error messages can carry the key name. Lists are
comma-separated.
"""
from __future__ import annotations

import os

import numpy as np

from .boosting import TrainConfig
from .data import _atomic_write
from .errors import ConfigError


class ConfigMap:
    def __init__(self, entries: dict[str, str], source: str = "<memory>"):
        self.entries = dict(entries)
        self.source = source
        self._used: set[str] = set()

    @classmethod
    def parse(cls, text: str, source: str = "<memory>") -> "ConfigMap":
        entries: dict[str, str] = {}
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(
                    f"{source}: line {ln}: expected key = value, "
                    f"got {raw.strip()!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ConfigError(f"{source}: line {ln}: empty key")
            if key in entries:
                raise ConfigError(
                    f"{source}: line {ln}: duplicate key {key!r}")
            entries[key] = value.strip()
        return cls(entries, source)

    @classmethod
    def load(cls, path: str) -> "ConfigMap":
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} does not exist")
        with open(path, "r", encoding="utf-8") as f:
            return cls.parse(f.read(), source=path)

    def save(self, path: str) -> None:
        lines = [f"{k} = {self.entries[k]}" for k in sorted(self.entries)]
        _atomic_write(path, "\n".join(lines) + "\n")

    # -- typed accessors ------------------------------------------------
    def _raw(self, key: str, default=None, required: bool = False) -> str | None:
        if key in self.entries:
            self._used.add(key)
            return self.entries[key]
        if required:
            raise ConfigError(f"{self.source}: missing required key {key!r}")
        return default

    def get_str(self, key: str, default: str | None = None,
                required: bool = False) -> str | None:
        return self._raw(key, default, required)

    def get_float(self, key: str, default: float | None = None,
                  required: bool = False) -> float | None:
        raw = self._raw(key, None, required)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{self.source}: key {key!r}: "
                              f"{raw!r} is not a number")

    def get_int(self, key: str, default: int | None = None,
                required: bool = False) -> int | None:
        raw = self._raw(key, None, required)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{self.source}: key {key!r}: "
                              f"{raw!r} is not an integer")

    def get_bool(self, key: str, default: bool = False) -> bool:
        raw = self._raw(key)
        if raw is None:
            return default
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{self.source}: key {key!r}: {raw!r} is not "
                          f"a boolean")

    def get_int_list(self, key: str, default=None,
                     required: bool = False) -> np.ndarray | None:
        raw = self._raw(key, None, required)
        if raw is None:
            return None if default is None else np.asarray(default, dtype=int)
        try:
            return np.array([int(p) for p in raw.split(",") if p.strip() != ""],
                            dtype=int)
        except ValueError:
            raise ConfigError(f"{self.source}: key {key!r}: expected a "
                              f"comma-separated integer list, got {raw!r}")

    def train_config(self, prefix: str, seed: int = 0) -> TrainConfig:
        """Boosting settings under e.g. ``fit.occurrence.``."""
        return TrainConfig(
            n_trees=self.get_int(f"{prefix}.n_trees", 200),
            max_depth=self.get_int(f"{prefix}.max_depth", 6),
            learning_rate=self.get_float(f"{prefix}.learning_rate", 0.05),
            lam=self.get_float(f"{prefix}.lam", 1.0),
            gamma_complexity=self.get_float(f"{prefix}.gamma_complexity", 0.0),
            min_child_hessian=self.get_float(f"{prefix}.min_child_hessian", 1.0),
            seed=self.get_int(f"{prefix}.seed", seed),
        )

    def unused_keys(self) -> list[str]:
        return sorted(set(self.entries) - self._used)
