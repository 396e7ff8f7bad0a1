"""Experiment configuration: one JSON document per run, with CLI overrides."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

SUBCOMMANDS = (
    "solomon", "simulate", "exit-prob", "check-pbox", "decay", "slab-decay", "rho",
    "effective-criterion", "schedule", "audit-constants", "renorm", "coloring",
    "quenched-tail", "binomial-bound",
)

# fields each subcommand cannot run without (seed is checked separately)
REQUIRED = {
    "solomon": ("law",),
    "simulate": ("law", "steps"),
    "exit-prob": ("law", "region", "start"),
    "check-pbox": ("law", "N0", "M"),
    "decay": ("law", "b", "L_list"),
    "slab-decay": ("law", "L"),
    "rho": ("law", "L", "a"),
    "effective-criterion": ("law", "L_grid"),
    "schedule": ("L", "d", "kappa"),
    "audit-constants": ("d", "N0"),
    "renorm": ("law", "N0", "k"),
    "coloring": ("n", "d", "index_lo", "index_hi"),
    "quenched-tail": ("law", "L", "beta"),
    "binomial-bound": ("n_max",),
}

DEFAULTS = {
    "trials": 10_000,
    "env_trials": 100,
    "threads": 1,
    "step_cap": 1_000_000,
    "format": "jsonl",
    "strict": False,
}

FLAG_FIELDS = ("seed", "trials", "env_trials", "threads", "step_cap", "out", "format", "strict")


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


@dataclass
class ExperimentConfig:
    command: str
    seed: int
    params: dict = field(default_factory=dict)

    def get(self, key: str, default: Any = None) -> Any:
        return self.params.get(key, default)

    def __getitem__(self, key: str) -> Any:
        try:
            return self.params[key]
        except KeyError:
            raise ConfigError(f"{self.command}: missing field {key!r}") from None

    @property
    def trials(self) -> int:
        return int(self.params["trials"])

    @property
    def env_trials(self) -> int:
        return int(self.params["env_trials"])

    @property
    def threads(self) -> int:
        return int(self.params["threads"])

    @property
    def step_cap(self) -> int:
        return int(self.params["step_cap"])

    def canonical(self) -> dict:
        """Fields that determine results (output and threading excluded)."""
        skip = {"out", "format", "strict", "threads"}
        body = {k: v for k, v in self.params.items() if k not in skip}
        return {"command": self.command, "seed": self.seed, **body}

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {"command": self.command, "seed": self.seed, **self.params}


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def build_config(command: str, document: Mapping | None = None, overrides: Mapping | None = None) -> ExperimentConfig:
    """Merge a JSON document with flag overrides (flags win) and validate."""
    if command not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {command!r}")
    merged = dict(DEFAULTS)
    merged.update(document or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    merged.pop("command", None)
    seed = merged.pop("seed", None)
    if seed is None:
        raise ConfigError("seed is mandatory")
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer") from None
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    missing = [k for k in REQUIRED[command] if k not in merged]
    if missing:
        raise ConfigError(f"{command}: missing required field(s) {', '.join(missing)}")
    for key in ("trials", "env_trials", "threads", "step_cap"):
        if int(merged[key]) < 1:
            raise ConfigError(f"{key} must be positive")
    if merged["format"] not in ("csv", "jsonl"):
        raise ConfigError("format must be csv or jsonl")
    return ExperimentConfig(command, seed, merged)
