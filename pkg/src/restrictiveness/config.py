"""Run configuration: a flat INI file validated against a fixed schema.

Every key belongs to one section. ``[kernel]`` sets the prior family for
all applications and the variance and length-scale of the lottery prior;
the choice and structural sections carry their own variance and
length-scale. Unknown sections and keys are rejected, and all violations in
a file are collected before an error is raised, each with its line number.
The categorical coordinate of the ``product_categorical`` kernel is the last
input coordinate (the ``mushy`` flag in the choice applications).
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from .exceptions import ConfigError

APPLICATIONS = ("risk", "choice", "choice_iv", "structural", "entry", "diagnostics")
SEED_MAX = 2 ** 64 - 1
# keys that change where or how fast a run executes but not what it computes
UNHASHED = {("run", "workers"), ("run", "out")}


@dataclass(frozen=True)
class Key:
    """Schema entry: type, default and an optional validity check."""

    kind: type
    default: Any
    check: Optional[Callable[[Any], bool]] = None
    rule: str = ""
    choices: tuple = ()

    def parse(self, raw: str):
        raw = raw.strip()
        if self.kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if self.kind is int:
            return int(raw)
        if self.kind is float:
            return float(raw)
        return raw

    def validate(self, value) -> Optional[str]:
        if self.choices and value not in self.choices:
            return f"must be one of {', '.join(map(str, self.choices))}"
        if self.check is not None and not self.check(value):
            return self.rule
        return None


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _free_list(text):
    return all(p.strip() for p in text.split(",")) if text else True


SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "application": Key(str, "risk", choices=APPLICATIONS),
        "seed": Key(int, 0, lambda x: 0 <= x <= SEED_MAX, "must be in [0, 2**64 - 1]"),
        "M": Key(int, 50, _pos, "must be positive"),
        "workers": Key(int, 1, _pos, "must be positive"),
        "out": Key(str, "results"),
    },
    "kernel": {
        "family": Key(str, "matern32", choices=("matern32", "sqexp", "spline")),
        "variance": Key(float, 10.0, _pos, "must be positive"),
        "lengthscale": Key(float, 1.0, _pos, "must be positive"),
    },
    "optimizer": {
        "n_starts": Key(int, 3, _nonneg, "must be nonnegative"),
        "tol": Key(float, 1e-8, _pos, "must be positive"),
        "max_evals": Key(int, 2000, _pos, "must be positive"),
    },
    "constraints": {
        "max_iter": Key(int, 500, _pos, "must be positive"),
    },
    "risk": {
        "spec": Key(str, "all", choices=("all", "cpt", "da")),
        "free": Key(str, "", _free_list, "must be a comma-separated list of parameter names"),
        "grid": Key(int, 9, lambda x: x >= 2, "must be at least 2"),
    },
    "choice": {
        "eligible": Key(str, "np_both", choices=("np_both", "np_mean", "np_individual")),
        "model": Key(str, "all", choices=("all", "mnl", "nl", "mxl")),
        "markets": Key(str, "synthetic"),
        "R": Key(int, 100, _pos, "must be positive"),
        "Ns": Key(int, 2000, _pos, "must be positive"),
        "variance": Key(float, 10.0, _pos, "must be positive"),
        "lengthscale": Key(float, 10.0, _pos, "must be positive"),
        "categorical_correlation": Key(float, 0.6, lambda x: -1 < x < 1, "must be in (-1, 1)"),
        "data_seed": Key(int, 1, _nonneg, "must be nonnegative"),
        "M_h": Key(int, 20, _pos, "must be positive"),
        "num_iv": Key(int, 2, choices=(2, 3)),
        "screen": Key(int, 3, _pos, "must be positive"),
        "completeness_B": Key(int, 20, _nonneg, "must be nonnegative"),
    },
    "structural": {
        "mode": Key(str, "rf", choices=("rf", "demand_only", "sf")),
        "grid": Key(int, 5, lambda x: x >= 2, "must be at least 2"),
        "variance": Key(float, 1.0, _pos, "must be positive"),
        "lengthscale": Key(float, 1.0, _pos, "must be positive"),
    },
    "entry": {
        "errors": Key(str, "independent_logistic", choices=("independent_logistic", "independent_normal")),
    },
    "diagnostics": {
        "coverage_reps": Key(int, 200, _pos, "must be positive"),
    },
}


@dataclass
class RunConfig:
    """Validated settings, addressed as ``cfg["section"]["key"]``."""

    values: dict = field(default_factory=lambda: {s: {k: v.default for k, v in keys.items()}
                                                  for s, keys in SCHEMA.items()})

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values

    def replace(self, section: str, key: str, value) -> "RunConfig":
        """Copy with one validated setting changed."""
        spec = _lookup(section, key)
        msg = spec.validate(value)
        if msg:
            raise ConfigError(f"{section}.{key} {msg}")
        values = {s: dict(v) for s, v in self.values.items()}
        values[section][key] = value
        return RunConfig(values)

    def config_hash(self) -> str:
        """SHA-256 of the canonical computational settings, first 16 hex digits."""
        canon = {s: {k: v for k, v in kv.items() if (s, k) not in UNHASHED}
                 for s, kv in self.values.items()}
        blob = json.dumps(canon, sort_keys=True, separators=(",", ":"), default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _lookup(section: str, key: str) -> Key:
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"unknown setting {section}.{key}")
    return SCHEMA[section][key]


_SECTION = re.compile(r"^\s*\[([^\]]+)\]")
_KEY = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_numbers(text: str) -> dict:
    lines, section = {}, None
    for number, line in enumerate(text.splitlines(), start=1):
        m = _SECTION.match(line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), number)
            continue
        m = _KEY.match(line)
        if m and section is not None:
            lines[(section, m.group(1).strip())] = number
    return lines


def loads(text: str, source: str = "<string>") -> RunConfig:
    """Parse and validate configuration text.

    Raises
    ------
    ConfigError
        Listing every violation with its line number.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    lines = _line_numbers(text)
    cfg = RunConfig()
    errors = []
    for section in parser.sections():
        if section not in SCHEMA:
            errors.append(f"{source}:{lines.get((section, None), '?')}: unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            where = f"{source}:{lines.get((section, key), '?')}"
            if key not in SCHEMA[section]:
                errors.append(f"{where}: unknown key {section}.{key}")
                continue
            spec = SCHEMA[section][key]
            try:
                value = spec.parse(raw)
            except ValueError:
                errors.append(f"{where}: {section}.{key} expects {spec.kind.__name__}, got {raw!r}")
                continue
            msg = spec.validate(value)
            if msg:
                errors.append(f"{where}: {section}.{key} {msg}")
                continue
            cfg.values[section][key] = value
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return loads(path.read_text(), str(path))


def dumps(cfg: RunConfig) -> str:
    """INI text that :func:`loads` maps back to an equal configuration."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key, spec in keys.items():
            value = cfg.values[section][key]
            if spec.kind is float:
                text = repr(float(value))
            elif spec.kind is bool:
                text = "true" if value else "false"
            else:
                text = str(value)
            out.append(f"{key} = {text}")
        out.append("")
    return "\n".join(out)
