"""Run configuration: plain-text ``key = value`` files and restriction files.

Config files hold one setting per line; ``#`` starts a comment. Prior
settings use a ``prior.`` prefix (``prior.nu_A = 5``) and hypotheses repeat
the ``restrict`` key. Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .model import Family, PriorSpec, RestrictionPattern, SpecificationError


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run settings."""


_INT_KEYS = ("lags", "M", "burn", "draws", "seed", "thin", "horizon", "chains", "sweeps", "T", "N")


@dataclass
class RunConfig:
    data: Optional[str] = None
    lags: int = 1
    family: str = "homo"
    M: Optional[int] = None
    burn: int = 1000
    draws: int = 10000
    thin: int = 1
    seed: Optional[int] = None
    restrictions: Optional[str] = None
    prior: dict = field(default_factory=dict)
    output: str = "posterior"
    horizon: int = 8
    restrict: list = field(default_factory=list)
    chains: int = 1

    def validate(self) -> "RunConfig":
        for name in ("lags", "burn", "draws", "thin", "horizon", "chains"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < (0 if name in ("burn", "horizon") else 1):
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        try:
            Family.parse(self.family)
        except SpecificationError as err:
            raise ConfigError(str(err)) from None
        if self.M is not None and self.M < 2:
            raise ConfigError("M must be at least 2")
        unknown = set(self.prior) - set(PriorSpec.SCALARS)
        if unknown:
            raise ConfigError(f"unknown prior settings: {sorted(unknown)}")
        return self

    def merged(self, **overrides) -> "RunConfig":
        """Copy with every non-``None`` override applied (prior maps are merged)."""
        updates = {k: v for k, v in overrides.items() if v is not None and k in {f.name for f in fields(self)}}
        if "prior" in updates:
            updates["prior"] = {**self.prior, **updates["prior"]}
        if "restrict" in updates:
            updates["restrict"] = list(self.restrict) + list(updates["restrict"])
        return replace(self, **updates)


def _convert(key: str, value: str):
    if key in _INT_KEYS:
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {value!r}") from None
    return value


def parse_prior_setting(text: str):
    """``name=value`` to ``(name, float)``."""
    if "=" not in text:
        raise ConfigError(f"prior setting {text!r} is not of the form name=value")
    name, value = (s.strip() for s in text.split("=", 1))
    try:
        return name, float(value)
    except ValueError:
        raise ConfigError(f"prior setting {name} needs a number, got {value!r}") from None


def parse_config_text(text: str) -> RunConfig:
    values: dict = {"prior": {}, "restrict": []}
    known = {f.name for f in fields(RunConfig)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("prior."):
            name, val = parse_prior_setting(f"{key[6:]}={value}")
            values["prior"][name] = val
        elif key == "restrict":
            values["restrict"].append(value)
        elif key in known:
            values[key] = _convert(key, value)
        else:
            raise ConfigError(f"line {lineno}: unknown setting {key!r}")
    return RunConfig(**values).validate()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err.strerror or err}") from None
    return parse_config_text(text)


def parse_restriction_text(text: str, N: int, K: int) -> RestrictionPattern:
    """Zero patterns from a text block.

    The file has a ``B0`` section of ``N`` rows with ``N`` entries and an
    optional ``A`` section of ``N`` rows with ``K`` entries; ``1`` marks a
    free element and ``0`` an element fixed at zero. A missing ``A``
    section leaves ``A`` unrestricted.
    """
    sections: dict = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line in ("B0", "A"):
            current = line
            sections[current] = []
            continue
        if current is None:
            raise ConfigError(f"line {lineno}: entries before a 'B0' or 'A' header")
        try:
            sections[current].append([int(v) for v in line.replace(",", " ").split()])
        except ValueError:
            raise ConfigError(f"line {lineno}: entries must be 0 or 1") from None
    if "B0" not in sections:
        raise ConfigError("restriction file needs a 'B0' section")
    mask_B = np.array(sections["B0"])
    mask_A = np.array(sections["A"]) if "A" in sections else np.ones((N, K), dtype=int)
    if mask_B.shape != (N, N):
        raise ConfigError(f"B0 pattern must be {N} x {N}, got {mask_B.shape}")
    if mask_A.shape != (N, K):
        raise ConfigError(f"A pattern must be {N} x {K}, got {mask_A.shape}")
    if not np.all(np.isin(mask_B, (0, 1))) or not np.all(np.isin(mask_A, (0, 1))):
        raise ConfigError("restriction entries must be 0 or 1")
    return RestrictionPattern.from_masks(mask_B.astype(bool), mask_A.astype(bool))


def load_restrictions(path, N: int, K: int) -> RestrictionPattern:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read restriction file {path}: {err.strerror or err}") from None
    return parse_restriction_text(text, N, K)


def parse_hypothesis(text: str):
    """``row,column[=value]`` (zero-based) to ``(row, column, value)``."""
    body, _, value = text.partition("=")
    try:
        row, col = (int(v) for v in body.split(","))
        return row, col, float(value) if value.strip() else 0.0
    except ValueError:
        raise ConfigError(f"hypothesis {text!r} is not of the form row,column[=value]") from None
