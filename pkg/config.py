"""
Verifier settings.

Defaults live in verifier_defaults.json next to this module; a user file
and keyword overrides are layered on top.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from errors import ConfigurationError

logger = logging.getLogger(__name__)

DEFAULTS_FILE = Path(__file__).parent / "verifier_defaults.json"


@dataclass(frozen=True)
class FpSlack:
    """Outward slack applied whenever symbolic bounds are concretized."""
    absolute: float = 1e-9
    relative: float = 1e-9

    def widen(self, lb: np.ndarray, ub: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lb = np.asarray(lb, dtype=float)
        ub = np.asarray(ub, dtype=float)
        lo = lb - (self.absolute + self.relative * np.abs(lb))
        hi = ub + (self.absolute + self.relative * np.abs(ub))
        return lo, hi

    def margin(self, value: float) -> float:
        return self.absolute + self.relative * abs(value)


EXACT = FpSlack(0.0, 0.0)


@dataclass(frozen=True)
class Settings:
    """All tunable knobs of an analysis run."""
    eps_fp_abs: float = 1e-9
    eps_fp_rel: float = 1e-9
    eps_split: float = 1e-6
    eps_strict: float = 1e-6
    workers: int = 1
    timeout_ra: Optional[float] = None
    timeout_milp: Optional[float] = None
    binary_search: bool = True
    milp_full_flip_sets: bool = False
    oracle_samples: int = 1000
    max_corner_dims: int = 10
    sample_weights_per_layer: int = 100
    sample_biases_per_layer: int = 100
    sample_seed: int = 0

    def __post_init__(self):
        if self.eps_fp_abs < 0 or self.eps_fp_rel < 0:
            raise ConfigurationError("floating-point slack must be non-negative")
        if self.eps_split <= 0 or self.eps_strict <= 0:
            raise ConfigurationError("eps_split and eps_strict must be positive")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        for name in ("timeout_ra", "timeout_milp"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigurationError(f"{name} must be non-negative, got {value}")
        if self.oracle_samples < 0 or self.max_corner_dims < 0:
            raise ConfigurationError("oracle_samples and max_corner_dims must be non-negative")

    def slack(self) -> FpSlack:
        return FpSlack(self.eps_fp_abs, self.eps_fp_rel)

    def with_overrides(self, **overrides: Any) -> "Settings":
        return replace(self, **_check_keys(overrides))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _check_keys(values: Dict[str, Any]) -> Dict[str, Any]:
    known = {f.name for f in fields(Settings)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"Unknown settings: {', '.join(unknown)}")
    return values


def _read_json(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"Settings file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Invalid JSON in settings file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"Settings file {path} must contain a JSON object")
    return data


def load_settings(path: Optional[Union[str, Path]] = None, **overrides: Any) -> Settings:
    """
    Load settings from the bundled defaults, an optional user file and overrides.

    Args:
        path: Optional JSON file whose keys replace the bundled defaults
        **overrides: Final per-key overrides (None values are ignored)

    Returns:
        Validated Settings

    Raises:
        ConfigurationError: If a file is missing, malformed, or sets unknown keys
    """
    values = _check_keys(_read_json(DEFAULTS_FILE))
    if path is not None:
        values.update(_check_keys(_read_json(Path(path))))
        logger.debug("Loaded settings overrides from %s", path)
    values.update(_check_keys({k: v for k, v in overrides.items() if v is not None}))
    try:
        return Settings(**values)
    except TypeError as e:
        raise ConfigurationError(f"Invalid settings: {e}") from e
