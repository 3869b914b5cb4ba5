"""Experiment configuration: defaults, then a TOML file, then command-line values."""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from wedgefall.dynamics import InvalidMassError, MassModel

EXPERIMENTS = (
    "growth",
    "sigma",
    "ansatz",
    "align-census",
    "lambda",
    "cases",
    "wedge-report",
    "lyapunov",
    "foldcheck",
)
POLICIES = ("branch-both", "abort-resample", "pick-first")
FORMATS = ("csv", "json")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "growth"
    masses: tuple[float, float, float] | None = None
    special: tuple[float, float] | None = None
    energy: float = 10.0
    seed: int = 0
    samples: int = 100
    horizon: int = 200
    vectors: int = 20
    threshold: float = 1e3
    theta_min: float = 0.1
    cycles: int = 10000
    chart_cycles: int = 50
    manifolds: tuple[str, ...] = ("S12-", "S31-")
    sigma_bound: float = 3.0
    policy: str = "abort-resample"
    tolerances: dict = field(default_factory=lambda: {"sigma": 1e-6, "monotone": 1e-10, "fold": 1e-8})
    out: str = "results"
    format: str = "csv"

    def mass_model(self) -> MassModel:
        try:
            if self.special is not None:
                return MassModel.special_from(*self.special)
            if self.masses is None:
                return MassModel(3.0, 2.0, 1.0)
            return MassModel(*self.masses)
        except InvalidMassError as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.masses is not None and self.special is not None:
            raise ConfigError("give either masses or special, not both")
        self.mass_model()
        if not self.energy > 0:
            raise ConfigError("energy must be positive")
        for name in ("samples", "horizon", "vectors", "cycles"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be a positive integer")
        if self.chart_cycles < 0:
            raise ConfigError("chart_cycles must be nonnegative")
        if not self.threshold > 0 or not self.theta_min > 0 or not self.sigma_bound > 1:
            raise ConfigError("threshold and theta_min must be positive, sigma_bound above 1")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {', '.join(POLICIES)}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be csv or json")
        bad = [m for m in self.manifolds if m not in ("S12-", "S31-", "S12+", "S31+")]
        if bad:
            raise ConfigError(f"unknown manifolds {bad}")
        return self

    def canonical(self) -> str:
        """Sorted-key JSON of everything that affects results (output location excluded)."""
        d = asdict(self)
        d.pop("out")
        d.pop("format")
        d["mass_model"] = list(self.mass_model().as_tuple())
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


_TUPLES = {"masses": 3, "special": 2}


def _coerce(name: str, value):
    kinds = {f.name: f for f in fields(ExperimentConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown configuration key {name!r}")
    if value is None:
        return None
    try:
        if name in _TUPLES:
            if isinstance(value, str):
                value = [float(s) for s in value.split(",")]
            value = tuple(float(v) for v in value)
            if len(value) != _TUPLES[name]:
                raise ConfigError(f"{name} needs {_TUPLES[name]} values")
            return value
        if name == "manifolds":
            if isinstance(value, str):
                value = value.split(",")
            return tuple(str(v).strip() for v in value)
        if name == "tolerances":
            if not isinstance(value, dict):
                raise ConfigError("tolerances must be a table")
            base = ExperimentConfig().tolerances
            unknown = set(value) - set(base)
            if unknown:
                raise ConfigError(f"unknown tolerances {sorted(unknown)}")
            return {**base, **{k: float(v) for k, v in value.items()}}
        if name in ("seed", "samples", "horizon", "vectors", "cycles", "chart_cycles"):
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{name} must be an integer")
            return int(value)
        if name in ("energy", "threshold", "theta_min", "sigma_bound"):
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the TOML file, then ``overrides`` (None values are ignored)."""
    cfg = ExperimentConfig()
    values: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        values.update({k: _coerce(k, v) for k, v in data.items()})
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, v)
    # a mass choice on the command line replaces the file's, whichever form it takes
    if overrides and overrides.get("masses") is not None:
        values["special"] = None
    if overrides and overrides.get("special") is not None:
        values["masses"] = None
    return replace(cfg, **values).validate()
