"""Experiment configuration: a JSON document with five sections.

``model``, ``design``, ``truth``, ``experiment`` and ``output``. Unknown keys
are rejected anywhere in the document.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..stats import DEFAULT_DRAWS, DEFAULT_LEVELS, STATISTICS

GRF_TRUTH = (0.0, 2.0, 0.7, 1.0)
PROBIT_TRUTH = (0.5, 1.0, 0.5)  # rho = 0.5 is sigma2 = 1
METHODS = ("analytic", "empirical", "simulated")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    name: str = "grf"


@dataclass(frozen=True)
class DesignSection:
    side: int = 8
    d0: float | None = 3.0
    q: int = 30
    n_covariates: int = 1
    covariate_seed: int = 20110701
    redraw_covariates: bool = False


@dataclass(frozen=True)
class TruthSection:
    theta: tuple | None = None
    interest: tuple = ()


@dataclass(frozen=True)
class ExperimentSection:
    n: int = 30
    R: int = 1000
    M: int = 1000
    M_values: tuple = (100, 250, 500)
    B: int = 500
    levels: tuple = DEFAULT_LEVELS
    methods: tuple = ("analytic",)
    statistics: tuple = STATISTICS
    lrt: bool = False
    h_form: str | None = None
    draws: int = DEFAULT_DRAWS
    seed: int = 42
    workers: int = 1
    max_failure_rate: float = 0.2
    sides: tuple = (4, 6, 8)
    timing_d0: float | None = None
    timing_repeats: int = 3


@dataclass(frozen=True)
class OutputSection:
    dir: str = "results"
    prefix: str = ""


_SECTIONS = {
    "model": ModelSection,
    "design": DesignSection,
    "truth": TruthSection,
    "experiment": ExperimentSection,
    "output": OutputSection,
}


def _tuplify(v):
    return tuple(v) if isinstance(v, list) else v


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    design: DesignSection = field(default_factory=DesignSection)
    truth: TruthSection = field(default_factory=TruthSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        parts = {}
        for name, klass in _SECTIONS.items():
            body = doc.get(name, {})
            if not isinstance(body, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in fields(klass)}
            bad = set(body) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            parts[name] = klass(**{k: _tuplify(v) for k, v in body.items()})
        return cls(**parts)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        try:
            text = path.read_text()
        except FileNotFoundError as exc:
            raise FileNotFoundError(f"config file not found: {path}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def override(self, section: str, **values) -> ExperimentConfig:
        values = {k: _tuplify(v) for k, v in values.items() if v is not None}
        if not values:
            return self
        return replace(self, **{section: replace(getattr(self, section), **values)})

    # derived

    @property
    def theta(self) -> np.ndarray:
        if self.truth.theta is not None:
            return np.asarray(self.truth.theta, dtype=float)
        if self.model.name == "grf":
            return np.asarray(GRF_TRUTH)
        return np.asarray(PROBIT_TRUTH[:1] + (1.0,) * (self.design.n_covariates) + PROBIT_TRUTH[-1:])

    @property
    def interest(self) -> tuple:
        if self.truth.interest:
            return tuple(self.truth.interest)
        return ("lambda", "alpha") if self.model.name == "grf" else ("rho",)

    def validate(self):
        m, e = self.model, self.experiment
        if m.name not in ("grf", "probit"):
            raise ConfigError(f"model must be 'grf' or 'probit', got {m.name!r}")
        if e.R < 1:
            raise ConfigError("R must be at least 1")
        if e.n < 1:
            raise ConfigError("n must be at least 1")
        if any(not 0.0 < lv < 1.0 for lv in e.levels):
            raise ConfigError(f"nominal levels must lie in (0, 1), got {e.levels}")
        if any(k not in METHODS for k in e.methods):
            raise ConfigError(f"matrix methods must be among {METHODS}")
        if m.name != "grf" and "analytic" in e.methods:
            raise ConfigError("analytic matrices are only available for the grf model")
        if m.name != "grf" and e.lrt:
            raise ConfigError("the full-likelihood ratio test is only available for the grf model")
        if any(s not in STATISTICS for s in e.statistics):
            raise ConfigError(f"statistics must be among {STATISTICS}")
        if e.M < 2 or any(v < 2 for v in e.M_values):
            raise ConfigError("M values must be at least 2")
        if e.B < 1:
            raise ConfigError("B must be at least 1")
        if e.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not 0 <= e.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if e.h_form not in (None, "bartlett", "hessian"):
            raise ConfigError("h_form must be null, 'bartlett' or 'hessian'")
