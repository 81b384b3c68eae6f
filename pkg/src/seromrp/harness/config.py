"""Experiment configuration: JSON documents validated against a published schema."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from ..inference.posterior import McmcConfig
from ..model import LADDER_VARIANTS
from ..synthpop import ConfigurationError, calibration_counts

EXPERIMENTS = ("exp1_1", "exp1_2", "exp2_1", "exp2_2", "exp3", "feedback", "real_data")

# grid menus from the simulation design; anything else needs allow_off_grid
MENUS = {
    "sample_sizes": {
        "exp1_1": (20, 40, 400, 4000, 40000),
        "exp1_2": (400, 4000),
        "exp2_1": (400, 4000),
        "exp2_2": (4000,),
        "exp3": (4000,),
        "feedback": (4000,),
    },
    "prevalences": (0.001, 0.01, 0.1, 0.2),
    "zeta1": (0.0, 0.3),
    "levels": (4, 10, 20, 40),
    "specificities": (0.98, 0.99, 0.995, 1.0),
    "m_gamma": (400, 800, 1200, 8000),
}

_num_list = {"type": "array", "minItems": 1, "items": {"type": "number"}}
_int_list = {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "seromrp experiment configuration",
    "type": "object",
    "required": ["experiment"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "sample_sizes": _int_list,
        "prevalences": {**_num_list, "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
        "zeta1": _num_list,
        "levels": {**_int_list, "items": {"type": "integer", "minimum": 2}},
        "specificities": {**_num_list, "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "m_gamma": _int_list,
        "variants": {"type": "array", "minItems": 1, "items": {"enum": list(LADDER_VARIANTS)}},
        "models": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0, "maximum": 5}},
        "iterations": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "population_size": {"type": "integer", "minimum": 1},
        "n_covariates": {"type": "integer", "minimum": 5},
        "sensitivity": {"type": "number", "minimum": 0, "maximum": 1},
        "estimate_sensitivity": {"type": "boolean"},
        "sensitivity_calibration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tp": {"type": "integer", "minimum": 0}, "fn": {"type": "integer", "minimum": 0}},
        },
        "methods": {"type": "array", "minItems": 1, "items": {"enum": ["bayes", "mle"]}},
        "mcmc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "chains": {"type": "integer", "minimum": 1},
                "warmup": {"type": "integer", "minimum": 0},
                "draws": {"type": "integer", "minimum": 1},
                "target_accept": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "max_depth": {"type": "integer", "minimum": 1},
            },
        },
        "interval": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "prior_draws": {"type": "integer", "minimum": 1},
        "worked_table": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sample_size": {"type": "integer", "minimum": 1},
                "positives": {"type": "integer", "minimum": 0},
                "specificities": _num_list,
                "sensitivity": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "data": {
            "type": "object",
            "required": ["sample", "poststrat", "covariates"],
            "additionalProperties": False,
            "properties": {
                "sample": {"type": "string"},
                "poststrat": {"type": "string"},
                "covariates": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 2}},
                "calibration": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: {"type": "integer", "minimum": 0} for k in ("tp", "fn", "tn", "fp")},
                },
            },
        },
        "output_dir": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
        "save_draws": {"type": "boolean"},
        "allow_off_grid": {"type": "boolean"},
    },
}

DEFAULT_MCMC = {"chains": 4, "warmup": 1000, "draws": 1000, "target_accept": 0.8, "max_depth": 10}


@dataclass
class ExperimentConfig:
    experiment: str
    sample_sizes: list = field(default_factory=lambda: [4000])
    prevalences: list = field(default_factory=lambda: [0.01])
    zeta1: list = field(default_factory=lambda: [0.3])
    levels: list = field(default_factory=lambda: [20])
    specificities: list = field(default_factory=lambda: [1.0])
    m_gamma: list = field(default_factory=lambda: [800])
    variants: list = field(default_factory=lambda: ["basic"])
    models: list = field(default_factory=lambda: [0, 1, 2, 3, 4, 5])
    iterations: int = 100
    seed: int = 20201101
    population_size: int = 500_000
    n_covariates: int = 5
    sensitivity: float = 1.0
    estimate_sensitivity: bool = False
    sensitivity_calibration: dict = field(default_factory=lambda: {"tp": 97, "fn": 5})
    methods: list = field(default_factory=lambda: ["bayes"])
    mcmc: dict = field(default_factory=lambda: dict(DEFAULT_MCMC))
    interval: float = 0.9
    prior_draws: int = 10_000
    worked_table: dict = field(default_factory=lambda: {
        "sample_size": 200, "positives": 100, "specificities": [0.952, 0.909], "sensitivity": 1.0})
    data: dict | None = None
    output_dir: str = "results"
    workers: int = 1
    save_draws: bool = False
    allow_off_grid: bool = False

    def __post_init__(self):
        self.mcmc = {**DEFAULT_MCMC, **(self.mcmc or {})}

    # -- construction ---------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        """Validate ``doc``; grid keys it leaves out take the experiment's preset values."""
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as err:
            raise ConfigurationError(f"invalid config: {err.message}") from None
        merged = {**PRESETS.get(doc["experiment"], {}), **copy.deepcopy(doc)}
        cfg = cls(**merged)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigurationError(f"cannot read config {path}: {err}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        doc = self.to_dict()
        # where results go and how many processes run them do not change results
        for k in ("output_dir", "workers"):
            doc.pop(k)
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def mcmc_config(self, seed: int) -> McmcConfig:
        return McmcConfig(seed=seed, **self.mcmc)

    # -- validation -----------------------------------------------------

    def check(self) -> None:
        """Grid-menu and calibration checks beyond the JSON schema."""
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}")
        if self.experiment == "real_data":
            if not self.data:
                raise ConfigurationError("real_data needs a 'data' section")
            return
        if not self.allow_off_grid:
            menu = MENUS["sample_sizes"].get(self.experiment)
            for n in self.sample_sizes:
                if menu and n not in menu:
                    raise ConfigurationError(f"sample size {n} is not on the {self.experiment} menu {menu}")
            for name in ("prevalences", "zeta1", "levels", "specificities", "m_gamma"):
                for v in getattr(self, name):
                    if v not in MENUS[name]:
                        raise ConfigurationError(f"{name} value {v} is not on the menu {MENUS[name]}")
        if self.experiment in ("exp2_2", "exp3", "feedback"):
            for g in self.specificities:
                for m in self.m_gamma:
                    calibration_counts(g, m)
        for n in self.sample_sizes:
            if n > self.population_size:
                raise ConfigurationError("sample size exceeds the population size")
        if max(self.levels) > self.population_size:
            raise ConfigurationError("more levels than population units")
        if self.experiment == "exp1_1" and any(m != 0 for m in self.models):
            raise ConfigurationError("exp1_1 fits the intercept-only model only")
        if "mle" in self.methods and self.experiment != "exp1_1":
            raise ConfigurationError("maximum-likelihood fits are part of exp1_1 only")
        try:
            self.mcmc_config(0)
        except (TypeError, ValueError) as err:
            raise ConfigurationError(f"invalid mcmc settings: {err}") from None


SMOKE_MCMC = {"chains": 2, "warmup": 150, "draws": 150}
REDUCED_MCMC = {"chains": 2, "warmup": 500, "draws": 500}

PRESETS = {
    "exp1_1": dict(experiment="exp1_1", sample_sizes=[20, 40, 400, 4000, 40000],
                   prevalences=[0.001, 0.01, 0.1, 0.2], zeta1=[0.0], models=[0], methods=["mle", "bayes"]),
    "exp1_2": dict(experiment="exp1_2", sample_sizes=[400, 4000], zeta1=[0.0, 0.3]),
    "exp2_1": dict(experiment="exp2_1", sample_sizes=[400, 4000], specificities=[0.98, 0.99, 0.995, 1.0]),
    "exp2_2": dict(experiment="exp2_2", specificities=[0.98, 0.99, 0.995, 1.0], m_gamma=[400, 800, 1200, 8000]),
    "exp3": dict(experiment="exp3", specificities=[0.98, 0.99, 0.995, 1.0], m_gamma=[400, 800, 1200, 8000],
                 variants=["one_overall", "two_overall"]),
    "feedback": dict(experiment="feedback", specificities=[0.995], m_gamma=[800], iterations=1, interval=0.8),
}


def preset(name: str, smoke: bool = False, **overrides) -> ExperimentConfig:
    """Full-scale preset, or a smoke-scale one (5 iterations, short chains)."""
    doc = copy.deepcopy(PRESETS[name])
    if smoke:
        doc.setdefault("iterations", 5)
        doc["iterations"] = min(doc["iterations"], 5)
        doc["mcmc"] = dict(SMOKE_MCMC)
    doc.update(overrides)
    return ExperimentConfig.from_dict(doc)
