"""Experiment configuration files.

The format is flat ``section.key = value`` lines; ``#`` starts a comment.
Vectors are comma separated and matrix rows are separated by ``;``::

    model.name = hmm2
    model.transition = 0.8, 0.2; 0.3, 0.7
    filter.N = 1000
    experiment.T = 20
    experiment.seed = 42

Parsing collects every problem before failing, each tagged with its line.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import make_psi
from .errors import ConfigError
from .filter import SAMPLERS, FilterConfig
from .models import FIXTURES, fixture
from .resample import SCHEMES

MODES = ("filter", "smooth", "likelihood", "clt-check", "resample-check")


def _str(text):
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _int(text):
    return int(text)


def _float(text):
    return float(text)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(text)


def _interval(text):
    return None if text.lower() == "never" else int(text)


def _vector(text):
    return [float(v) for v in text.split(",")]


def _matrix(text):
    return [_vector(row) for row in text.split(";")]


_TYPES = {
    _str: "a string",
    _int: "an integer",
    _float: "a number",
    _bool: "true or false",
    _interval: "an integer or 'never'",
    _vector: "a comma-separated list of numbers",
    _matrix: "rows of numbers separated by ';'",
}

# key -> (parser, required)
SCHEMA = {
    "model.name": (_str, True),
    "model.initial": (_vector, False),
    "model.transition": (_matrix, False),
    "model.emission": (_matrix, False),
    "model.phi": (_float, False),
    "model.q": (_float, False),
    "model.c": (_float, False),
    "model.r": (_float, False),
    "model.m0": (_float, False),
    "model.p0": (_float, False),
    "model.sigma2": (_float, False),
    "model.center": (_str, False),
    "filter.N": (_int, True),
    "filter.R": (_int, False),
    "filter.scheme": (_str, False),
    "filter.sampler": (_str, False),
    "filter.resample_interval": (_interval, False),
    "filter.ess_threshold": (_float, False),
    "filter.two_stage": (_bool, False),
    "filter.sir_tau": (_str, False),
    "filter.max_attempts": (_int, False),
    "experiment.T": (_int, True),
    "experiment.seed": (_int, True),
    "experiment.mode": (_str, False),
    "experiment.replicates": (_int, False),
    "experiment.psi": (_str, False),
    "experiment.out": (_str, False),
    "experiment.observations": (_vector, False),
    "experiment.t": (_int, False),
    "experiment.tolerance": (_float, False),
    "experiment.workers": (_int, False),
    "experiment.trials": (_int, False),
    "experiment.store_history": (_str, False),
}

_MODEL_PARAMS = {
    "hmm2": ("initial", "transition", "emission"),
    "hmm3": ("initial", "transition", "emission"),
    "lgm": ("phi", "q", "c", "r", "m0", "p0"),
    "sv": ("phi", "sigma2", "m0", "p0", "center"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    model_name: str
    model_params: dict
    filter: FilterConfig
    T: int
    seed: int
    mode: str = "filter"
    replicates: int = 1
    psi: str = "identity"
    out: str = "smcfilter-out"
    observations: tuple | None = None
    t: int | None = None
    tolerance: float = 0.15
    workers: int = 1
    trials: int = 100_000
    store_history: str | None = None
    source: dict = field(default_factory=dict, compare=False, repr=False)

    def build_model(self):
        return fixture(self.model_name, **self.model_params)

    def psi_function(self):
        return make_psi(self.psi)

    def with_overrides(self, mode=None, seed=None) -> "ExperimentConfig":
        cfg = self
        if mode is not None:
            if mode not in MODES:
                raise ConfigError([(None, f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")])
            cfg = replace(cfg, mode=mode)
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        return cfg

    def echo(self) -> dict:
        """Resolved settings, JSON-serializable, for run manifests."""
        f = self.filter
        return {
            "model": {"name": self.model_name, **self.model_params},
            "filter": {
                "N": f.N, "R": f.R, "scheme": f.scheme, "sampler": f.sampler,
                "resample_interval": f.resample_interval, "ess_threshold": f.ess_threshold,
                "two_stage": f.two_stage, "sir_tau": f.sir_tau, "max_attempts": f.max_attempts,
            },
            "experiment": {
                "T": self.T, "seed": self.seed, "mode": self.mode, "replicates": self.replicates,
                "psi": self.psi, "observations": None if self.observations is None else list(self.observations),
                "t": self.t, "tolerance": self.tolerance, "workers": self.workers, "trials": self.trials,
            },
        }


def _lines(text):
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield no, line


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raise :class:`ConfigError` listing every problem."""
    errors = []
    values = {}
    where = {}
    for no, line in _lines(text):
        if "=" not in line:
            errors.append((no, f"expected 'section.key = value', got {line!r}"))
            continue
        key, _, raw = (s.strip() for s in line.partition("="))
        if key not in SCHEMA:
            errors.append((no, f"unknown key {key!r}"))
            continue
        if key in where:
            errors.append((no, f"duplicate key {key!r} (first set on line {where[key]}, again on line {no})"))
            continue
        where[key] = no
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(raw)
        except ValueError:
            errors.append((no, f"{key} must be {_TYPES[parser]}, got {raw!r}"))
    for key, (_, required) in SCHEMA.items():
        if required and key not in where:
            errors.append((None, f"missing required key {key!r}"))

    def bad(key, msg):
        errors.append((where.get(key), msg))

    name = values.get("model.name")
    params = {}
    if name is not None:
        if name not in FIXTURES:
            bad("model.name", f"unknown model {name!r}; expected one of {', '.join(FIXTURES)}")
        else:
            for key in values:
                if key.startswith("model.") and key != "model.name":
                    p = key.split(".", 1)[1]
                    if p not in _MODEL_PARAMS[name]:
                        bad(key, f"{key} is not a parameter of model {name!r}")
                    else:
                        params[p] = values[key]

    for key, choices in (
        ("filter.scheme", SCHEMES),
        ("filter.sampler", SAMPLERS),
        ("experiment.mode", MODES),
        ("filter.sir_tau", ("uniform", "lookahead")),
    ):
        if key in values and values[key] not in choices:
            bad(key, f"{key} must be one of {', '.join(choices)}, got {values[key]!r}")
    for key in ("filter.N", "experiment.replicates", "experiment.workers", "experiment.trials"):
        if key in values and values[key] < 1:
            bad(key, f"{key} must be >= 1")
    for key in ("experiment.T", "experiment.seed"):
        if key in values and values[key] < 0:
            bad(key, f"{key} must be >= 0")
    if "experiment.psi" in values:
        try:
            make_psi(values["experiment.psi"])
        except ValueError as err:
            bad("experiment.psi", str(err))
    obs = values.get("experiment.observations")
    if obs is not None and "experiment.T" in values and len(obs) != values["experiment.T"]:
        bad("experiment.observations", f"{len(obs)} observations given but experiment.T = {values['experiment.T']}")
    if "experiment.t" in values and "experiment.T" in values and not 0 <= values["experiment.t"] <= values["experiment.T"]:
        bad("experiment.t", "experiment.t must lie in [0, experiment.T]")

    fkw = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("filter.")}
    fcfg = None
    if not errors:
        try:
            fcfg = FilterConfig(**fkw)
        except ValueError as err:
            errors.append((where.get("filter.N"), str(err)))
        try:
            fixture(name, **params)
        except (ValueError, TypeError) as err:
            errors.append((where.get("model.name"), f"model {name!r}: {err}"))
    if errors:
        errors.sort(key=lambda e: (e[0] is None, e[0] or 0))
        raise ConfigError(errors)

    ex = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("experiment.")}
    if "observations" in ex:
        ex["observations"] = tuple(ex["observations"])
    return ExperimentConfig(
        model_name=name,
        model_params=params,
        filter=fcfg,
        source={k: where[k] for k in where},
        **ex,
    )


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
