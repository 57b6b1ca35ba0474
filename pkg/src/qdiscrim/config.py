"""JSON run configuration: defaults, dotted overrides and strict validation."""

from __future__ import annotations

import copy
import json
import os
from importlib import resources
from pathlib import Path

from .inference import CostMatrix, HypothesisPair
from .montecarlo import ESTIMATORS, TRUTH_SAMPLINGS, ExperimentConfig
from .qmath import ORDERINGS, BlochVector, InvalidStateError, bloch_to_density
from .trajectory import DISSIPATOR_SCALINGS, LOGLIK_MODES, ModelSpec, SimGrid

WORKERS_ENV = "QDISCRIM_WORKERS"


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending dotted key when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


def default_config() -> dict:
    text = resources.files("qdiscrim").joinpath("data/default.json").read_text()
    return json.loads(text)


def _parse_json(text: str, source: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    return data


def _merge(base: dict, update: dict, prefix: str = "") -> None:
    for key, value in update.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigError("unknown key", dotted)
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError("expected a section (JSON object)", dotted)
            _merge(base[key], value, dotted + ".")
        else:
            if isinstance(value, dict):
                raise ConfigError("expected a value, got a section", dotted)
            base[key] = value


def parse_override(item: str) -> tuple[str, object]:
    """Split ``section.key=value``; the value is read as JSON, falling back to a string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_override(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    node = cfg
    for depth, part in enumerate(parts[:-1]):
        if not isinstance(node.get(part), dict):
            raise ConfigError("unknown section", ".".join(parts[: depth + 1]))
        node = node[part]
    leaf = parts[-1]
    if leaf not in node or isinstance(node[leaf], dict):
        raise ConfigError("unknown key", key)
    node[leaf] = value


def resolve_config(path=None, overrides=(), workers: int | None = None) -> dict:
    """Merge defaults, the file at ``path`` and ``overrides`` into a plain dict.

    Worker count precedence: ``workers`` argument, then the
    ``QDISCRIM_WORKERS`` environment variable, then the file.
    """
    cfg = default_config()
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        _merge(cfg, _parse_json(text, str(path)))
    for item in overrides:
        apply_override(cfg, *parse_override(item))
    env = os.environ.get(WORKERS_ENV)
    if env is not None:
        try:
            cfg["experiment"]["workers"] = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    if workers is not None:
        cfg["experiment"]["workers"] = workers
    return cfg


def _num(cfg: dict, key: str, *, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
    section, name = key.split(".")
    v = cfg[section][name]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", key)
    if integer:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(f"expected an integer, got {v!r}", key)
        v = int(v)
    else:
        v = float(v)
    if v != v or v in (float("inf"), float("-inf")):
        raise ConfigError("must be finite", key)
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"must be {'>' if lo_open else '>='} {lo}, got {v}", key)
    if hi is not None and (v >= hi if hi_open else v > hi):
        raise ConfigError(f"must be {'<' if hi_open else '<='} {hi}, got {v}", key)
    return v


def _choice(cfg: dict, key: str, options) -> str:
    section, name = key.split(".")
    v = cfg[section][name]
    if v not in options:
        raise ConfigError(f"must be one of {', '.join(options)}; got {v!r}", key)
    return v


def build_experiment(cfg: dict) -> ExperimentConfig:
    """Validate a resolved config dict and build the experiment it describes."""
    eta = _num(cfg, "measurement.eta", lo=0.0, lo_open=True, hi=1.0)
    kappa = _num(cfg, "measurement.kappa", lo=0.0)
    scaling = _choice(cfg, "measurement.dissipator_scaling", DISSIPATOR_SCALINGS)
    ordering = _choice(cfg, "measurement.ordering", ORDERINGS)
    models = [
        ModelSpec.qubit(
            _num(cfg, f"model{i}.omega"), _num(cfg, f"model{i}.delta"), kappa, eta, scaling, ordering
        )
        for i in (0, 1)
    ]
    p0 = _num(cfg, "priors.p0", lo=0.0, lo_open=True, hi=1.0, hi_open=True)
    p1 = _num(cfg, "priors.p1", lo=0.0, lo_open=True, hi=1.0, hi_open=True)
    if p0 + p1 != 1.0:
        raise ConfigError(f"priors must sum to exactly 1, got {p0} + {p1}", "priors.p1")
    cost = CostMatrix(*(_num(cfg, f"cost.{k}") for k in ("c00", "c01", "c10", "c11")))
    if not cost.is_admissible():
        raise ConfigError("cost matrix must satisfy c01 > c11 and c10 > c00", "cost")
    dt = _num(cfg, "sim.dt", lo=0.0, lo_open=True)
    t_max = _num(cfg, "sim.t_max", lo=0.0, lo_open=True)
    if dt > t_max:
        raise ConfigError(f"dt={dt} exceeds t_max={t_max}", "sim.dt")
    try:
        rho0 = bloch_to_density(BlochVector(*(_num(cfg, f"initial_state.{k}") for k in "xyz")))
    except InvalidStateError as exc:
        raise ConfigError(str(exc), "initial_state") from None
    return ExperimentConfig(
        pair=HypothesisPair(models[0], models[1], p0, p1, cost),
        grid=SimGrid(dt, t_max),
        rho0=rho0,
        beta=_num(cfg, "experiment.beta", lo=0.0, lo_open=True, hi=1.0, hi_open=True),
        n_trials=_num(cfg, "experiment.n_trials", lo=1, integer=True),
        base_seed=_num(cfg, "sim.seed", lo=0, hi=2**64 - 1, integer=True),
        estimator=_choice(cfg, "experiment.estimator", ESTIMATORS),
        truth_sampling=_choice(cfg, "experiment.truth_sampling", TRUTH_SAMPLINGS),
        loglik_mode=_choice(cfg, "sim.loglik_mode", LOGLIK_MODES),
        workers=_num(cfg, "experiment.workers", lo=1, integer=True),
    )


def load_config(path=None, overrides=(), workers: int | None = None) -> ExperimentConfig:
    return build_experiment(resolve_config(path, overrides, workers))


def dump_config(cfg: dict) -> str:
    return json.dumps(copy.deepcopy(cfg), indent=2, sort_keys=False) + "\n"
