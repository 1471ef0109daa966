"""Experiment configuration: TOML file <-> dataclasses <-> resolved benchmark."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .acquisition import ALGORITHMS, StrategyConfig
from .benchsuite import (DEFAULT_PARAMS, NoiseModel, NoisyObjective, TokamakSurrogateParams,
                         sample_prior_truth, sphere_tasks, tokamak_action_space, true_value)
from .domain import ActionSpace, TaskSpace
from .gp import GpHyperparams
from .metrics import GroundTruthTable

OUTPUT_ENV = "MTBO_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyModel:
    kind: str = "constant"
    value: float = 1.0
    lo: float = 0.5
    hi: float = 1.5
    mu: float = 0.0
    sigma: float = 0.5

    def __post_init__(self):
        if self.kind == "constant":
            ok = self.value > 0
        elif self.kind == "uniform":
            ok = 0 <= self.lo <= self.hi and self.hi > 0
        elif self.kind == "lognormal":
            ok = self.sigma >= 0 and math.isfinite(self.mu)
        else:
            raise ConfigError(f"unknown latency kind {self.kind!r}")
        if not ok:
            raise ConfigError(f"invalid parameters for {self.kind} latency")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "constant":
            return float(self.value)
        if self.kind == "uniform":
            return float(rng.uniform(self.lo, self.hi))
        return float(rng.lognormal(self.mu, self.sigma))


@dataclass(frozen=True)
class BenchmarkConfig:
    kind: str = "tokamak"  # tokamak | prior | sphere
    constant_task: bool = False
    constant_level: float = 10.0
    tokamak: Optional[dict] = None  # TokamakSurrogateParams.to_dict() override
    n_tasks: int = 3
    dim: int = 1
    lengthscale: float = 0.2
    signal_variance: float = 1.0
    truth_seed: int = 0
    known_hyperparams: bool = True


@dataclass(frozen=True)
class StrategySection:
    algorithms: tuple[str, ...] = ("mts",)
    capital: int = 125
    init_capital: int = 40
    candidates_per_round: int = 500
    n_starts: int = 5


@dataclass(frozen=True)
class BoundCheckConfig:
    n_truths: int = 50
    seeds_per_truth: int = 2
    n_designs: int = 20
    horizon: int = 60


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    trials: int = 1
    workers: int = 1
    output_dir: str = "runs"
    weights: Optional[tuple[float, ...]] = None
    grid_points: int = 0  # >0 restricts actions to a regular grid per dimension
    strategy: StrategySection = StrategySection()
    benchmark: BenchmarkConfig = BenchmarkConfig()
    noise: NoiseModel = NoiseModel()
    latency: LatencyModel = LatencyModel()
    epsilon: float = 1e-3
    bound_check: BoundCheckConfig = BoundCheckConfig()

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for alg in self.strategy.algorithms:
            if alg not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {alg!r}")
        if not 0 <= self.strategy.init_capital <= self.strategy.capital:
            raise ConfigError("need 0 <= init_capital <= capital")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"]["algorithms"] = list(self.strategy.algorithms)
        if self.weights is not None:
            d["weights"] = list(self.weights)
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)


_SECTIONS = {
    "strategy": StrategySection,
    "benchmark": BenchmarkConfig,
    "noise": NoiseModel,
    "latency": LatencyModel,
    "bound_check": BoundCheckConfig,
}


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    top = dict(d.pop("experiment", {}))
    # flat layout (as echoed in run-log headers) is accepted too
    for key in [k for k in d if k not in _SECTIONS and k not in ("tasks", "actions")]:
        top[key] = d.pop(key)
    kwargs: dict[str, Any] = dict(top)
    tasks = d.pop("tasks", {})
    if "weights" in tasks:
        kwargs["weights"] = tuple(float(w) for w in tasks.pop("weights"))
    if tasks:
        raise ConfigError(f"unknown keys in [tasks]: {sorted(tasks)}")
    actions = d.pop("actions", {})
    if "grid_points" in actions:
        kwargs["grid_points"] = int(actions.pop("grid_points"))
    if actions:
        raise ConfigError(f"unknown keys in [actions]: {sorted(actions)}")
    if kwargs.get("weights") is not None:
        kwargs["weights"] = tuple(kwargs["weights"])
    for name, cls in _SECTIONS.items():
        if name in d:
            section = dict(d.pop(name))
            if name == "strategy" and "algorithms" in section:
                section["algorithms"] = tuple(section["algorithms"])
            kwargs[name] = _build(cls, section, name)
    return _build(ExperimentConfig, kwargs, "experiment")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data)


@dataclass
class Benchmark:
    """Everything a trial needs: the objective and the spaces it lives on."""

    tasks: TaskSpace
    actions: ActionSpace
    source: Any
    noise: NoiseModel
    truth: Optional[GroundTruthTable] = None
    hyperparams: Optional[GpHyperparams] = None

    @property
    def objective(self) -> NoisyObjective:
        return NoisyObjective(self.source, self.noise)


def _grid_truth(source, tasks: TaskSpace, actions: ActionSpace) -> GroundTruthTable:
    values = [[true_value(source, x, a) for a in actions.grid] for x in range(len(tasks))]
    return GroundTruthTable(actions.grid, np.array(values))


def build_benchmark(cfg: ExperimentConfig, truth_seed: Optional[int] = None) -> Benchmark:
    b = cfg.benchmark
    hp = None
    if b.kind == "tokamak":
        params = TokamakSurrogateParams.from_dict(b.tokamak) if b.tokamak else DEFAULT_PARAMS
        if b.constant_task:
            params = params.with_constant_task(b.constant_level)
        source, n = params, params.n_tasks
        box = tokamak_action_space()
    elif b.kind == "sphere":
        source, box = sphere_tasks(b.n_tasks, b.dim, seed=b.truth_seed)
        n = b.n_tasks
    elif b.kind == "prior":
        n = b.n_tasks
        box = ActionSpace.box([0.0] * b.dim, [1.0] * b.dim)
        if cfg.grid_points < 1:
            raise ConfigError("prior benchmark needs [actions] grid_points > 0")
        hp = GpHyperparams((b.lengthscale,) * b.dim, b.signal_variance, cfg.noise.sigma ** 2)
        source = None
    else:
        raise ConfigError(f"unknown benchmark kind {b.kind!r}")
    weights = cfg.weights
    if weights is not None and len(weights) != n:
        raise ConfigError(f"{len(weights)} weights given for {n} tasks")
    try:
        tasks = TaskSpace.from_names([f"task{i}" for i in range(n)], weights)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    actions = box
    if cfg.grid_points > 0:
        actions = ActionSpace.regular_grid(box.lower, box.upper, cfg.grid_points)
    truth = None
    if b.kind == "prior":
        seed = b.truth_seed if truth_seed is None else truth_seed
        truth = sample_prior_truth(n, actions.grid, hp, seed)
        source = truth
    elif actions.grid is not None:
        truth = _grid_truth(source, tasks, actions)
    return Benchmark(tasks, actions, source, cfg.noise, truth, hp)


def strategy_config(cfg: ExperimentConfig, algorithm: str, seed: int,
                    bench: Benchmark) -> StrategyConfig:
    s = cfg.strategy
    known = bench.hyperparams is not None and cfg.benchmark.known_hyperparams
    return StrategyConfig(
        capital=s.capital,
        init_capital=s.init_capital,
        candidates_per_round=s.candidates_per_round,
        algorithm=algorithm,
        seed=seed,
        fit=not known,
        hyperparams=bench.hyperparams if known else None,
        standardize=not known,
        n_starts=s.n_starts,
    )


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **changes)
