"""Query selection: Multi-Task Thompson Sampling and its baselines.

Three strategies share one interface (:func:`propose`):

``mts``
    draw one joint posterior sample per task, pick the task whose sample
    promises the largest weighted improvement over the sampled value of its
    best already-played action, then play the sample's argmax there.
``uniform_ts``
    pick a task uniformly at random, then run plain Thompson sampling on it.
``random``
    uniform task, uniform action.

All strategies start with round-robin random search for ``init_capital``
rounds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import streams
from .domain import ActionSpace, History, Observation, PolicyMap, TaskSpace, extract_policy
from .gp import FitConfig, GpHyperparams, GpModel, fit_model, sample_posterior

ALGORITHMS = ("mts", "uniform_ts", "random")

# (task, candidates, rng) -> sampled values at the candidates
Sampler = Callable[[int, np.ndarray, np.random.Generator], np.ndarray]
# (task, action, rng) -> observed reward
Objective = Callable[[int, tuple, np.random.Generator], float]


@dataclass(frozen=True)
class StrategyConfig:
    capital: int
    init_capital: int = 0
    candidates_per_round: int = 500
    algorithm: str = "mts"
    seed: int = 0
    # GP settings; when hyperparams is given and fit is False they are used as-is
    fit: bool = True
    hyperparams: Optional[GpHyperparams] = None
    standardize: bool = True
    n_starts: int = 5

    def __post_init__(self):
        if self.capital < 1:
            raise ValueError("capital must be positive")
        if not 0 <= self.init_capital <= self.capital:
            raise ValueError("init_capital must lie in [0, capital]")
        if self.candidates_per_round < 1:
            raise ValueError("candidates_per_round must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not self.fit and self.hyperparams is None:
            raise ValueError("fixed-hyperparameter mode needs hyperparams")


@dataclass
class RoundDecision:
    task: int
    action: tuple
    phase: str = "strategy"
    scores: Optional[np.ndarray] = None
    candidates: Optional[np.ndarray] = None


def candidate_set(task: int, history: History, actions: ActionSpace, M: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Observed actions for ``task`` first, then fresh candidates.

    Fresh candidates are M uniform draws from the box, or the whole grid
    when a grid with at most M points is configured (otherwise M distinct
    grid points).
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    played = history.actions_taken(task)
    if actions.grid is not None:
        seen = set(played)
        if len(actions.grid) <= M:
            fresh = [g for g in actions.grid if g not in seen]
        else:
            pick = rng.choice(len(actions.grid), size=M, replace=False)
            fresh = [actions.grid[i] for i in pick if actions.grid[i] not in seen]
    else:
        fresh = actions.sample(rng, M)
    return np.array(played + fresh, dtype=float).reshape(-1, actions.dim)


def improvement_score(sampled, incumbent_positions: Sequence[int], weight: float) -> float:
    sampled = np.asarray(sampled, dtype=float)
    if sampled.size == 0:
        raise ValueError("sampled vector must be non-empty")
    if weight == 0:
        return 0.0
    top = sampled.max()
    if len(incumbent_positions):
        base = sampled[np.asarray(incumbent_positions, dtype=int)].max()
    else:
        # nothing played yet: compare against the worst sampled value
        base = sampled.min()
    return float(max(top - base, 0.0) * weight)


def argmax_random(values, rng: np.random.Generator) -> int:
    """Argmax with ties broken uniformly; draws from ``rng`` only on ties."""
    values = np.asarray(values)
    ties = np.flatnonzero(values == values.max())
    if ties.size == 1:
        return int(ties[0])
    return int(ties[rng.integers(ties.size)])


def mts_select(samples: Sequence[np.ndarray], n_played: Sequence[int],
               weights: Sequence[float], rng: np.random.Generator) -> tuple[int, int, np.ndarray]:
    """Pick (task, candidate index) from per-task sampled vectors.

    ``n_played[x]`` is the number of leading candidates of task x that are
    already-played actions.
    """
    scores = np.array([
        improvement_score(s, range(k), w) for s, k, w in zip(samples, n_played, weights)
    ])
    task = argmax_random(scores, rng)
    return task, argmax_random(samples[task], rng), scores


class GpCache:
    """Per-task GP models keyed by the exact training data they were fit on."""

    def __init__(self, actions: ActionSpace, config: StrategyConfig):
        self.actions = actions
        self.config = config
        self._models: dict = {}

    def model(self, history: History, task: int) -> GpModel:
        obs = history.task_observations(task)
        key = (task, tuple(o.round for o in obs))
        model = self._models.get(key)
        if model is None:
            model = self._build(task, obs)
            self._models[key] = model
        return model

    def _build(self, task: int, obs: list[Observation]) -> GpModel:
        cfg = self.config
        X = [o.action for o in obs]
        y = [o.reward for o in obs]
        if not cfg.fit:
            return GpModel.build(cfg.hyperparams, X, y, standardize=cfg.standardize)
        fit_cfg = FitConfig(self.actions.lower, self.actions.upper, cfg.n_starts,
                            seed=streams.child_seed(cfg.seed, streams.FIT, task, len(obs)))
        return fit_model(X, y, fit_cfg, standardize=cfg.standardize)


def _gp_sampler(models: Sequence[GpModel]) -> Sampler:
    return lambda task, cands, rng: sample_posterior(models[task], cands, rng)


def thompson_round(task: int, history: History, actions: ActionSpace, M: int,
                   rng: np.random.Generator, sampler: Sampler) -> RoundDecision:
    cands = candidate_set(task, history, actions, M, rng)
    sampled = sampler(task, cands, rng)
    j = argmax_random(sampled, rng)
    return RoundDecision(task, tuple(cands[j].tolist()), candidates=cands)


def mts_round(models: Optional[Sequence[GpModel]], history: History, tasks: TaskSpace,
              actions: ActionSpace, config: StrategyConfig, rng: np.random.Generator,
              sampler: Optional[Sampler] = None) -> RoundDecision:
    sampler = sampler or _gp_sampler(models)
    cand_sets, samples, n_played = [], [], []
    for x in range(len(tasks)):
        cands = candidate_set(x, history, actions, config.candidates_per_round, rng)
        cand_sets.append(cands)
        samples.append(np.asarray(sampler(x, cands, rng), dtype=float))
        n_played.append(len(history.actions_taken(x)))
    task, j, scores = mts_select(samples, n_played, tasks.weights, rng)
    return RoundDecision(task, tuple(cand_sets[task][j].tolist()), scores=scores,
                         candidates=cand_sets[task])


def uniform_ts_round(models: Optional[Sequence[GpModel]], history: History, tasks: TaskSpace,
                     actions: ActionSpace, config: StrategyConfig, rng: np.random.Generator,
                     sampler: Optional[Sampler] = None) -> RoundDecision:
    task = int(rng.integers(len(tasks)))
    sampler = sampler or _gp_sampler(models)
    return thompson_round(task, history, actions, config.candidates_per_round, rng, sampler)


def random_round(history: History, tasks: TaskSpace, actions: ActionSpace,
                 rng: np.random.Generator) -> RoundDecision:
    task = int(rng.integers(len(tasks)))
    return RoundDecision(task, actions.sample(rng, 1)[0])


def propose(history: History, t: int, tasks: TaskSpace, actions: ActionSpace,
            config: StrategyConfig, cache: GpCache) -> RoundDecision:
    """Query for round ``t`` (1-based) given the data visible at selection."""
    rng = streams.stream(config.seed, streams.SELECT, t)
    if t <= config.init_capital:
        return RoundDecision((t - 1) % len(tasks), actions.sample(rng, 1)[0], phase="init")
    if config.algorithm == "random":
        return random_round(history, tasks, actions, rng)
    if config.algorithm == "uniform_ts":
        task = int(rng.integers(len(tasks)))
        model = cache.model(history, task)
        sampler = lambda _x, cands, r: sample_posterior(model, cands, r)
        return thompson_round(task, history, actions, config.candidates_per_round, rng, sampler)
    models = [cache.model(history, x) for x in range(len(tasks))]
    return mts_round(models, history, tasks, actions, config, rng)


def evaluate(objective: Objective, decision: RoundDecision, seed: int, t: int) -> float:
    return float(objective(decision.task, decision.action, streams.stream(seed, streams.EVALUATE, t)))


def run_strategy(objective: Objective, tasks: TaskSpace, actions: ActionSpace,
                 config: StrategyConfig, cache: Optional[GpCache] = None) -> tuple[History, PolicyMap]:
    """Plain sequential loop: T rounds, each seeing every earlier result."""
    cache = cache or GpCache(actions, config)
    history = History(len(tasks))
    for t in range(1, config.capital + 1):
        decision = propose(history, t, tasks, actions, config, cache)
        y = evaluate(objective, decision, config.seed, t)
        history.append(Observation(decision.task, decision.action, y, t))
    policy = extract_policy(history, tasks, actions, streams.stream(config.seed, streams.POLICY))
    return history, policy
