"""Empirical check of the multi-task Thompson sampling regret bound.

Truths are drawn from the GP prior on a finite grid, MTS runs with the true
hyperparameters and no initial random phase, and the mean normalized simple
regret is compared round by round against
``|X| (1/t + sqrt(|X| |A| gamma_t / 2t))``.

``gamma_t`` should be the maximum information gain over all designs of size
t; we use the largest gain among a few random designs (prefixes of random
query sequences), which underestimates it and so makes the check stricter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import streams
from .acquisition import StrategyConfig, run_strategy
from .benchsuite import NoisyObjective, sample_prior_truth
from .config import ExperimentConfig, build_benchmark
from .gp import GpHyperparams
from .metrics import information_gain, regret_curve, theorem_bound


@dataclass
class BoundCheckResult:
    rounds: np.ndarray  # 1..T
    mean_regret: np.ndarray
    se_regret: np.ndarray
    gamma: np.ndarray
    bound: np.ndarray
    curves: np.ndarray  # (runs, T + 1)

    @property
    def holds(self) -> bool:
        return bool(np.all(self.mean_regret <= self.bound))

    def to_csv(self) -> str:
        lines = ["round,mean_norm_regret,se_norm_regret,gamma_hat,bound,holds"]
        for t, m, s, g, b in zip(self.rounds, self.mean_regret, self.se_regret,
                                 self.gamma, self.bound):
            lines.append(f"{t},{m!r},{s!r},{g!r},{b!r},{int(m <= b)}")
        return "\n".join(lines) + "\n"


def random_design_gain(n_tasks: int, grid, hp: GpHyperparams, horizon: int,
                       n_designs: int, seed: int) -> np.ndarray:
    """Max over random query sequences of the total gain of their length-t prefix."""
    grid = np.asarray(grid, dtype=float)
    best = np.zeros(horizon + 1)
    rng = streams.stream(seed, streams.TRUTH, 1)
    for _ in range(n_designs):
        xs = rng.integers(n_tasks, size=horizon)
        acts = rng.integers(len(grid), size=horizon)
        for t in range(1, horizon + 1):
            g = sum(information_gain(grid[acts[:t][xs[:t] == x]], hp) for x in range(n_tasks))
            best[t] = max(best[t], g)
    return best


def bound_check(cfg: ExperimentConfig) -> BoundCheckResult:
    bc = cfg.bound_check
    T = bc.horizon
    bench = build_benchmark(cfg)
    if bench.hyperparams is None or bench.truth is None:
        raise ValueError("bound check needs a 'prior' benchmark on a finite grid")
    hp = bench.hyperparams
    grid = bench.actions.grid
    n = len(bench.tasks)
    curves = []
    for i in range(bc.n_truths):
        truth = sample_prior_truth(n, grid, hp, cfg.benchmark.truth_seed + i)
        objective = NoisyObjective(truth, cfg.noise)
        for j in range(bc.seeds_per_truth):
            scfg = StrategyConfig(capital=T, init_capital=0,
                                  candidates_per_round=cfg.strategy.candidates_per_round,
                                  algorithm="mts", seed=cfg.seed + i * bc.seeds_per_truth + j,
                                  fit=False, hyperparams=hp, standardize=False)
            history, _ = run_strategy(objective, bench.tasks, bench.actions, scfg)
            curves.append(regret_curve(history, truth, bench.tasks.weights))
    curves = np.array(curves)
    gamma = random_design_gain(n, grid, hp, T, bc.n_designs, cfg.seed)
    rounds = np.arange(1, T + 1)
    bound = np.array([theorem_bound(n, len(grid), gamma[t], t) for t in rounds])
    mean = curves[:, 1:].mean(0)
    se = curves[:, 1:].std(0, ddof=1) / np.sqrt(len(curves)) if len(curves) > 1 else np.zeros(T)
    return BoundCheckResult(rounds, mean, se, gamma[1:], bound, curves)
