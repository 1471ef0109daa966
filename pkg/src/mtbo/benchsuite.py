"""Synthetic multi-task objectives.

The tokamak surrogate has two competing components driven by an effective
beam power ``P = (w_co p_co + w_cc p_cc) / (w_co + w_cc)``::

    stability = baseline_stab - c_stab * exp(-k_stab * P)     # rises with P
    pressure  = baseline_pres + c_pres * exp(-k_pres * P)     # falls with P
    reward    = w_beta * pressure + w_omega * stability

It is a shape-alike only: the constants are invented so that the two
weighted terms have similar magnitude and the weighted sum peaks at low
but nonzero power. No physics is modeled.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np

from . import streams
from .domain import ActionSpace, DomainError
from .gp import GpHyperparams, gram, jittered_cholesky
from .metrics import GroundTruthTable

POWER_BOUNDS = (0.001, 1.0)


@dataclass(frozen=True)
class TokamakTaskParams:
    c_stab: float
    k_stab: float
    c_pres: float
    k_pres: float
    baseline_stab: float = 0.0
    baseline_pres: float = 1.0
    w_co: float = 6.0
    w_cc: float = 2.0

    def __post_init__(self):
        if self.k_stab <= 0 or self.k_pres <= 0:
            raise ValueError("decay rates k_stab, k_pres must be positive")
        if self.w_co < 0 or self.w_cc < 0 or self.w_co + self.w_cc <= 0:
            raise ValueError("beam mix weights must be nonnegative with a positive sum")


@dataclass(frozen=True)
class TokamakSurrogateParams:
    tasks: tuple[TokamakTaskParams, ...]
    w_beta: float = 10.0
    w_omega: float = 100.0

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def with_constant_task(self, level: float = 10.0) -> "TokamakSurrogateParams":
        """Append a task whose reward is ``level`` everywhere."""
        const = TokamakTaskParams(0.0, 1.0, 0.0, 1.0, 0.0, level / self.w_beta)
        return TokamakSurrogateParams(self.tasks + (const,), self.w_beta, self.w_omega)

    def to_dict(self) -> dict:
        return {"w_beta": self.w_beta, "w_omega": self.w_omega,
                "tasks": [asdict(t) for t in self.tasks]}

    @classmethod
    def from_dict(cls, d: dict) -> "TokamakSurrogateParams":
        tasks = tuple(TokamakTaskParams(**t) for t in d["tasks"])
        return cls(tasks, float(d.get("w_beta", 10.0)), float(d.get("w_omega", 100.0)))


# Eight default tasks. Tasks 0-3 are hard: tall (range ~120), narrow peaks
# at low power behind a steep low-power cliff. Tasks 4-7 are nearly flat
# (range < 1) so a handful of queries suffices. c_stab places each optimum
# at a chosen effective power P* via 100 c_stab k_stab e^{-k_stab P*} =
# 10 c_pres k_pres e^{-k_pres P*}; P* = 0.25, 0.15, 0.12, 0.30, 0.5, 0.6, 0.55, 0.45.
DEFAULT_TASKS = (
    TokamakTaskParams(c_stab=1.32347, k_stab=20.0, c_pres=1.245, k_pres=5.0, w_co=5.0, w_cc=3.0),
    TokamakTaskParams(c_stab=1.29565, k_stab=35.0, c_pres=1.244, k_pres=3.0, w_co=2.0, w_cc=1.0),
    TokamakTaskParams(c_stab=1.45287, k_stab=30.0, c_pres=5.69, k_pres=3.0, w_co=5.0, w_cc=3.0),
    TokamakTaskParams(c_stab=1.47234, k_stab=12.0, c_pres=4.088, k_pres=2.5, w_co=5.0, w_cc=3.0),
    TokamakTaskParams(c_stab=0.01745, k_stab=3.0, c_pres=0.3, k_pres=0.5, w_co=6.0, w_cc=2.0),
    TokamakTaskParams(c_stab=0.00898, k_stab=2.5, c_pres=0.2, k_pres=0.3, w_co=5.0, w_cc=3.0),
    TokamakTaskParams(c_stab=0.00969, k_stab=2.2, c_pres=0.25, k_pres=0.3, w_co=2.0, w_cc=1.0),
    TokamakTaskParams(c_stab=0.00484, k_stab=2.0, c_pres=0.15, k_pres=0.3, w_co=5.0, w_cc=3.0),
)
DEFAULT_PARAMS = TokamakSurrogateParams(DEFAULT_TASKS)


def tokamak_action_space() -> ActionSpace:
    return ActionSpace.box(POWER_BOUNDS[:1] * 2, POWER_BOUNDS[1:] * 2)


class SurrogateOutput(NamedTuple):
    stability: float
    pressure: float
    reward: float


def effective_power(task: TokamakTaskParams, action: Sequence[float]) -> float:
    p_co, p_cc = action
    return (task.w_co * p_co + task.w_cc * p_cc) / (task.w_co + task.w_cc)


def tokamak_surrogate(params: TokamakSurrogateParams, task: int,
                      action: Sequence[float]) -> SurrogateOutput:
    if not 0 <= task < params.n_tasks:
        raise DomainError(f"invalid task index {task}")
    if len(action) != 2 or not all(POWER_BOUNDS[0] <= p <= POWER_BOUNDS[1] for p in action):
        raise DomainError(f"beam power action {tuple(action)} outside {POWER_BOUNDS}^2")
    tp = params.tasks[task]
    P = effective_power(tp, action)
    stability = tp.baseline_stab - tp.c_stab * math.exp(-tp.k_stab * P)
    pressure = tp.baseline_pres + tp.c_pres * math.exp(-tp.k_pres * P)
    return SurrogateOutput(stability, pressure,
                           params.w_beta * pressure + params.w_omega * stability)


def surrogate_reward_grid(params: TokamakSurrogateParams, task: int, n: int = 50) -> np.ndarray:
    """Reward on an n x n grid over the power box (rows: p_co, cols: p_cc)."""
    g = np.linspace(*POWER_BOUNDS, n)
    return np.array([[tokamak_surrogate(params, task, (a, b)).reward for b in g] for a in g])


def surrogate_optimum(params: TokamakSurrogateParams, task: int) -> float:
    """Max reward over the box; the reward depends on the action only via P."""
    tp = params.tasks[task]
    P = np.linspace(POWER_BOUNDS[0], POWER_BOUNDS[1], 20001)
    r = (params.w_beta * (tp.baseline_pres + tp.c_pres * np.exp(-tp.k_pres * P))
         + params.w_omega * (tp.baseline_stab - tp.c_stab * np.exp(-tp.k_stab * P)))
    return float(r.max())


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.1

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("noise sigma must be >= 0")


TruthSource = Union[GroundTruthTable, TokamakSurrogateParams, Callable[[int, tuple], float]]


def true_value(source: TruthSource, task: int, action) -> float:
    if isinstance(source, GroundTruthTable):
        return source.value(task, action)
    if isinstance(source, TokamakSurrogateParams):
        return tokamak_surrogate(source, task, action).reward
    return float(source(task, tuple(action)))


def noisy_evaluate(source: TruthSource, task: int, action, noise: NoiseModel,
                   rng: np.random.Generator) -> float:
    return true_value(source, task, action) + noise.sigma * float(rng.standard_normal())


class NoisyObjective:
    """Objective callable ``(task, action, rng) -> y`` for the strategies."""

    def __init__(self, source: TruthSource, noise: NoiseModel = NoiseModel()):
        self.source = source
        self.noise = noise

    def __call__(self, task: int, action, rng: np.random.Generator) -> float:
        return noisy_evaluate(self.source, task, action, self.noise, rng)


def sample_prior_truth(n_tasks: int, action_grid: Sequence[Sequence[float]],
                       hp: GpHyperparams, seed: int) -> GroundTruthTable:
    """One exact joint draw from GP(0, k) on the grid for each task."""
    grid = np.asarray(action_grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    if grid.shape[0] == 0:
        raise DomainError("action grid must be non-empty")
    K = gram(grid, grid, hp)
    L, _ = jittered_cholesky(K, hp.signal_variance)
    rng = streams.stream(seed, streams.TRUTH)
    values = (L @ rng.standard_normal((grid.shape[0], n_tasks))).T
    return GroundTruthTable(tuple(map(tuple, grid.tolist())), values)


def sphere_tasks(n_tasks: int, dim: int = 2, seed: int = 0, scale: float = 10.0):
    """Generic test family: negated squared distance to a per-task center in [0,1]^dim."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.1, 0.9, size=(n_tasks, dim))
    widths = rng.uniform(0.5, 2.0, size=n_tasks)

    def f(task: int, action) -> float:
        d = np.asarray(action, dtype=float) - centers[task]
        return float(-scale * widths[task] * (d @ d))

    return f, ActionSpace.box([0.0] * dim, [1.0] * dim)
