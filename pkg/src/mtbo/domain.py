"""Core data model: tasks, actions, observations, query histories and policies."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when an input violates a data-model precondition."""


@dataclass(frozen=True)
class TaskSpace:
    """Finite set of tasks with nonnegative importance weights."""

    names: tuple[str, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.names) < 1:
            raise DomainError("task space needs at least one task")
        if len(set(self.names)) != len(self.names):
            raise DomainError("task identifiers must be unique")
        if len(self.weights) != len(self.names):
            raise DomainError("one weight per task is required")
        if any(not math.isfinite(w) or w < 0 for w in self.weights):
            raise DomainError("task weights must be finite and >= 0")
        if not any(w > 0 for w in self.weights):
            raise DomainError("at least one task weight must be positive")

    @classmethod
    def uniform(cls, n_tasks: int, prefix: str = "task") -> "TaskSpace":
        return cls(tuple(f"{prefix}{i}" for i in range(n_tasks)), (1.0,) * n_tasks)

    @classmethod
    def from_names(cls, names: Sequence[str], weights: Optional[Sequence[float]] = None):
        if weights is None:
            weights = [1.0] * len(names)
        return cls(tuple(names), tuple(float(w) for w in weights))

    def __len__(self) -> int:
        return len(self.names)

    def check_index(self, task: int) -> int:
        if not isinstance(task, (int, np.integer)) or not 0 <= task < len(self.names):
            raise DomainError(f"invalid task index {task!r} for {len(self.names)} tasks")
        return int(task)


@dataclass(frozen=True)
class ActionSpace:
    """Box-bounded action set, optionally restricted to a finite grid."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    grid: Optional[tuple[tuple[float, ...], ...]] = None

    def __post_init__(self):
        if len(self.lower) < 1 or len(self.lower) != len(self.upper):
            raise DomainError("bounds must be non-empty and of equal length")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise DomainError("every lower bound must be < its upper bound")
        if self.grid is not None:
            if len(self.grid) == 0:
                raise DomainError("grid must be non-empty when given")
            if len(set(self.grid)) != len(self.grid):
                raise DomainError("grid actions must be distinct")
            for a in self.grid:
                if len(a) != self.dim or not self.contains(a):
                    raise DomainError(f"grid action {a} outside the action bounds")

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "ActionSpace":
        return cls(tuple(map(float, lower)), tuple(map(float, upper)))

    @classmethod
    def with_grid(cls, lower, upper, grid: Iterable[Sequence[float]]) -> "ActionSpace":
        grid = tuple(tuple(float(v) for v in a) for a in grid)
        return cls(tuple(map(float, lower)), tuple(map(float, upper)), grid)

    @classmethod
    def regular_grid(cls, lower, upper, points_per_dim: int) -> "ActionSpace":
        axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in zip(lower, upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.stack([m.ravel() for m in mesh], axis=1)
        return cls.with_grid(lower, upper, grid.tolist())

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def span(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def contains(self, action: Sequence[float]) -> bool:
        if len(action) != self.dim:
            return False
        return all(lo <= v <= hi for v, lo, hi in zip(action, self.lower, self.upper))

    def sample(self, rng: np.random.Generator, size: int) -> list[tuple[float, ...]]:
        """Uniform draws from the box, or from the grid when one is configured."""
        if self.grid is not None:
            idx = rng.integers(len(self.grid), size=size)
            return [self.grid[i] for i in idx]
        pts = rng.uniform(self.lower, self.upper, size=(size, self.dim))
        return [tuple(float(v) for v in p) for p in pts]


Action = tuple[float, ...]


@dataclass(frozen=True)
class Observation:
    task: int
    action: Action
    reward: float
    round: int
    worker_id: Optional[int] = None
    dispatched_at: Optional[float] = None
    completed_at: Optional[float] = None

    def __post_init__(self):
        if self.round < 1:
            raise DomainError("observation round must be >= 1")
        if not math.isfinite(self.reward):
            raise DomainError("observed reward must be finite")

    def to_record(self) -> dict:
        return {
            "round": self.round,
            "task": self.task,
            "action": list(self.action),
            "reward": self.reward,
            "worker_id": self.worker_id,
            "dispatched_at": self.dispatched_at,
            "completed_at": self.completed_at,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())

    @classmethod
    def from_record(cls, rec: dict) -> "Observation":
        return cls(
            task=int(rec["task"]),
            action=tuple(float(v) for v in rec["action"]),
            reward=float(rec["reward"]),
            round=int(rec["round"]),
            worker_id=rec.get("worker_id"),
            dispatched_at=rec.get("dispatched_at"),
            completed_at=rec.get("completed_at"),
        )


class History:
    """Append-only query log with per-task derived views.

    Only the coordinator appends; readers work on :meth:`snapshot` copies,
    which share no mutable state with the live history.
    """

    def __init__(self, n_tasks: int, observations: Iterable[Observation] = ()):
        if n_tasks < 1:
            raise DomainError("history needs at least one task")
        self.n_tasks = n_tasks
        self._obs: list[Observation] = []
        self._by_task: list[list[int]] = [[] for _ in range(n_tasks)]
        self._best: list[Optional[int]] = [None] * n_tasks
        for o in observations:
            self.append(o)

    def append(self, obs: Observation) -> None:
        task = self._check(obs.task)
        pos = len(self._obs)
        self._obs.append(obs)
        self._by_task[task].append(pos)
        best = self._best[task]
        # strict '>' keeps the earliest observation on ties
        if best is None or obs.reward > self._obs[best].reward:
            self._best[task] = pos

    def snapshot(self) -> "History":
        snap = History.__new__(History)
        snap.n_tasks = self.n_tasks
        snap._obs = list(self._obs)
        snap._by_task = [list(ix) for ix in self._by_task]
        snap._best = list(self._best)
        return snap

    def _check(self, task) -> int:
        if not isinstance(task, (int, np.integer)) or not 0 <= task < self.n_tasks:
            raise DomainError(f"invalid task index {task!r}")
        return int(task)

    def __len__(self) -> int:
        return len(self._obs)

    def __iter__(self):
        return iter(self._obs)

    @property
    def observations(self) -> list[Observation]:
        return list(self._obs)

    def prefix(self, t: int) -> "History":
        """History restricted to the first ``t`` appended observations."""
        return History(self.n_tasks, self._obs[:t])

    def task_observations(self, task: int) -> list[Observation]:
        task = self._check(task)
        return [self._obs[i] for i in self._by_task[task]]

    def count(self, task: int) -> int:
        return len(self._by_task[self._check(task)])

    def actions_taken(self, task: int) -> list[Action]:
        """A_t(x) as a duplicate-free list in order of first use."""
        seen: dict[Action, None] = {}
        for o in self.task_observations(task):
            seen.setdefault(o.action, None)
        return list(seen)

    def best_reward(self, task: int) -> Optional[float]:
        inc = incumbent(self, task)
        return None if inc is None else inc[1]


def incumbent(history: History, task: int) -> Optional[tuple[Action, float]]:
    """Best observed (action, reward) for ``task``; earliest wins ties."""
    task = history._check(task)
    best = history._best[task]
    if best is None:
        return None
    o = history._obs[best]
    return o.action, o.reward


INCUMBENT = "incumbent"
RANDOM_FALLBACK = "random_fallback"


@dataclass
class PolicyMap:
    mapping: dict[int, Action] = field(default_factory=dict)
    provenance: dict[int, str] = field(default_factory=dict)

    def __call__(self, task: int) -> Action:
        return self.mapping[task]

    def to_record(self) -> dict:
        return {
            str(k): {"action": list(v), "provenance": self.provenance[k]}
            for k, v in sorted(self.mapping.items())
        }


def extract_policy(history: History, tasks: TaskSpace, actions: ActionSpace,
                   rng: np.random.Generator) -> PolicyMap:
    policy = PolicyMap()
    for x in range(len(tasks)):
        inc = incumbent(history, x)
        if inc is not None:
            policy.mapping[x] = inc[0]
            policy.provenance[x] = INCUMBENT
        else:
            policy.mapping[x] = actions.sample(rng, 1)[0]
            policy.provenance[x] = RANDOM_FALLBACK
    return policy
