"""Regret and information-gain diagnostics for multi-task runs."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import DomainError, History, TaskSpace
from .gp import GpHyperparams, gram, jittered_cholesky

DEFAULT_EPSILON = 1e-3


@dataclass
class GroundTruthTable:
    """True expected reward f(x, a) on a finite action grid shared by all tasks."""

    actions: tuple[tuple[float, ...], ...]
    values: np.ndarray  # (n_tasks, n_actions)

    def __post_init__(self):
        self.actions = tuple(tuple(float(v) for v in a) for a in self.actions)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != len(self.actions) or len(self.actions) == 0:
            raise DomainError("truth table needs one value per grid action and task")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("truth values must be finite")
        self._index = {a: i for i, a in enumerate(self.actions)}

    @property
    def n_tasks(self) -> int:
        return self.values.shape[0]

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def index(self, action) -> int:
        try:
            return self._index[tuple(float(v) for v in action)]
        except KeyError:
            raise DomainError(f"action {tuple(action)} is not in the truth table") from None

    def value(self, task: int, action) -> float:
        return float(self.values[task, self.index(action)])

    def to_json(self) -> str:
        return json.dumps({"actions": [list(a) for a in self.actions],
                           "values": self.values.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "GroundTruthTable":
        d = json.loads(text)
        return cls(tuple(tuple(a) for a in d["actions"]), np.asarray(d["values"]))


def _played_before(history: History, task: int, t: int):
    return [o for o in history.observations[:t] if o.task == task]


def best_past_action(history: History, truth: GroundTruthTable, task: int, t: int):
    """Best played action for ``task`` among the first ``t`` observations.

    Falls back to the worst grid action when nothing was played.
    """
    played = _played_before(history, task, t)
    if not played:
        return truth.actions[int(np.argmin(truth.values[task]))]
    vals = [truth.value(task, o.action) for o in played]
    return played[int(np.argmax(vals))].action


def normalized_simple_regret(history: History, truth: GroundTruthTable,
                             weights: Sequence[float], t: int) -> float:
    num = den = 0.0
    for x, w in enumerate(weights):
        f = truth.values[x]
        best = truth.value(x, best_past_action(history, truth, x, t))
        num += w * (f.max() - best)
        den += w * (f.max() - f.min())
    if den == 0:
        return 0.0
    return num / den


def regret_curve(history: History, truth: GroundTruthTable, weights: Sequence[float]) -> np.ndarray:
    """Normalized simple regret at t = 0..T, computed incrementally."""
    w = np.asarray(weights, dtype=float)
    fmax, fmin = truth.values.max(1), truth.values.min(1)
    den = float(w @ (fmax - fmin))
    best = fmin.copy()
    out = np.empty(len(history) + 1)

    def ratio():
        return 0.0 if den == 0 else float(w @ (fmax - best)) / den

    out[0] = ratio()
    for i, o in enumerate(history, start=1):
        v = truth.value(o.task, o.action)
        if v > best[o.task]:
            best[o.task] = v
        out[i] = ratio()
    return out


def approximate_regret(history: History, task: int, t: int,
                       epsilon: float = DEFAULT_EPSILON, reference: Optional[float] = None) -> float:
    """Gap between a reference optimum and the best reward seen by time ``t``.

    The reference defaults to the largest reward observed for the task over
    the whole run; ``epsilon`` is added to it. Before the task's first
    observation the run's minimum reward stands in for the incumbent.
    """
    rewards = [o.reward for o in history.task_observations(task)]
    if not rewards:
        raise DomainError(f"task {task} has no observations")
    top = max(rewards) if reference is None else reference
    seen = [o.reward for o in _played_before(history, task, t)]
    incumbent = max(seen) if seen else min(rewards)
    return top + epsilon - incumbent


def approximate_regret_curves(history: History, epsilon: float = DEFAULT_EPSILON,
                              references: Optional[Sequence[float]] = None) -> np.ndarray:
    """Per-task approximate regret at t = 0..T, shape (n_tasks, T + 1).

    Tasks never observed get NaN rows.
    """
    n = history.n_tasks
    out = np.full((n, len(history) + 1), np.nan)
    obs = history.observations
    for x in range(n):
        rewards = [o.reward for o in obs if o.task == x]
        if not rewards:
            continue
        top = max(rewards) if references is None else references[x]
        inc = min(rewards)
        seen = False
        out[x, 0] = top + epsilon - inc
        for i, o in enumerate(obs, start=1):
            if o.task == x and (not seen or o.reward > inc):
                inc, seen = o.reward, True
            out[x, i] = top + epsilon - inc
    return out


def query_counts(history: History) -> np.ndarray:
    """Cumulative per-task query counts at t = 0..T, shape (n_tasks, T + 1)."""
    out = np.zeros((history.n_tasks, len(history) + 1), dtype=int)
    for i, o in enumerate(history, start=1):
        out[:, i] = out[:, i - 1]
        out[o.task, i] += 1
    return out


def information_gain(actions, hp: GpHyperparams) -> float:
    """Mutual information ½ log det(I + K / noise) of noisy observations at ``actions``."""
    if hp.noise_variance <= 0:
        raise ValueError("information gain needs a positive noise variance")
    if len(actions) == 0:
        return 0.0
    K = gram(actions, actions, hp)
    M = np.eye(K.shape[0]) + K / hp.noise_variance
    L, _ = jittered_cholesky(M, 1.0)
    return float(np.log(np.diag(L)).sum())


def total_information_gain(history: History, hp: GpHyperparams, t: Optional[int] = None) -> float:
    """Sum of per-task gains, the tasks being independent GPs."""
    obs = history.observations[: len(history) if t is None else t]
    total = 0.0
    for x in range(history.n_tasks):
        pts = [o.action for o in obs if o.task == x]
        total += information_gain(pts, hp)
    return total


def theorem_bound(n_tasks: int, n_actions: int, gamma: float, T: int) -> float:
    """|X| (1/T + sqrt(|X| |A| gamma / 2T))."""
    if T < 1 or gamma < 0:
        raise ValueError("need T >= 1 and gamma >= 0")
    return n_tasks * (1.0 / T + math.sqrt(n_tasks * n_actions * gamma / (2.0 * T)))


@dataclass
class RegretReport:
    task_names: tuple[str, ...]
    approx_regret: np.ndarray  # (n_tasks, T+1)
    counts: np.ndarray  # (n_tasks, T+1)
    epsilon: float = DEFAULT_EPSILON
    norm_regret: Optional[np.ndarray] = None  # (T+1,)
    bound: Optional[np.ndarray] = None  # (T+1,), NaN at t=0
    info_gain: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def total_approx_regret(self) -> np.ndarray:
        return np.nansum(self.approx_regret, axis=0)

    def columns(self) -> dict[str, np.ndarray]:
        T1 = self.counts.shape[1]
        cols = {"round": np.arange(T1)}
        nan = np.full(T1, np.nan)
        cols["total_norm_regret"] = self.norm_regret if self.norm_regret is not None else nan
        cols["bound"] = self.bound if self.bound is not None else nan
        cols["total_approx_regret"] = self.total_approx_regret
        for name, row in zip(self.task_names, self.approx_regret):
            cols[f"regret_{name}"] = row
        for name, row in zip(self.task_names, self.counts):
            cols[f"count_{name}"] = row
        return cols

    def to_csv(self) -> str:
        cols = self.columns()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(cols["round"])):
            w.writerow([_fmt(c[i]) for c in cols.values()])
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = {k: [_json_num(v) for v in c] for k, c in self.columns().items()}
        d["epsilon"] = self.epsilon
        d["info_gain"] = self.info_gain
        d.update(self.extras)
        return d


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _json_num(v):
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return None if math.isnan(v) else v


def regret_report(history: History, tasks: TaskSpace, epsilon: float = DEFAULT_EPSILON,
                  truth: Optional[GroundTruthTable] = None, hp: Optional[GpHyperparams] = None,
                  references: Optional[Sequence[float]] = None) -> RegretReport:
    """Collect all curves for one run.

    Truth-based normalized regret is included when ``truth`` is given; the
    regret bound additionally needs ``hp`` and uses the realized query set's
    information gain.
    """
    report = RegretReport(tasks.names, approximate_regret_curves(history, epsilon, references),
                          query_counts(history), epsilon)
    if truth is not None:
        report.norm_regret = regret_curve(history, truth, tasks.weights)
        if hp is not None:
            bound = np.full(len(history) + 1, np.nan)
            for t in range(1, len(history) + 1):
                bound[t] = theorem_bound(len(tasks), truth.n_actions,
                                         total_information_gain(history, hp, t), t)
            report.bound = bound
            report.info_gain = total_information_gain(history, hp)
    return report
