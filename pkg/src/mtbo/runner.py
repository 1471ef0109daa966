"""Experiment orchestration.

Workers are simulated with a logical clock. Each dispatch picks its query
from the history as it stands at dispatch time (results still in flight are
invisible), spends one unit of capital, and completes after a latency drawn
from the configured model. Completions are appended in completion-time
order; ties go to the earlier dispatch.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import __version__, streams
from .acquisition import GpCache, StrategyConfig, evaluate, propose
from .config import Benchmark, ConfigError, ExperimentConfig, build_benchmark, strategy_config
from .domain import ActionSpace, History, Observation, PolicyMap, TaskSpace, extract_policy
from .metrics import RegretReport, regret_report

logger = logging.getLogger(__name__)


class TrialFailed(RuntimeError):
    def __init__(self, message: str, stats: "ExecutorStats"):
        super().__init__(message)
        self.stats = stats


@dataclass
class ExecutorStats:
    dispatched: int = 0
    completed: int = 0
    failed: int = 0
    # observation count seen by each of a worker's successive selections
    snapshot_sizes: dict[int, list[int]] = field(default_factory=dict)


class RunLogWriter:
    """JSONL run log: one header line, then one line per completed query."""

    def __init__(self, path: Path, header: Optional[dict] = None):
        self.path = Path(path)
        if header is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w") as fh:
                fh.write(json.dumps(header) + "\n")

    def write(self, obs: Observation) -> None:
        with open(self.path, "a") as fh:
            fh.write(obs.to_json() + "\n")
            fh.flush()


def read_run_log(path) -> tuple[dict, list[Observation]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"run log not found: {path}")
    header, observations = None, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                # a torn final line from an interrupted write is dropped
                logger.warning("%s:%d: skipping unreadable line", path, lineno)
                continue
            if "config" in rec:
                if header is not None:
                    raise ValueError(f"{path}: more than one header record")
                header = rec
            else:
                observations.append(Observation.from_record(rec))
    if header is None:
        raise ValueError(f"{path}: missing header record")
    return header, observations


def execute(tasks: TaskSpace, actions: ActionSpace, config: StrategyConfig, objective,
            workers: int = 1, latency=None, history: Optional[History] = None,
            writer: Optional[RunLogWriter] = None, cache: Optional[GpCache] = None,
            stop_after: Optional[int] = None) -> tuple[History, ExecutorStats]:
    """Run the asynchronous worker pool until capital is spent.

    With a partially filled ``history`` only the missing rounds are
    dispatched. ``stop_after`` halts once that many observations exist
    (used to emulate an interrupted run).
    """
    from .config import LatencyModel

    latency = latency or LatencyModel()
    cache = cache or GpCache(actions, config)
    history = history if history is not None else History(len(tasks))
    done = {o.round for o in history}
    pending = [t for t in range(1, config.capital + 1) if t not in done]
    clock = max((o.completed_at or 0.0 for o in history), default=0.0)
    free = list(range(workers))
    inflight: list = []
    stats = ExecutorStats()
    failure: Optional[BaseException] = None

    def dispatch(worker: int, t: int):
        snapshot = history.snapshot()
        stats.snapshot_sizes.setdefault(worker, []).append(len(snapshot))
        decision = propose(snapshot, t, tasks, actions, config, cache)
        stats.dispatched += 1
        y = evaluate(objective, decision, config.seed, t)
        finish = clock + latency.sample(streams.stream(config.seed, streams.LATENCY, t))
        obs = Observation(decision.task, decision.action, y, t, worker, clock, finish)
        heapq.heappush(inflight, (finish, t, worker, obs))

    while True:
        if stop_after is not None and len(history) >= stop_after:
            break
        while free and pending and failure is None:
            worker, t = free.pop(0), pending.pop(0)
            try:
                dispatch(worker, t)
            except Exception as exc:  # objective or numerical failure
                stats.failed += 1
                failure = exc
                free.append(worker)
        if not inflight:
            break
        clock = inflight[0][0]
        while inflight and inflight[0][0] == clock:
            _, _, worker, obs = heapq.heappop(inflight)
            history.append(obs)
            stats.completed += 1
            if writer is not None:
                writer.write(obs)
            free.append(worker)
        free.sort()
    if failure is not None:
        raise TrialFailed(f"evaluation failed: {failure!r}", stats) from failure
    return history, stats


def log_header(cfg: ExperimentConfig, algorithm: str, trial: int, seed: int,
               bench: Benchmark) -> dict:
    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "algorithm": algorithm,
        "trial": trial,
        "seed": seed,
        "task_names": list(bench.tasks.names),
        "weights": list(bench.tasks.weights),
    }


def trial_seed(cfg: ExperimentConfig, trial: int) -> int:
    return cfg.seed + trial


def _truth_seed(cfg: ExperimentConfig, trial: int) -> int:
    return cfg.benchmark.truth_seed + trial


@dataclass
class TrialResult:
    algorithm: str
    trial: int
    seed: int
    history: History
    policy: Optional[PolicyMap]
    log_path: Optional[Path]
    stats: ExecutorStats
    bench: Benchmark
    failed: bool = False
    error: Optional[str] = None


def run_trial(cfg: ExperimentConfig, algorithm: str, trial: int,
              out_dir: Optional[Path] = None, stop_after: Optional[int] = None) -> TrialResult:
    seed = trial_seed(cfg, trial)
    bench = build_benchmark(cfg, _truth_seed(cfg, trial))
    scfg = strategy_config(cfg, algorithm, seed, bench)
    writer = log_path = None
    if out_dir is not None:
        log_path = Path(out_dir) / algorithm / f"trial_{trial:03d}.jsonl"
        writer = RunLogWriter(log_path, log_header(cfg, algorithm, trial, seed, bench))
    history = History(len(bench.tasks))
    stats = ExecutorStats()
    try:
        history, stats = execute(bench.tasks, bench.actions, scfg, bench.objective, cfg.workers,
                                 cfg.latency, history, writer, stop_after=stop_after)
    except TrialFailed as exc:
        stats = exc.stats
        logger.error("%s trial %d failed: %s", algorithm, trial, exc)
        return TrialResult(algorithm, trial, seed, history, None, log_path, stats, bench,
                           failed=True, error=str(exc))
    policy = extract_policy(history, bench.tasks, bench.actions,
                            streams.stream(seed, streams.POLICY))
    return TrialResult(algorithm, trial, seed, history, policy, log_path, stats, bench)


def resume(run_log_path, cfg: ExperimentConfig) -> TrialResult:
    """Continue an interrupted trial from its log until capital is spent."""
    header, observations = read_run_log(run_log_path)
    if header.get("config_hash") != cfg.config_hash():
        raise ConfigError(
            f"run log {run_log_path} was written with config hash {header.get('config_hash')}, "
            f"current config hashes to {cfg.config_hash()}")
    _drop_torn_tail(Path(run_log_path))
    algorithm, trial, seed = header["algorithm"], int(header["trial"]), int(header["seed"])
    bench = build_benchmark(cfg, _truth_seed(cfg, trial))
    scfg = strategy_config(cfg, algorithm, seed, bench)
    history = History(len(bench.tasks), observations)
    if len(history) >= scfg.capital:
        logger.info("%s already complete (%d observations)", run_log_path, len(history))
        stats = ExecutorStats(completed=0)
    else:
        history, stats = execute(bench.tasks, bench.actions, scfg, bench.objective, cfg.workers,
                                 cfg.latency, history, RunLogWriter(run_log_path))
    policy = extract_policy(history, bench.tasks, bench.actions, streams.stream(seed, streams.POLICY))
    return TrialResult(algorithm, trial, seed, history, policy, Path(run_log_path), stats, bench)


def _drop_torn_tail(path: Path) -> None:
    """Cut a partially written final line so appends start on a fresh line."""
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        keep = data.rfind(b"\n") + 1
        logger.warning("%s: dropping %d bytes of a torn final line", path, len(data) - keep)
        with open(path, "r+b") as fh:
            fh.truncate(keep)


def history_from_log(path) -> tuple[dict, History, TaskSpace]:
    header, observations = read_run_log(path)
    tasks = TaskSpace.from_names(header["task_names"], header["weights"])
    return header, History(len(tasks), observations), tasks


# ---------------------------------------------------------------- aggregation

def pooled_references(results: Iterable[TrialResult], n_tasks: int) -> np.ndarray:
    """Largest reward observed per task across all given runs."""
    ref = np.full(n_tasks, -np.inf)
    for r in results:
        for o in r.history:
            ref[o.task] = max(ref[o.task], o.reward)
    return ref


def _mean_se(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rows = np.asarray(rows, dtype=float)
    n = np.sum(~np.isnan(rows), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.nanmean(rows, axis=0) if rows.size else np.array([])
        sd = np.nanstd(rows, axis=0, ddof=1) if rows.shape[0] > 1 else np.zeros(rows.shape[1:])
        se = np.where(n > 1, sd / np.sqrt(np.maximum(n, 1)), 0.0)
    return mean, se


@dataclass
class AlgorithmAggregate:
    algorithm: str
    reports: list[RegretReport]

    def table(self) -> dict[str, np.ndarray]:
        cols: dict[str, np.ndarray] = {}
        first = self.reports[0]
        cols["round"] = np.arange(first.counts.shape[1])
        series = {"total_approx_regret": [r.total_approx_regret for r in self.reports]}
        if first.norm_regret is not None:
            series["total_norm_regret"] = [r.norm_regret for r in self.reports]
        for i, name in enumerate(first.task_names):
            series[f"regret_{name}"] = [r.approx_regret[i] for r in self.reports]
            series[f"count_{name}"] = [r.counts[i] for r in self.reports]
        for key, rows in series.items():
            mean, se = _mean_se(np.vstack(rows))
            cols[f"{key}_mean"] = mean
            cols[f"{key}_se"] = se
        return cols


def _write_csv(path: Path, cols: dict[str, np.ndarray]) -> None:
    from .metrics import _fmt

    keys = list(cols)
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for i in range(len(cols[keys[0]])):
            fh.write(",".join(_fmt(cols[k][i]) for k in keys) + "\n")


def comparison_table(aggs: list[AlgorithmAggregate]) -> dict[str, np.ndarray]:
    cols: dict[str, np.ndarray] = {}
    for agg in aggs:
        t = agg.table()
        cols.setdefault("round", t["round"])
        for key in ("total_approx_regret", "total_norm_regret"):
            if f"{key}_mean" in t:
                cols[f"{agg.algorithm}_{key}_mean"] = t[f"{key}_mean"]
                cols[f"{agg.algorithm}_{key}_se"] = t[f"{key}_se"]
    return cols


def table_to_csv(cols: dict[str, np.ndarray]) -> str:
    from .metrics import _fmt

    keys = list(cols)
    lines = [",".join(keys)]
    for i in range(len(cols[keys[0]])):
        lines.append(",".join(_fmt(cols[k][i]) for k in keys))
    return "\n".join(lines) + "\n"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: list[TrialResult]
    aggregates: list[AlgorithmAggregate]
    references: np.ndarray
    output_dir: Optional[Path]

    def by_algorithm(self, algorithm: str) -> list[TrialResult]:
        return [r for r in self.trials if r.algorithm == algorithm]

    @property
    def failed(self) -> list[TrialResult]:
        return [r for r in self.trials if r.failed]


def trial_report(result: TrialResult, cfg: ExperimentConfig,
                 references: Optional[np.ndarray] = None) -> RegretReport:
    bench = result.bench
    return regret_report(result.history, bench.tasks, cfg.epsilon, truth=bench.truth,
                         hp=bench.hyperparams, references=references)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    out_dir = cfg.resolved_output_dir() if write else None
    results = []
    for algorithm in cfg.strategy.algorithms:
        for trial in range(cfg.trials):
            res = run_trial(cfg, algorithm, trial, out_dir)
            logger.info("%s trial %d: %d observations%s", algorithm, trial, len(res.history),
                        " (failed)" if res.failed else "")
            results.append(res)
    ok = [r for r in results if not r.failed]
    n_tasks = len(build_benchmark(cfg).tasks)
    refs = pooled_references(ok, n_tasks)
    refs = np.where(np.isfinite(refs), refs, np.nan)
    aggregates = []
    for algorithm in cfg.strategy.algorithms:
        runs = [r for r in ok if r.algorithm == algorithm]
        if runs:
            aggregates.append(AlgorithmAggregate(
                algorithm, [trial_report(r, cfg, refs) for r in runs]))
    result = ExperimentResult(cfg, results, aggregates, refs, out_dir)
    if out_dir is not None:
        write_outputs(result)
    return result


def write_outputs(result: ExperimentResult) -> None:
    out = result.output_dir
    out.mkdir(parents=True, exist_ok=True)
    for r in result.trials:
        if not r.failed and r.log_path is not None:
            rep = trial_report(r, result.config)
            r.log_path.with_name(r.log_path.stem + "_metrics.csv").write_text(rep.to_csv())
    for agg in result.aggregates:
        _write_csv(out / f"{agg.algorithm}_aggregate.csv", agg.table())
    if result.aggregates:
        _write_csv(out / "comparison.csv", comparison_table(result.aggregates))
    summary = {
        "config": result.config.to_dict(),
        "references": [None if not math.isfinite(v) else float(v) for v in result.references],
        "trials": [
            {"algorithm": r.algorithm, "trial": r.trial, "seed": r.seed,
             "observations": len(r.history), "dispatched": r.stats.dispatched,
             "failed": r.failed, "error": r.error,
             "log": str(r.log_path) if r.log_path else None,
             "policy": r.policy.to_record() if r.policy else None}
            for r in result.trials
        ],
        "final_total_approx_regret": {
            agg.algorithm: [float(rep.total_approx_regret[-1]) for rep in agg.reports]
            for agg in result.aggregates
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))


def report_from_log(path, truth=None, epsilon: Optional[float] = None) -> RegretReport:
    """Regret report recomputed from a run log alone.

    When the logged config describes a grid benchmark its truth table is
    rebuilt, so the result matches the report computed during the run.
    """
    from .config import config_from_dict

    header, history, tasks = history_from_log(path)
    cfg = config_from_dict(header["config"])
    bench = build_benchmark(cfg, _truth_seed(cfg, int(header["trial"])))
    return regret_report(history, tasks, cfg.epsilon if epsilon is None else epsilon,
                         truth=truth if truth is not None else bench.truth,
                         hp=bench.hyperparams)


def export_log(path, fmt: str) -> str:
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown export format {fmt!r}")
    header, history, _ = history_from_log(path)
    records = [o.to_record() for o in history]
    if fmt == "json":
        return json.dumps({"header": header, "observations": records}) + "\n"
    dim = len(records[0]["action"]) if records else 0
    cols = ["round", "task", *[f"action_{d}" for d in range(dim)], "reward",
            "worker_id", "dispatched_at", "completed_at"]
    lines = [",".join(cols)]
    for r in records:
        row = [r["round"], r["task"], *r["action"], r["reward"],
               r["worker_id"], r["dispatched_at"], r["completed_at"]]
        lines.append(",".join("" if v is None else repr(v) for v in row))
    return "\n".join(lines) + "\n"
