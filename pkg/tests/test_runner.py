import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from mtbo.acquisition import GpCache, run_strategy
from mtbo.config import (OUTPUT_ENV, BenchmarkConfig, ConfigError, ExperimentConfig,
                         LatencyModel, StrategySection, build_benchmark, config_from_dict,
                         load_config, strategy_config)
from mtbo.runner import (execute, export_log, read_run_log, report_from_log, resume,
                         run_experiment, run_trial)

PRIOR = ExperimentConfig(
    name="prior-small", seed=3, trials=2, grid_points=10,
    strategy=StrategySection(("mts",), capital=40, init_capital=6, candidates_per_round=100),
    benchmark=BenchmarkConfig(kind="prior", n_tasks=3, lengthscale=0.2),
)

SPHERE = ExperimentConfig(
    name="sphere-small", seed=1, trials=1,
    strategy=StrategySection(("mts",), capital=16, init_capital=6, candidates_per_round=64,
                             n_starts=2),
    benchmark=BenchmarkConfig(kind="sphere", n_tasks=3, dim=2),
)


def strip_timing(records):
    keys = ("worker_id", "dispatched_at", "completed_at")
    return [{k: v for k, v in r.items() if k not in keys} for r in records]


def log_lines(path):
    return Path(path).read_text().splitlines()


class TestConfig:
    def test_toml_sections(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("""
[experiment]
name = "t"
seed = 5
trials = 2
workers = 4

[tasks]
weights = [1.0, 2.0, 0.5]

[actions]
grid_points = 10

[strategy]
algorithms = ["mts", "random"]
capital = 30
init_capital = 6

[benchmark]
kind = "prior"
n_tasks = 3

[latency]
kind = "uniform"
lo = 0.5
hi = 2.0
""")
        cfg = load_config(p)
        assert cfg.weights == (1.0, 2.0, 0.5)
        assert cfg.strategy.algorithms == ("mts", "random")
        assert cfg.latency.kind == "uniform"
        assert config_from_dict(cfg.to_dict()) == cfg

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.toml")

    @pytest.mark.parametrize("text", [
        "[experiment]\nworkers = 0\n",
        "[experiment]\ntrials = 0\n",
        "[strategy]\nalgorithms = ['ucb']\n",
        "[strategy]\nbogus = 1\n",
        "[latency]\nkind = 'uniform'\nlo = 2.0\nhi = 1.0\n",
        "[latency]\nkind = 'weibull'\n",
        "not toml [[[",
    ])
    def test_invalid(self, tmp_path, text):
        p = tmp_path / "bad.toml"
        p.write_text(text)
        with pytest.raises(ConfigError):
            load_config(p)

    def test_weights_length_checked(self):
        with pytest.raises(ConfigError):
            build_benchmark(replace(PRIOR, weights=(1.0, 1.0)))

    def test_hash_ignores_output_dir(self):
        assert replace(PRIOR, output_dir="elsewhere").config_hash() == PRIOR.config_hash()
        assert replace(PRIOR, seed=4).config_hash() != PRIOR.config_hash()

    def test_latency_models(self):
        rng = np.random.default_rng(0)
        assert LatencyModel("constant", value=2.0).sample(rng) == 2.0
        assert 0.5 <= LatencyModel("uniform", lo=0.5, hi=1.0).sample(rng) <= 1.0
        assert LatencyModel("lognormal", mu=0.0, sigma=0.5).sample(rng) > 0


class TestExecutor:
    def setup_method(self):
        self.bench = build_benchmark(PRIOR)
        self.scfg = strategy_config(PRIOR, "mts", 3, self.bench)

    def run(self, workers, latency=LatencyModel(), capital=None):
        scfg = replace(self.scfg, capital=capital) if capital else self.scfg
        return execute(self.bench.tasks, self.bench.actions, scfg, self.bench.objective,
                       workers, latency)

    def test_single_worker_matches_sequential(self):
        h_async, stats = self.run(1)
        h_seq, _ = run_strategy(self.bench.objective, self.bench.tasks, self.bench.actions,
                                self.scfg)
        a = strip_timing([o.to_record() for o in h_async])
        b = strip_timing([o.to_record() for o in h_seq])
        assert a == b
        assert stats.snapshot_sizes[0] == list(range(self.scfg.capital))

    def test_capital_conservation(self):
        for workers in (1, 3, 20):
            h, stats = self.run(workers, LatencyModel("uniform", lo=0.5, hi=3.0))
            assert stats.dispatched == stats.completed + stats.failed == self.scfg.capital
            assert sorted(o.round for o in h) == list(range(1, self.scfg.capital + 1))

    def test_twenty_workers_deterministic(self):
        h1, _ = self.run(20, capital=125)
        h2, _ = self.run(20, capital=125)
        assert len(h1) == 125
        assert [o.to_record() for o in h1] == [o.to_record() for o in h2]
        assert {o.worker_id for o in h1} == set(range(20))

    def test_second_worker_does_not_see_inflight(self):
        _, stats = self.run(2)
        # both workers dispatch at time 0 on an empty history
        assert stats.snapshot_sizes[0][0] == 0
        assert stats.snapshot_sizes[1][0] == 0
        assert stats.snapshot_sizes[0][1] == 2

    def test_snapshot_monotone(self):
        _, stats = self.run(5, LatencyModel("lognormal", mu=0.0, sigma=1.0))
        for sizes in stats.snapshot_sizes.values():
            assert sizes == sorted(sizes)

    def test_failure_is_reported(self):
        calls = []

        def flaky(task, action, rng):
            calls.append(task)
            if len(calls) == 5:
                raise RuntimeError("simulator crashed")
            return 0.0

        from mtbo.runner import TrialFailed
        with pytest.raises(TrialFailed) as info:
            execute(self.bench.tasks, self.bench.actions, self.scfg, flaky, 2)
        stats = info.value.stats
        assert stats.failed == 1
        assert stats.completed == 4


class TestRunExperiment:
    def test_logs_byte_identical(self, tmp_path):
        cfg = replace(PRIOR, output_dir=str(tmp_path))
        first = [t.log_path.read_bytes() for t in run_experiment(cfg).trials]
        second = [t.log_path.read_bytes() for t in run_experiment(cfg).trials]
        assert first == second

    def test_outputs(self, tmp_path):
        cfg = replace(PRIOR, output_dir=str(tmp_path), trials=3,
                      strategy=replace(PRIOR.strategy, algorithms=("mts", "random")))
        res = run_experiment(cfg)
        header, observations = read_run_log(res.trials[0].log_path)
        assert header["config"] == cfg.to_dict()
        assert header["config_hash"] == cfg.config_hash()
        assert len(observations) == 40
        agg = (tmp_path / "mts_aggregate.csv").read_text().splitlines()
        cols = agg[0].split(",")
        assert "total_approx_regret_mean" in cols and "total_approx_regret_se" in cols
        assert "total_norm_regret_mean" in cols
        assert len(agg) == 42
        comp = (tmp_path / "comparison.csv").read_text().splitlines()[0]
        assert "mts_total_approx_regret_mean" in comp and "random_total_approx_regret_se" in comp
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert len(summary["trials"]) == 6

    def test_output_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
        res = run_experiment(replace(PRIOR, trials=1, output_dir=str(tmp_path / "cfg")))
        assert res.output_dir == tmp_path / "env"
        assert (tmp_path / "env" / "summary.json").exists()
        assert not (tmp_path / "cfg").exists()

    def test_failed_trial_keeps_partial_log(self, tmp_path, monkeypatch):
        from mtbo import benchsuite

        original = benchsuite.NoisyObjective.__call__
        count = {"n": 0}

        def crash(self, task, action, rng):
            count["n"] += 1
            if count["n"] == 10:
                raise RuntimeError("boom")
            return original(self, task, action, rng)

        monkeypatch.setattr(benchsuite.NoisyObjective, "__call__", crash)
        res = run_experiment(replace(PRIOR, output_dir=str(tmp_path)))
        assert res.trials[0].failed and not res.trials[1].failed
        _, obs = read_run_log(res.trials[0].log_path)
        assert len(obs) == 9
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["trials"][0]["failed"]


class TestResume:
    def test_interrupted_run(self, tmp_path):
        cfg = replace(PRIOR, trials=1, strategy=replace(PRIOR.strategy, capital=125, init_capital=9))
        full = run_trial(cfg, "mts", 0, tmp_path / "full")
        part = run_trial(cfg, "mts", 0, tmp_path / "part", stop_after=50)
        assert len(part.history) == 50
        with open(part.log_path, "a") as fh:
            fh.write('{"round": 51, "task": 1, "act')  # torn write
        res = resume(part.log_path, cfg)
        assert len(res.history) == 125
        _, obs = read_run_log(part.log_path)
        assert [o.to_record() for o in obs] == [o.to_record() for o in full.history]

    def test_completed_is_noop(self, tmp_path):
        cfg = replace(PRIOR, trials=1)
        done = run_trial(cfg, "mts", 0, tmp_path)
        before = done.log_path.read_bytes()
        res = resume(done.log_path, cfg)
        assert res.stats.completed == 0
        assert done.log_path.read_bytes() == before

    def test_config_mismatch(self, tmp_path):
        done = run_trial(replace(PRIOR, trials=1), "mts", 0, tmp_path)
        with pytest.raises(ConfigError):
            resume(done.log_path, replace(PRIOR, trials=1, seed=99))

    def test_sphere_resume_with_fitting(self, tmp_path):
        full = run_trial(SPHERE, "mts", 0, tmp_path / "full")
        part = run_trial(SPHERE, "mts", 0, tmp_path / "part", stop_after=9)
        resume(part.log_path, SPHERE)
        assert log_lines(part.log_path)[1:] == log_lines(full.log_path)[1:]


class TestReplay:
    def test_metrics_from_log_equal_in_process(self, tmp_path):
        res = run_experiment(replace(PRIOR, trials=1, output_dir=str(tmp_path)))
        trial = res.trials[0]
        from mtbo.runner import trial_report
        live = trial_report(trial, res.config)
        replayed = report_from_log(trial.log_path)
        assert replayed.to_csv() == live.to_csv()
        assert json.dumps(replayed.to_dict()) == json.dumps(live.to_dict())

    def test_export(self, tmp_path):
        trial = run_trial(replace(PRIOR, trials=1), "mts", 0, tmp_path)
        csv_text = export_log(trial.log_path, "csv")
        assert csv_text.splitlines()[0].startswith("round,")
        assert len(csv_text.splitlines()) == 41
        data = json.loads(export_log(trial.log_path, "json"))
        assert len(data["observations"]) == 40
        with pytest.raises(ValueError):
            export_log(trial.log_path, "xml")

    def test_duplicate_header_rejected(self, tmp_path):
        trial = run_trial(replace(PRIOR, trials=1), "mts", 0, tmp_path)
        lines = log_lines(trial.log_path)
        trial.log_path.write_text("\n".join([lines[0]] + lines) + "\n")
        with pytest.raises(ValueError):
            read_run_log(trial.log_path)


def test_surrogate_table_from_config(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text("""
[benchmark]
kind = "tokamak"

[[benchmark.tokamak.tasks]]
c_stab = 1.0
k_stab = 5.0
c_pres = 1.0
k_pres = 1.0

[[benchmark.tokamak.tasks]]
c_stab = 0.5
k_stab = 3.0
c_pres = 2.0
k_pres = 1.5
""")
    bench = build_benchmark(load_config(p))
    assert len(bench.tasks) == 2
    assert bench.source.tasks[1].k_pres == 1.5
