"""Command line interface.

    mtbo run CONFIG [--resume LOG]
    mtbo metrics LOG [--truth TABLE] [--epsilon E] [--format csv|json]
    mtbo bound-check CONFIG
    mtbo bench [--seed N] [--trials N] ...
    mtbo export LOG --format csv|json

Exit status: 0 on success, 1 for usage or configuration errors, 2 for
runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import BenchmarkConfig, ConfigError, ExperimentConfig, StrategySection, load_config
from .metrics import GroundTruthTable

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mtbo", description="Multi-task Thompson sampling experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="execute an experiment from a TOML config")
    run.add_argument("config")
    run.add_argument("--resume", metavar="LOG", help="continue an interrupted run log")

    met = sub.add_parser("metrics", help="recompute regret curves from a run log")
    met.add_argument("runlog")
    met.add_argument("--truth", help="ground-truth table (JSON)")
    met.add_argument("--epsilon", type=float)
    met.add_argument("--format", choices=("csv", "json"), default="csv")

    bc = sub.add_parser("bound-check", help="prior-sampled regret bound verification")
    bc.add_argument("config")
    bc.add_argument("--output", help="write the CSV here instead of stdout")

    bench = sub.add_parser("bench", help="tokamak surrogate: mts vs uniform_ts vs random")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--trials", type=int, default=3)
    bench.add_argument("--capital", type=int, default=125)
    bench.add_argument("--init", type=int, default=40)
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--candidates", type=int, default=500)
    bench.add_argument("--output-dir", help="also write logs and aggregates here")

    exp = sub.add_parser("export", help="convert a run log to CSV or JSON")
    exp.add_argument("runlog")
    exp.add_argument("--format", choices=("csv", "json"), required=True)
    return p


def _cmd_run(args) -> int:
    from .runner import resume, run_experiment

    cfg = load_config(args.config)
    if args.resume:
        res = resume(args.resume, cfg)
        print(f"{res.log_path}: {len(res.history)} observations")
        return EXIT_OK
    result = run_experiment(cfg)
    print(f"wrote {result.output_dir}")
    if result.failed:
        print(f"{len(result.failed)} trial(s) failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_metrics(args) -> int:
    from .runner import report_from_log

    truth = GroundTruthTable.from_json(Path(args.truth).read_text()) if args.truth else None
    report = report_from_log(args.runlog, truth=truth, epsilon=args.epsilon)
    if args.format == "csv":
        sys.stdout.write(report.to_csv())
    else:
        print(json.dumps(report.to_dict()))
    return EXIT_OK


def _cmd_bound_check(args) -> int:
    from .boundcheck import bound_check

    res = bound_check(load_config(args.config))
    text = res.to_csv()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"bound holds at all {len(res.rounds)} rounds: {res.holds}", file=sys.stderr)
    return EXIT_OK if res.holds else EXIT_RUNTIME


def bench_config(args) -> ExperimentConfig:
    return ExperimentConfig(
        name="bench", seed=args.seed, trials=args.trials, workers=args.workers,
        output_dir=args.output_dir or "runs/bench",
        strategy=StrategySection(("mts", "uniform_ts", "random"), args.capital, args.init,
                                 args.candidates),
        benchmark=BenchmarkConfig(kind="tokamak"),
    )


def _cmd_bench(args) -> int:
    from .runner import comparison_table, run_experiment, table_to_csv

    result = run_experiment(bench_config(args), write=args.output_dir is not None)
    sys.stdout.write(table_to_csv(comparison_table(result.aggregates)))
    return EXIT_RUNTIME if result.failed else EXIT_OK


def _cmd_export(args) -> int:
    from .runner import export_log

    sys.stdout.write(export_log(args.runlog, args.format))
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run,
    "metrics": _cmd_metrics,
    "bound-check": _cmd_bound_check,
    "bench": _cmd_bench,
    "export": _cmd_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure
        logging.getLogger("mtbo").debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
