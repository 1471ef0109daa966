"""Run a config and summarize final total approximate regret per algorithm.

    python scripts/compare_strategies.py configs/tokamak.toml [--trials N]
"""

import argparse
import logging
from dataclasses import replace

import numpy as np

from mtbo.config import load_config
from mtbo.runner import run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--trials", type=int)
    ap.add_argument("--no-write", action="store_true", help="skip logs and CSV outputs")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config)
    if args.trials:
        cfg = replace(cfg, trials=args.trials)
    res = run_experiment(cfg, write=not args.no_write)
    final = {a.algorithm: np.array([r.total_approx_regret[-1] for r in a.reports])
             for a in res.aggregates}
    for alg, v in final.items():
        se = v.std(ddof=1) / np.sqrt(len(v)) if len(v) > 1 else 0.0
        print(f"{alg:>11}: final total approximate regret {v.mean():8.3f} +- {se:.3f}")
    if "mts" in final:
        for other in final:
            if other != "mts":
                wins = int(np.sum(final["mts"] < final[other]))
                print(f"mts better than {other} in {wins}/{len(final['mts'])} paired seeds")
    if res.output_dir:
        print(f"outputs in {res.output_dir}")


if __name__ == "__main__":
    main()
