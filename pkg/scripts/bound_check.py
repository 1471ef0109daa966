"""Empirical regret bound check; writes a per-round CSV and prints a verdict.

    python scripts/bound_check.py configs/bound_check.toml [out.csv]
"""

import sys

import numpy as np

from mtbo.boundcheck import bound_check
from mtbo.config import load_config


def main():
    cfg = load_config(sys.argv[1] if len(sys.argv) > 1 else "configs/bound_check.toml")
    res = bound_check(cfg)
    if len(sys.argv) > 2:
        with open(sys.argv[2], "w") as fh:
            fh.write(res.to_csv())
    for t in (1, 5, 10, 20, 40, len(res.rounds)):
        if t <= len(res.rounds):
            i = t - 1
            print(f"t={t:3d}  mean R={res.mean_regret[i]:.4f} (se {res.se_regret[i]:.4f})  "
                  f"gamma_hat={res.gamma[i]:7.3f}  bound={res.bound[i]:.3f}")
    print(f"holds at every round: {res.holds}; "
          f"max ratio {np.max(res.mean_regret / res.bound):.4f}")


if __name__ == "__main__":
    main()
