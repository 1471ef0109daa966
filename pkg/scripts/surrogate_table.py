"""Describe the default surrogate tasks: reward range and grid argmax location."""

import numpy as np

from mtbo.benchsuite import DEFAULT_PARAMS, POWER_BOUNDS, surrogate_reward_grid

N = 50


def main():
    g = np.linspace(*POWER_BOUNDS, N)
    print("task   min_reward   max_reward    range   argmax (p_co, p_cc)   interior")
    for task in range(DEFAULT_PARAMS.n_tasks):
        r = surrogate_reward_grid(DEFAULT_PARAMS, task, N)
        i, j = np.unravel_index(np.argmax(r), r.shape)
        inside = 0 < i < N - 1 and 0 < j < N - 1
        print(f"{task:4d}  {r.min():11.3f}  {r.max():11.3f}  {np.ptp(r):7.3f}   "
              f"({g[i]:.3f}, {g[j]:.3f})        {inside}")


if __name__ == "__main__":
    main()
