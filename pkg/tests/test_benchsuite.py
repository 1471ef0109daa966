import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtbo.benchsuite import (DEFAULT_PARAMS, POWER_BOUNDS, NoiseModel, NoisyObjective,
                             TokamakSurrogateParams, TokamakTaskParams, effective_power,
                             noisy_evaluate, sample_prior_truth, sphere_tasks,
                             surrogate_optimum, surrogate_reward_grid, tokamak_surrogate)
from mtbo.domain import DomainError
from mtbo.gp import GpHyperparams
from mtbo.metrics import GroundTruthTable

from oracles import kmat

power = st.floats(POWER_BOUNDS[0], POWER_BOUNDS[1])


class TestTokamakSurrogate:
    @settings(max_examples=200)
    @given(st.integers(0, 7), power, power)
    def test_reward_composition(self, task, p_co, p_cc):
        out = tokamak_surrogate(DEFAULT_PARAMS, task, (p_co, p_cc))
        assert out.reward - (10 * out.pressure + 100 * out.stability) == pytest.approx(0, abs=1e-9)

    def test_task0_regression_values(self):
        low = tokamak_surrogate(DEFAULT_PARAMS, 0, (0.001, 0.001)).reward
        high = tokamak_surrogate(DEFAULT_PARAMS, 0, (1.0, 1.0)).reward
        assert low == pytest.approx(-107.33844845018025, abs=1e-9)
        assert high == pytest.approx(10.083887167351115, abs=1e-9)
        # same numbers from the closed form by hand
        assert low == pytest.approx(10 * (1 + 1.245 * math.exp(-0.005))
                                    - 100 * 1.32347 * math.exp(-0.02), abs=1e-9)

    def test_monotone_in_effective_power(self):
        rng = np.random.default_rng(0)
        for task in range(DEFAULT_PARAMS.n_tasks):
            tp = DEFAULT_PARAMS.tasks[task]
            for _ in range(1000):
                a, b = rng.uniform(*POWER_BOUNDS, (2, 2))
                pa, pb = effective_power(tp, a), effective_power(tp, b)
                if pa == pb:
                    continue
                lo, hi = (a, b) if pa < pb else (b, a)
                s_lo = tokamak_surrogate(DEFAULT_PARAMS, task, lo)
                s_hi = tokamak_surrogate(DEFAULT_PARAMS, task, hi)
                assert s_lo.stability < s_hi.stability
                assert s_lo.pressure > s_hi.pressure

    def test_stability_nonpositive(self):
        g = np.linspace(*POWER_BOUNDS, 7)
        for task in range(8):
            assert all(tokamak_surrogate(DEFAULT_PARAMS, task, (a, b)).stability <= 0
                       for a in g for b in g)

    @pytest.mark.parametrize("action", [(0.0, 0.5), (0.5, 1.01), (0.5,), (0.5, 0.5, 0.5)])
    def test_out_of_bounds(self, action):
        with pytest.raises(DomainError):
            tokamak_surrogate(DEFAULT_PARAMS, 0, action)

    def test_invalid_task(self):
        with pytest.raises(DomainError):
            tokamak_surrogate(DEFAULT_PARAMS, 8, (0.5, 0.5))

    def test_param_validation(self):
        with pytest.raises(ValueError):
            TokamakTaskParams(1.0, 0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            TokamakTaskParams(1.0, 1.0, 1.0, 1.0, w_co=0.0, w_cc=0.0)

    def test_constant_task(self):
        params = DEFAULT_PARAMS.with_constant_task(10.0)
        assert params.n_tasks == 9
        g = surrogate_reward_grid(params, 8, n=9)
        np.testing.assert_allclose(g, 10.0)

    def test_params_dict_roundtrip(self):
        assert TokamakSurrogateParams.from_dict(DEFAULT_PARAMS.to_dict()) == DEFAULT_PARAMS

    def test_grid_bounded_and_optimum(self):
        for task in range(8):
            g = surrogate_reward_grid(DEFAULT_PARAMS, task, n=50)
            assert np.all(np.isfinite(g))
            assert g.max() <= surrogate_optimum(DEFAULT_PARAMS, task) + 1e-9

    def test_small_steps_small_changes(self):
        rng = np.random.default_rng(1)
        for task in range(8):
            a = rng.uniform(0.01, 0.99, 2)
            r0 = tokamak_surrogate(DEFAULT_PARAMS, task, a).reward
            r1 = tokamak_surrogate(DEFAULT_PARAMS, task, a + 1e-7).reward
            assert abs(r1 - r0) < 1e-3


class TestPriorTruth:
    grid = [(x,) for x in np.linspace(0, 1, 10)]

    def test_degenerate_prior(self):
        hp = GpHyperparams((0.2,), 1e-12, 0.01)
        t = sample_prior_truth(3, self.grid, hp, 0)
        assert np.all(np.abs(t.values) < 1e-5)

    def test_deterministic(self):
        hp = GpHyperparams((0.2,), 1.0, 0.01)
        a = sample_prior_truth(3, self.grid, hp, 4)
        b = sample_prior_truth(3, self.grid, hp, 4)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.values.shape == (3, 10)

    def test_moments(self):
        hp = GpHyperparams((0.2,), 1.5, 0.01)
        # 200 seeds x 5 independent tasks per seed: 1000 draws per grid point
        draws = np.vstack([sample_prior_truth(5, self.grid, hp, s).values for s in range(200)])
        var = draws.var(0, ddof=1)
        assert np.all(np.abs(var - 1.5) <= 0.15 * 1.5)
        K = kmat(self.grid, self.grid, hp.lengthscales, 1.5)
        emp = np.cov(draws.T)
        assert np.abs(emp - K).max() <= 0.2 * 1.5

    def test_empty_grid(self):
        with pytest.raises(DomainError):
            sample_prior_truth(2, [], GpHyperparams((0.2,)), 0)


class TestNoise:
    def test_zero_noise(self):
        t = GroundTruthTable(((0.0,), (1.0,)), [[1.0, 2.0]])
        assert noisy_evaluate(t, 0, (1.0,), NoiseModel(0.0), np.random.default_rng(0)) == 2.0

    def test_std(self):
        rng = np.random.default_rng(0)
        ys = [noisy_evaluate(DEFAULT_PARAMS, 2, (0.3, 0.3), NoiseModel(0.1), rng) for _ in range(10_000)]
        assert np.std(ys) == pytest.approx(0.1, rel=0.05)
        assert np.mean(ys) == pytest.approx(tokamak_surrogate(DEFAULT_PARAMS, 2, (0.3, 0.3)).reward,
                                            abs=0.01)

    def test_reproducible(self):
        obj = NoisyObjective(DEFAULT_PARAMS, NoiseModel(0.5))
        a = [obj(1, (0.2, 0.4), np.random.default_rng(9)) for _ in range(3)]
        assert a[0] == a[1] == a[2]

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            NoiseModel(-0.1)


def test_sphere_family():
    f, space = sphere_tasks(3, dim=2, seed=0)
    assert space.dim == 2
    assert all(f(x, (0.5, 0.5)) <= 0 for x in range(3))
