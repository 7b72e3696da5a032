import math

import numpy as np
import pytest

from offlinelp import case1 as c1
from offlinelp.data import (
    DataDistribution,
    Dataset,
    behavior_policy,
    empirical_model,
    population_model,
    sample_dataset,
)
from offlinelp.harness import generate_garnet, generate_mu
from offlinelp.mdp import occupancy_measure, optimal_profile, return_of

from conftest import random_dist, random_mdp


class TestThresholds:
    def test_general_unit(self):
        delta = 0.1
        assert c1.threshold_general(1.0, math.e * delta, 1.0, delta, 2) == pytest.approx(1.0)

    def test_general_scaling(self):
        a = c1.threshold_general(2.0, 4, 9, 0.05, 100)
        assert c1.threshold_general(2.0, 4, 9, 0.05, 400) == pytest.approx(a / 2)

    def test_general_log_additivity(self):
        n, delta = 50, 0.2
        e1 = c1.threshold_general(1.0, 3, 5, delta, n)
        e2 = c1.threshold_general(1.0, 3, 5, delta / math.e**2, n)
        assert e2**2 * n / 2 - e1**2 * n / 2 == pytest.approx(2.0)

    def test_tabular_unit(self):
        assert c1.threshold_tabular(1.0, 1, 1, math.exp(-1), 1) == pytest.approx(math.log(4))

    def test_tabular_scaling(self):
        a = c1.threshold_tabular(3.0, 5, 2, 0.05, 1000)
        assert c1.threshold_tabular(3.0, 5, 2, 0.05, 4000) == pytest.approx(a / 2)

    def test_tabular_action_ratio(self):
        r = c1.threshold_tabular(1, 4, 2, 0.1, 10) / c1.threshold_tabular(1, 4, 6, 0.1, 10)
        assert r == pytest.approx(math.log(6) / math.log(14))

    def test_rejects_n(self):
        with pytest.raises(ValueError):
            c1.threshold_tabular(1, 2, 2, 0.1, 0)


class TestBounds:
    def test_identity_with_threshold(self):
        args = (2.0, 8.0, 27.0, 0.05, 300)
        assert c1.bound_main1(*args, 0.7) == pytest.approx(2 * c1.threshold_general(*args) / 0.3)

    def test_gamma_ratio(self):
        assert c1.bound_main1(1, 4, 4, 0.1, 10, 0.9) / c1.bound_main1(1, 4, 4, 0.1, 10, 0.0) == pytest.approx(10)

    def test_arithmetic(self):
        delta = 0.3
        assert c1.bound_main1(1.0, math.e * delta, 1.0, delta, 8, 0.5) == pytest.approx(2.0)

    def test_variants_reported(self):
        v = c1.tabular_bound_variants(2.0, 8, 3, 0.05, 1000, 0.9)
        assert set(v) == {"program", "proof", "theorem"}
        assert v["theorem"] == pytest.approx(c1.bound_tabular(2.0, 8, 3, 0.05, 1000, 0.9))

    def test_config_defaults_to_extreme_points(self):
        cfg = c1.Case1Config(b_w=1.0, delta=0.1, threshold_mode="general")
        assert cfg.cardinalities(3, 2) == (8.0, 27.0)


class TestSignVector:
    def _model(self, residual):
        S = len(residual)
        k = np.eye(S)
        return type("M", (), {"k_d": k})(), np.asarray(residual, float)

    def test_mixed(self):
        model, res = self._model([0.5, -0.2])
        x = c1.sign_vector(model, res, 0.0, np.zeros(2))
        np.testing.assert_array_equal(x, [1, -1])
        assert x @ res == pytest.approx(0.7)

    def test_zero_residual(self):
        model, res = self._model([0.0, 0.0, 0.0])
        x = c1.sign_vector(model, res, 0.0, np.zeros(3))
        np.testing.assert_array_equal(x, [1, 1, 1])

    def test_dual_norm(self, rng):
        mdp = random_mdp(rng, 5, 2)
        pop = population_model(mdp, random_dist(rng, 5, 2))
        w = rng.uniform(0, 2, 10)
        x = c1.sign_vector(pop, w, mdp.discount, mdp.initial_dist)
        res = pop.k_d @ w - (1 - mdp.discount) * mdp.initial_dist
        assert x @ res == pytest.approx(np.abs(res).sum(), abs=1e-12)


def garnet_instance(seed, alpha=0.5):
    mdp = generate_garnet(6, 3, 0.9, 3, seed)
    prof = optimal_profile(mdp)
    return mdp, prof, generate_mu(mdp, prof, alpha)


class TestSolveCase1:
    def test_population_limit_is_optimal(self):
        for seed in range(5):
            mdp, prof, dist = garnet_instance(seed)
            pop = population_model(mdp, dist)
            cfg = c1.Case1Config(b_w=4.0, delta=0.05, threshold_mode="explicit", epsilon=0.0)
            sol = c1.solve_case1(pop, mdp.initial_dist, behavior_policy(dist), cfg, n=1)
            j_star = return_of(mdp, prof.greedy_policy(), mdp.initial_dist)
            assert sol.status == "optimal"
            assert sol.objective == pytest.approx(j_star, abs=1e-7)
            assert j_star - return_of(mdp, sol.policy, mdp.initial_dist) <= 1e-7

    def test_vacuous_budget_gamma_zero(self, rng):
        mdp = random_mdp(rng, 4, 3, gamma=0.0)
        dist = random_dist(rng, 4, 3)
        data = sample_dataset(mdp, dist, 300, 1)
        model = empirical_model(data, mdp.reward, 0.0, 4, 3)
        cfg = c1.Case1Config(b_w=2.5, delta=0.1, threshold_mode="explicit", epsilon=math.inf)
        sol = c1.solve_case1(model, mdp.initial_dist, behavior_policy(dist), cfg, n=300)
        expected = 2.5 * model.u_d.reshape(4, 3).max(axis=1).sum()
        assert sol.objective == pytest.approx(expected, abs=1e-9)

    def test_single_sample_infeasible(self):
        mdp = generate_garnet(3, 2, 0.9, 2, 0)
        dist = DataDistribution(np.full(6, 1 / 6), 3, 2)
        data = Dataset(np.array([0]), np.array([0]), np.array([1]), np.array([0.5]))
        model = empirical_model(data, mdp.reward, mdp.discount, 3, 2)
        cfg = c1.Case1Config(b_w=2.0, delta=0.1, threshold_mode="explicit", epsilon=0.0)
        sol = c1.solve_case1(model, mdp.initial_dist, behavior_policy(dist), cfg, n=1)
        assert sol.status == "infeasible"

    def test_constraints_honoured_and_monotone(self):
        mdp, prof, dist = garnet_instance(3)
        data = sample_dataset(mdp, dist, 2000, 9)
        model = empirical_model(data, mdp.reward, mdp.discount, 6, 3)
        pi_mu = behavior_policy(dist)
        last = -math.inf
        for eps in [0.02, 0.05, 0.1, 0.2, 0.4, 0.8]:
            cfg = c1.Case1Config(b_w=4.0, delta=0.1, threshold_mode="explicit", epsilon=eps)
            sol = c1.solve_case1(model, mdp.initial_dist, pi_mu, cfg, n=2000)
            if sol.status != "optimal":
                continue
            assert sol.l1_residual <= eps + 1e-9
            assert np.all(sol.w_d >= 0)
            assert np.all(sol.w_d.reshape(6, 3).sum(axis=1) <= 4.0 + 1e-9)
            assert sol.objective >= last - 1e-9
            last = sol.objective
        assert last > -math.inf

    def test_optimal_ratio_is_feasible(self):
        mdp, prof, dist = garnet_instance(1)
        pop = population_model(mdp, dist)
        theta = occupancy_measure(mdp, prof.greedy_policy(), mdp.initial_dist)
        w_star = np.divide(theta, dist.mu, out=np.zeros_like(theta), where=dist.mu > 0)
        res = pop.k_d @ w_star - (1 - mdp.discount) * mdp.initial_dist
        assert np.abs(res).sum() <= 1e-10

    def test_report_schema(self):
        mdp, prof, dist = garnet_instance(2)
        pop = population_model(mdp, dist)
        cfg = c1.Case1Config(b_w=4.0, delta=0.05, threshold_mode="tabular")
        d = c1.solve_case1(pop, mdp.initial_dist, behavior_policy(dist), cfg, n=100).to_dict()
        assert set(d) == {"w", "l1_residual", "objective", "policy", "bound_rhs", "epsilon", "status"}
