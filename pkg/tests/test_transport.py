import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dprm_lab import (
    CostMatrix,
    DimensionMismatch,
    InfeasibleInput,
    NoConvergence,
    ValidationError,
    ot_grad_source,
    solve_exact,
    solve_sinkhorn,
    w1_line_oracle,
    wasserstein_p,
)
from dprm_lab.transport import index_cost_matrix, ot_value_and_grad, plan_to_json, sinkhorn_loss

from conftest import simplex_pairs

E = np.eye(6)


def simplex_vectors(d=6):
    return arrays(np.float64, d, elements=st.floats(0, 1)).filter(lambda x: x.sum() > 1e-3).map(lambda x: x / x.sum())


class TestCostMatrix:
    def test_first_row(self, cost):
        assert cost.entries[0].tolist() == [0, 0.5, 2, 2, 2.5, 4]

    def test_equal_reward_pair(self, cost):
        assert cost.entries[2, 3] == 0
        assert np.all(np.diag(cost.entries) == 0)
        assert cost.is_symmetric()

    @pytest.mark.parametrize("bad", [np.ones((2, 3)), -np.ones((2, 2)), np.full((2, 2), np.inf)])
    def test_rejects(self, bad):
        with pytest.raises(ValidationError):
            CostMatrix(bad)

    def test_index_cost(self):
        assert index_cost_matrix(3).entries.tolist() == [[0, 1, 2], [1, 0, 1], [2, 1, 0]]


class TestExact:
    def test_identity(self, cost, rng):
        mu = rng.dirichlet(np.ones(6))
        plan, _ = solve_exact(mu, mu, cost)
        assert plan.cost == pytest.approx(0, abs=1e-12)
        np.testing.assert_allclose(plan.plan, np.diag(mu), atol=1e-12)

    def test_forced_corner(self, cost):
        plan, _ = solve_exact(E[0], E[5], cost)
        assert plan.cost == 4
        assert plan.plan[0, 5] == 1 and plan.plan.sum() == 1

    def test_single_move(self, cost):
        plan, _ = solve_exact([0.9, 0, 0.1, 0, 0, 0], [0.9, 0.1, 0, 0, 0, 0], cost)
        assert plan.cost == pytest.approx(0.15, abs=1e-12)

    @pytest.mark.parametrize("mu, nu, expected", [(E[0], E[1], 0.5), (E[0], E[5], 4.0)])
    def test_w1_values(self, cost, mu, nu, expected):
        assert wasserstein_p(mu, nu, cost) == pytest.approx(expected, abs=1e-12)

    def test_wp_identity(self, cost, rng):
        mu = rng.dirichlet(np.ones(6))
        for p in (1, 2, 3):
            assert wasserstein_p(mu, mu, cost, p) == pytest.approx(0, abs=1e-9)
        with pytest.raises(ValidationError):
            wasserstein_p(mu, mu, cost, 0.5)

    def test_w2_forced(self, cost):
        assert wasserstein_p(E[0], E[5], cost, 2) == pytest.approx(4.0)

    @pytest.mark.parametrize("mu, nu, exc", [
        ([0.5, 0.6, 0, 0, 0, 0], E[0], InfeasibleInput),
        ([1.0, 0, 0, 0, 0], E[0], DimensionMismatch),
    ])
    def test_bad_marginals(self, cost, mu, nu, exc):
        with pytest.raises(exc):
            solve_exact(mu, nu, cost)

    def test_duals_close_gap(self, cost):
        for mu, nu in zip(*simplex_pairs(5, 100, alpha=0.5)):
            plan, duals = solve_exact(mu, nu, cost)
            assert duals.objective(mu, nu) == pytest.approx(plan.cost, abs=1e-9)
            slack = cost.entries - duals.f[:, None] - duals.g[None, :]
            assert slack.min() >= -1e-9
            assert plan.residual <= 1e-12

    def test_json_export(self, cost):
        import json
        plan, duals = solve_exact(E[0], E[1], cost)
        data = json.loads(plan_to_json(plan, duals))
        assert data["plan"]["cost"] == 0.5 and len(data["duals"]["f"]) == 6

    @settings(max_examples=100, deadline=None)
    @given(simplex_vectors(), simplex_vectors(), simplex_vectors())
    def test_metric_axioms(self, a, b, c):
        from dprm_lab import build_cost_matrix, CategorySchema
        M = build_cost_matrix(CategorySchema.default())
        ab, ba = solve_exact(a, b, M)[0].cost, solve_exact(b, a, M)[0].cost
        assert ab == pytest.approx(ba, abs=1e-9)
        assert solve_exact(a, c, M)[0].cost <= ab + solve_exact(b, c, M)[0].cost + 1e-9
        assert ab >= -1e-12


class TestLineOracle:
    def test_matches_exact(self, cost, schema):
        for mu, nu in zip(*simplex_pairs(6, 300)):
            assert w1_line_oracle(mu, nu, schema) == pytest.approx(solve_exact(mu, nu, cost)[0].cost, abs=1e-9)

    def test_values(self, schema, rng):
        assert w1_line_oracle(E[0], E[5], schema) == pytest.approx(4)
        mu = rng.dirichlet(np.ones(6))
        assert w1_line_oracle(mu, mu, schema) == 0


class TestSinkhorn:
    def test_large_eps_is_independent_coupling(self, cost, rng):
        mu, nu = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
        plan, _ = solve_sinkhorn(mu, nu, cost, 1e3)
        np.testing.assert_allclose(plan.plan, np.outer(mu, nu), atol=1e-3)

    def test_identity_limit(self, cost, rng):
        mu = rng.dirichlet(np.ones(6))
        costs = [solve_sinkhorn(mu, mu, cost, e)[0].cost for e in (1.0, 0.1, 0.01)]
        assert costs[-1] < 0.02
        assert costs == sorted(costs, reverse=True)

    def test_close_to_exact(self, cost):
        for mu, nu in zip(*simplex_pairs(7, 50)):
            plan, _ = solve_sinkhorn(mu, nu, cost, 0.01)
            assert abs(plan.cost - solve_exact(mu, nu, cost)[0].cost) <= 0.02
            assert plan.residual <= 1e-8

    def test_zero_mass_entries(self, cost):
        plan, duals = solve_sinkhorn(E[0], [0.2, 0, 0, 0.8, 0, 0], cost, 0.01)
        assert plan.cost == pytest.approx(1.6, abs=1e-6)
        assert np.all(np.isfinite(duals.f)) and np.all(np.isfinite(duals.g))

    def test_non_strict_budget(self, cost, rng):
        mu, nu = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
        with pytest.raises(NoConvergence):
            solve_sinkhorn(mu, nu, cost, 0.01, max_iter=2, newton_after=0)
        plan, _ = solve_sinkhorn(mu, nu, cost, 0.01, max_iter=2, newton_after=0, strict=False)
        assert plan.stop_reason == "max_iter" and plan.n_iter == 2

    def test_bad_eps(self, cost):
        with pytest.raises(ValidationError):
            solve_sinkhorn(E[0], E[1], cost, 0.0)

    def test_loss_bounds_exact(self, cost):
        for mu, nu in zip(*simplex_pairs(8, 30)):
            assert sinkhorn_loss(mu, nu, cost, 0.05) >= solve_exact(mu, nu, cost)[0].cost - 1e-9


class TestGradient:
    def test_finite_differences(self, cost, rng):
        delta = 1e-5
        for mu, nu in zip(*simplex_pairs(9, 20)):
            _, g = ot_value_and_grad(mu, nu, cost, "sinkhorn", 0.05)
            for _ in range(5):
                h = rng.normal(size=6)
                h -= h.mean()
                h *= 0.5 * mu.min() / np.abs(h).max()
                up = sinkhorn_loss(mu + delta * h, nu, cost, 0.05, tol=1e-13)
                dn = sinkhorn_loss(mu - delta * h, nu, cost, 0.05, tol=1e-13)
                assert abs(g @ h - (up - dn) / (2 * delta)) <= 1e-3

    def test_exact_dual_bounded(self, cost, rng):
        mu = rng.dirichlet(np.ones(6))
        g = ot_grad_source(mu, mu, cost, mode="exact-dual")
        assert abs(g.mean()) <= 1e-12
        assert np.abs(g).max() <= cost.entries.max() + 1e-12

    @pytest.mark.parametrize("mode", ["exact-dual", "sinkhorn"])
    def test_one_hot_target_ordering(self, cost, rng, mode):
        mu = rng.dirichlet(np.ones(6))
        g = ot_grad_source(mu, E[0], cost, mode=mode)
        col = cost.entries[:, 0]
        for i in range(6):
            for j in range(6):
                if col[i] < col[j]:
                    assert g[i] < g[j]

    def test_unknown_mode(self, cost):
        with pytest.raises(ValidationError):
            ot_grad_source(E[0], E[1], cost, mode="nope")
