"""Built-in model families: affine rates, argmin oracle, mean-variance costs."""

import numpy as np
import pytest

from mfeq import (
    AffineQuadraticModel,
    MeanVarianceCost,
    ModelDefect,
    SeparableCost,
    TabulatedGenerator,
    TimeGrid,
    admissible_interval,
    affine_argmin,
    mean_variance_terminal,
    validate_generator,
)
from mfeq.models import label_mean, make_tau_weight

from instances import random_affine_generator, random_strategy


class TestAdmissibleInterval:
    def test_zero_beta_full_interval(self):
        assert admissible_interval([-1.0, 1.0], [0.0, 0.0], 0) == (-1.0, 1.0)

    def test_inactive_constraint(self):
        # 1 - v >= 0 allows v <= 1: interval stays [-1, 1]
        lo, hi = admissible_interval([-1.0, 1.0], [1.0, -1.0], 0)
        assert (lo, hi) == (-1.0, 1.0)

    def test_active_constraint(self):
        # 0.5 - v >= 0 cuts the interval at 0.5
        lo, hi = admissible_interval([-0.5, 0.5], [1.0, -1.0], 0)
        assert lo == -1.0
        assert hi == pytest.approx(0.5, abs=1e-15)

    def test_contains_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            gen = random_affine_generator(rng, int(rng.integers(2, 6)))
            for i in range(gen.m):
                lo, hi = gen.action_interval(0.0, i)
                assert lo <= 0.0 <= hi


class TestAffineArgmin:
    def test_zero_gradient(self):
        assert affine_argmin([0.0, 0.0], [0.3, -0.3], (-1.0, 1.0)) == 0.0

    def test_interior_stationary_point(self):
        # h . beta = 0.5 puts the minimum of v^2/2 + 0.5 v at -0.5
        assert affine_argmin([1.0, 0.0], [0.5, -0.5], (-1.0, 1.0)) == pytest.approx(-0.5)

    def test_boundary_clip(self):
        assert affine_argmin([4.0, 0.0], [0.5, -0.5], (-1.0, 1.0)) == -1.0

    def test_empty_interval_error(self):
        with pytest.raises(ModelDefect):
            affine_argmin([0.0], [0.0], (1.0, -1.0))

    def test_lipschitz_in_h(self):
        # |argmin(h) - argmin(h')| <= sum|beta| * max|h - h'| (clip contracts)
        rng = np.random.default_rng(1)
        beta = np.array([0.4, -0.1, -0.3])
        for _ in range(50):
            h1, h2 = rng.normal(size=3), rng.normal(size=3)
            d = abs(affine_argmin(h1, beta, (-1, 1)) - affine_argmin(h2, beta, (-1, 1)))
            assert d <= np.abs(beta).sum() * np.abs(h1 - h2).max() + 1e-12


class TestAffineQuadraticModel:
    def test_structure_validation(self):
        with pytest.raises(ModelDefect):
            AffineQuadraticModel([[-1.0, 1.0], [1.0, -0.9]], [0.0, 0.0])
        with pytest.raises(ModelDefect):
            AffineQuadraticModel([[-1.0, 1.0], [1.0, -1.0]], [0.5, 0.0])
        with pytest.raises(ModelDefect):
            AffineQuadraticModel([[0.5, -0.5], [1.0, -1.0]], [0.0, 0.0])

    def test_declared_constants(self):
        gen = AffineQuadraticModel([[-0.8, 0.8], [0.9, -0.9]], [0.4, -0.4])
        assert gen.kappa1 == pytest.approx(0.8)
        assert gen.K1 == pytest.approx(1.3)

    def test_rows_pass_validation_on_admissible_actions(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            gen = random_affine_generator(rng, int(rng.integers(2, 6)))
            assert validate_generator(gen, TimeGrid(1.0, 4), samples=6).ok

    def test_time_varying_tables(self):
        grid = TimeGrid(1.0, 2)
        alphas = np.array([[[-1.0, 1.0], [1.0, -1.0]],
                           [[-2.0, 2.0], [2.0, -2.0]]])
        betas = np.zeros((2, 2))
        gen = AffineQuadraticModel(alphas, betas, grid=grid)
        np.testing.assert_allclose(gen.rates(0.0, 0, 0.0), [-1.0, 1.0])
        np.testing.assert_allclose(gen.rates(0.5, 0, 0.0), [-2.0, 2.0])
        np.testing.assert_allclose(gen.rates(1.0, 0, 0.0), [-2.0, 2.0])

    def test_rate_matrix_matches_rows(self):
        rng = np.random.default_rng(3)
        gen = random_affine_generator(rng, 3)
        strat = random_strategy(rng, gen, TimeGrid(1.0, 1))
        Q = gen.rate_matrix(0.0, strat.actions[0])
        for i in range(3):
            np.testing.assert_array_equal(Q[i], gen.rates(0.0, i, strat.actions[0][i]))


class TestTabulatedGenerator:
    def test_validation(self):
        with pytest.raises(ModelDefect):
            TabulatedGenerator([[-1.0, 0.9], [1.0, -1.0]])
        with pytest.raises(ModelDefect):
            TabulatedGenerator([[-1.0, 1.0], [-0.5, 0.5]])

    def test_degenerate_action_set(self):
        gen = TabulatedGenerator([[-1.0, 1.0], [1.0, -1.0]])
        assert gen.action_interval(0.0, 0) == (0.0, 0.0)
        assert gen.kappa1 == 0.0


class TestMeanVarianceTerminal:
    def test_dirac_gives_zero(self):
        for i in (1, 2, 3):
            rho = np.zeros(3)
            rho[i - 1] = 1.0
            assert mean_variance_terminal("g", i, rho) == 0.0
            assert mean_variance_terminal("gtilde", i, rho) == 0.0

    def test_two_state_half_half(self):
        rho = [0.5, 0.5]
        assert mean_variance_terminal("g", 1, rho) == pytest.approx(0.25)
        # raw gtilde can be negative: 1 - 1.5^2
        assert mean_variance_terminal("gtilde", 1, rho) == pytest.approx(-1.25)

    def test_population_functional_is_variance(self):
        rng = np.random.default_rng(4)
        for m in (2, 3, 5):
            labels = np.arange(1, m + 1)
            for _ in range(10):
                rho = rng.dirichlet(np.ones(m))
                var = float(labels ** 2 @ rho - (labels @ rho) ** 2)
                pop_g = sum(mean_variance_terminal("g", i, rho) * rho[i - 1]
                            for i in labels)
                pop_gt = sum(mean_variance_terminal("gtilde", i, rho) * rho[i - 1]
                             for i in labels)
                assert pop_g == pytest.approx(var, abs=1e-12)
                assert pop_gt == pytest.approx(var, abs=1e-12)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            mean_variance_terminal("h", 1, [1.0])


class TestSeparableCost:
    def test_gtilde_shift_restores_nonnegativity(self):
        cost = SeparableCost(3, terminal=("mean_variance", "gtilde"))
        assert cost.terminal_shift == 9.0
        rng = np.random.default_rng(5)
        for _ in range(20):
            rho = rng.dirichlet(np.ones(3))
            vals = cost.terminal(0.0, rho)
            assert vals.min() >= 0.0
            assert vals.max() <= cost.K2 + 1e-12

    def test_shift_preserves_population_variance_up_to_constant(self):
        cost = SeparableCost(2, terminal=("mean_variance", "gtilde"))
        rng = np.random.default_rng(6)
        labels = np.array([1.0, 2.0])
        for _ in range(10):
            rho = rng.dirichlet(np.ones(2))
            var = float(labels ** 2 @ rho - (labels @ rho) ** 2)
            pop = float(cost.terminal(0.0, rho) @ rho)
            assert pop - cost.terminal_shift == pytest.approx(var, abs=1e-12)

    def test_shift_does_not_change_argmin(self):
        # constant shifts of the continuation value cancel against zero row sums
        gen = AffineQuadraticModel([[-0.8, 0.8], [0.9, -0.9]], [0.4, -0.4])
        cost = SeparableCost(2, gen=gen, horizon=0.5)
        rng = np.random.default_rng(7)
        for _ in range(10):
            h = rng.uniform(0.0, 3.0, 2)
            base = cost.argmin_profile(gen, 0.0, h)
            shifted = cost.argmin_profile(gen, 0.0, h + 17.3)
            np.testing.assert_allclose(base, shifted, atol=1e-12)

    def test_declared_caps_hold_on_samples(self):
        rng = np.random.default_rng(8)
        for m in (2, 4):
            cost = SeparableCost(
                m, running=("mean_square", 0.3),
                terminal=("mean_variance", "g"),
                tau_weight={"kind": "affine", "intercept": 1.0, "slope": 0.5},
                horizon=1.0)
            for _ in range(20):
                rho = rng.dirichlet(np.ones(m))
                tau = rng.uniform(0.0, 1.0)
                assert cost.running_dist(tau, 0.0, rho).max() <= cost.K2 + 1e-12
                assert cost.terminal(tau, rho).max() <= cost.K2 + 1e-12

    def test_running_dist_many_matches_scalar(self):
        cost = SeparableCost(2, running=("mean_square", 0.2),
                             tau_weight={"kind": "affine", "intercept": 1.0,
                                         "slope": 0.5}, horizon=1.0)
        rho = [0.3, 0.7]
        taus = np.array([0.0, 0.5, 1.0])
        many = cost.running_dist_many(taus, 0.2, rho)
        for row, tau in zip(many, taus):
            np.testing.assert_allclose(row, cost.running_dist(tau, 0.2, rho))

    def test_zero_control(self):
        cost = SeparableCost(2, control="zero", terminal=("table", [0.0, 0.0]))
        assert cost.control_cost(0.0, 0, 0.7) == 0.0
        np.testing.assert_array_equal(cost.control_profile_cost(0.0, [0.5, -0.5]),
                                      [0.0, 0.0])

    def test_label_mean(self):
        assert label_mean([0.5, 0.5]) == pytest.approx(1.5)
        assert label_mean([0.0, 0.0, 1.0]) == pytest.approx(3.0)

    def test_negative_table_rejected(self):
        with pytest.raises(ModelDefect):
            SeparableCost(2, running=("table", [-0.1, 0.2]))
        with pytest.raises(ModelDefect):
            SeparableCost(2, terminal=("table", [0.1, -0.2]))


class TestTauWeight:
    def test_constant(self):
        w, wmax = make_tau_weight(None, 1.0)
        assert w(0.7) == 1.0 and wmax == 1.0

    def test_affine(self):
        w, wmax = make_tau_weight({"kind": "affine", "intercept": 1.0, "slope": 0.5}, 2.0)
        assert w(2.0) == pytest.approx(2.0)
        assert wmax == pytest.approx(2.0)

    def test_affine_negative_rejected(self):
        with pytest.raises(ModelDefect):
            make_tau_weight({"kind": "affine", "intercept": 0.5, "slope": -1.0}, 1.0)

    def test_exp(self):
        w, wmax = make_tau_weight({"kind": "exp", "rate": 2.0}, 1.0)
        assert w(0.5) == pytest.approx(np.exp(-1.0))
        assert wmax == 1.0


class TestMeanVarianceCost:
    def test_is_separable_specialization(self):
        gen = AffineQuadraticModel([[-0.8, 0.8], [0.9, -0.9]], [0.4, -0.4])
        cost = MeanVarianceCost(2, variant="g", gen=gen, horizon=0.5)
        assert cost.variant == "g"
        assert cost.kappa2 == pytest.approx(gen.kappa1)
        assert cost.control == "quadratic"
