"""Dimension moves: neighborhoods, proposals, acceptance, small chain runs."""

import math

import numpy as np
import pytest
from scipy import stats

from tuckerreg.gibbs import GibbsWorkspace, initial_state
from tuckerreg.mcmc import (
    DimPrior,
    MhConfig,
    adapt_state,
    fractional_fit,
    mh_accept_prob,
    mh_log_accept,
    neighbors,
    propose_move,
    run_mcmc,
)
from tuckerreg.model import ModelShape, PriorConfig, assemble_coefficient, predict_mean


class TestNeighbors:
    def test_lower_corner_only_grows(self):
        out = neighbors((1, 1, 1), (4, 4, 4))
        assert sorted(out) == sorted([(2, 1, 1), (1, 2, 1), (1, 1, 2)])

    def test_interior_count(self):
        out = neighbors((2, 2), (4, 4))
        assert len(out) == 4

    def test_reference_case(self):
        out = neighbors((4, 4, 2, 2), (16, 12, 10, 8))
        assert len(out) == 8
        assert (3, 4, 2, 2) in out
        assert (4, 4, 2, 3) in out
        for t in out:
            assert sum(abs(a - b) for a, b in zip(t, (4, 4, 2, 2))) == 1

    def test_upper_corner_only_shrinks(self):
        out = neighbors((2, 2), (2, 2))
        assert sorted(out) == sorted([(1, 2), (2, 1)])

    def test_degenerate_bound(self):
        assert neighbors((1,), (1,)) == []


class TestProposeMove:
    def test_interior_q_ratio_is_one(self):
        rng = np.random.default_rng(0)
        cand, lqf, lqr = propose_move((3, 3), (6, 6), rng)
        if all(1 < c < 6 for c in cand):
            assert abs(lqf - lqr) < 1e-12

    def test_corner_q_ratio(self):
        # from the all-ones corner every candidate is interior-adjacent;
        # forward density 1/(L+M), reverse 1/|O(candidate)|
        rng = np.random.default_rng(1)
        theta = (1, 1)
        cand, lqf, lqr = propose_move(theta, (5, 5), rng)
        assert math.isclose(lqf, -math.log(2))
        assert math.isclose(lqr, -math.log(len(neighbors(cand, (5, 5)))))

    def test_uniformity_chi_square(self):
        rng = np.random.default_rng(2)
        theta, bounds = (2, 2), (4, 4)
        options = neighbors(theta, bounds)
        counts = {o: 0 for o in options}
        n = 4000
        for _ in range(n):
            cand, _, _ = propose_move(theta, bounds, rng)
            counts[cand] += 1
        observed = np.array(list(counts.values()))
        chi2 = np.sum((observed - n / len(options)) ** 2 / (n / len(options)))
        # chi-square test at the 1% level
        assert chi2 < stats.chi2.ppf(0.99, df=len(options) - 1)

    def test_no_neighbors_raises(self):
        with pytest.raises(ValueError):
            propose_move((1,), (1,), np.random.default_rng(0))


class TestDimPrior:
    def test_bounds_cannot_exceed_extents(self):
        shape = ModelShape(10, (4, 3), (2,))
        with pytest.raises(ValueError):
            DimPrior.for_shape(shape, (5, 3, 2))
        prior = DimPrior.for_shape(shape)
        assert prior.bounds == (4, 3, 2)

    def test_uniform_log_prob_constant(self):
        prior = DimPrior((4, 4))
        assert prior.log_prob((1, 1)) == prior.log_prob((4, 4)) == 0.0

    def test_custom_mass_hook(self):
        prior = DimPrior((4, 4), log_mass=lambda t: -float(sum(t)))
        assert prior.log_prob((2, 3)) == -5.0

    def test_contains(self):
        prior = DimPrior((3, 3))
        assert prior.contains((1, 3))
        assert not prior.contains((0, 2))
        assert not prior.contains((4, 1))


class TestAcceptance:
    def test_identical_states_accept(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, 3))
        y = rng.standard_normal((5, 2))
        ws = GibbsWorkspace(x, y)
        state = fractional_fit((2, 1), ws, 0.5, 3, rng)
        prior = DimPrior((3, 2))
        prob = mh_accept_prob(state, state, ws, 0.5, prior, -1.0, -1.0)
        assert prob == 1.0

    def test_prior_ratio_dominates_equal_likelihoods(self):
        # equal log likelihoods reduce the ratio to prior x proposal terms
        la = mh_log_accept(
            -10.0, -10.0, 0.2,
            log_prior_new=math.log(0.2), log_prior_old=math.log(0.4),
            log_q_fwd=-math.log(4), log_q_rev=-math.log(2),
        )
        assert math.isclose(la, math.log(0.2 / 0.4) + math.log(4 / 2))

    def test_shift_invariance(self):
        base = mh_log_accept(-50.0, -70.0, 0.3, 0.0, 0.0, -1.0, -2.0)
        shifted = mh_log_accept(-50.0 + 123.0, -70.0 + 123.0, 0.3, 0.0, 0.0,
                                -1.0, -2.0)
        assert math.isclose(base, shifted)

    def test_b_near_one_kills_likelihood_term(self):
        la = mh_log_accept(0.0, -1e6, 1.0 - 1e-12, 0.0, 0.0, 0.0, 0.0)
        assert abs(la) < 1e-5

    def test_hand_checked_scalar_case(self):
        # two Gaussian log likelihoods on a scalar model, all terms explicit
        ll_new = -0.5 * math.log(2 * math.pi) - 0.5 * 0.25
        ll_old = -0.5 * math.log(2 * math.pi) - 0.5 * 1.0
        la = mh_log_accept(ll_new, ll_old, 0.4, 0.0, 0.0,
                           -math.log(3), -math.log(2))
        expected = (math.log(3) - math.log(2)) + 0.6 * (1.0 - 0.25) / 2.0
        assert math.isclose(la, expected)


class TestAdaptState:
    def test_grow_pads_with_zeros(self):
        rng = np.random.default_rng(4)
        shape = ModelShape(5, (3, 2), (2,))
        state = initial_state((2, 1, 1), shape, PriorConfig(), rng=rng,
                              randomize=True)
        grown = adapt_state(state, (3, 1, 1))
        assert grown.core.shape == (3, 1, 1)
        np.testing.assert_array_equal(grown.core[2], 0.0)
        np.testing.assert_array_equal(grown.u_factors[0][:, 2], 0.0)
        np.testing.assert_array_equal(grown.u_factors[0][:, :2],
                                      state.u_factors[0])
        # the padded representation assembles to the same coefficient tensor
        np.testing.assert_allclose(
            assemble_coefficient(grown), assemble_coefficient(state)
        )

    def test_shrink_drops_trailing(self):
        rng = np.random.default_rng(5)
        shape = ModelShape(5, (3,), (4,))
        state = initial_state((2, 3), shape, PriorConfig(), rng=rng,
                              randomize=True)
        smaller = adapt_state(state, (2, 2))
        assert smaller.core.shape == (2, 2)
        np.testing.assert_array_equal(smaller.v_factors[0],
                                      state.v_factors[0][:, :2])

    def test_original_untouched(self):
        rng = np.random.default_rng(6)
        shape = ModelShape(4, (2,), (2,))
        state = initial_state((1, 1), shape, PriorConfig(), rng=rng,
                              randomize=True)
        before = state.core.copy()
        adapt_state(state, (2, 2))
        np.testing.assert_array_equal(state.core, before)


class TestFractionalFit:
    def test_output_matches_theta(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((6, 3, 2))
        y = rng.standard_normal((6, 2, 2))
        ws = GibbsWorkspace(x, y)
        state = fractional_fit((2, 1, 2, 1), ws, 0.5, 2, rng)
        state.validate(ws.shape)
        assert state.theta == (2, 1, 2, 1)

    def test_tiny_b_stays_near_prior(self):
        # with an almost fully tempered-away likelihood the factor draws keep
        # prior-scale magnitudes
        rng = np.random.default_rng(8)
        x = rng.standard_normal((20, 3))
        y = 100.0 * rng.standard_normal((20, 2))
        ws = GibbsWorkspace(x, y, PriorConfig(alpha=30.0, beta=3.0))
        draws = []
        for _ in range(200):
            s = fractional_fit((1, 1), ws, 1e-6, 2, rng)
            draws.append(s.u_factors[0][0, 0])
        sd = np.std(draws)
        assert 0.7 < sd < 1.4  # prior scale is 1


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            MhConfig(b=1.0).validate()
        with pytest.raises(ValueError):
            MhConfig(n_iterations=10, burn_in=10).validate()
        with pytest.raises(ValueError):
            MhConfig(thin=0).validate()
        MhConfig().validate()


class TestRunMcmc:
    def test_short_chain_contract(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((15, 3, 2))
        b = rng.standard_normal((3, 2, 2))
        y = np.tensordot(x, b, 2) + 0.5 * rng.standard_normal((15, 2))
        cfg = MhConfig(n_iterations=40, burn_in=20, seed=1)
        trace = run_mcmc(x, y, config=cfg)
        assert len(trace) == 20
        assert np.all(np.diff(trace.iterations) > 0)
        bounds = (3, 2, 2)
        assert np.all(trace.thetas >= 1)
        assert np.all(trace.thetas <= np.array(bounds))
        assert trace.b_draws.shape == (20, 3, 2, 2)
        assert 0.0 <= trace.accept_rate <= 1.0
        assert trace.theta_path.shape == (40, 3)

    def test_seed_reproducibility(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((12, 2, 2))
        y = rng.standard_normal((12, 2))
        cfg = MhConfig(n_iterations=30, burn_in=10, seed=77)
        t1 = run_mcmc(x, y, config=cfg)
        t2 = run_mcmc(x, y, config=cfg)
        np.testing.assert_array_equal(t1.thetas, t2.thetas)
        np.testing.assert_array_equal(t1.b_draws, t2.b_draws)
        np.testing.assert_array_equal(t1.sigma2s, t2.sigma2s)

    def test_fixed_theta_mode(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((12, 3))
        y = rng.standard_normal((12, 2))
        cfg = MhConfig(n_iterations=30, burn_in=10, seed=3, fix_theta=True,
                       initial_theta=(2, 1))
        trace = run_mcmc(x, y, config=cfg)
        assert np.isnan(trace.accept_rate)
        assert all(tuple(t) == (2, 1) for t in trace.thetas)

    def test_store_factors_mode(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((10, 2))
        y = rng.standard_normal((10, 2))
        cfg = MhConfig(n_iterations=20, burn_in=10, seed=4, store_factors=True)
        trace = run_mcmc(x, y, config=cfg)
        assert trace.b_draws is None
        assert len(trace.factor_draws) == 10
        stack = trace.coefficient_draws()
        assert stack.shape == (10, 2, 2)

    def test_thinning(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((10, 2))
        y = rng.standard_normal((10, 2))
        cfg = MhConfig(n_iterations=30, burn_in=10, thin=4, seed=5)
        trace = run_mcmc(x, y, config=cfg)
        assert len(trace) == 5
        assert np.all(np.diff(trace.iterations) == 4)

    def test_bad_initial_theta(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((10, 2))
        y = rng.standard_normal((10, 2))
        cfg = MhConfig(n_iterations=10, burn_in=5, initial_theta=(3, 1))
        with pytest.raises(Exception):
            run_mcmc(x, y, config=cfg)

    def test_occupancy_reproducible_across_seeds_tiny_grid(self):
        # all extents <= 2: the theta grid has 4 points; two independent
        # chains must rank the occupancies consistently
        rng = np.random.default_rng(15)
        x = rng.standard_normal((25, 2))
        b_true = rng.standard_normal((2, 2))
        y = x @ b_true + 0.3 * rng.standard_normal((25, 2))
        occ = []
        for seed in (101, 202):
            cfg = MhConfig(n_iterations=800, burn_in=200, seed=seed,
                           n_proposal_sweeps=2, n_proposal_draws=4)
            trace = run_mcmc(x, y, config=cfg)
            counts = {}
            for t in map(tuple, trace.thetas):
                counts[t] = counts.get(t, 0) + 1
            occ.append(counts)
        grid = [(1, 1), (1, 2), (2, 1), (2, 2)]
        a = np.array([occ[0].get(g, 0) for g in grid], dtype=float)
        b_ = np.array([occ[1].get(g, 0) for g in grid], dtype=float)
        rho = stats.spearmanr(a, b_).statistic
        assert rho >= 0.9
