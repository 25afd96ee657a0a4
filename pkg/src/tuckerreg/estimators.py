"""Estimator front ends following the scikit-learn conventions.

Both regressors accept a predictor tensor ``X`` of shape
``(n_samples, P_1, ..., P_L)`` and a response tensor ``Y`` of shape
``(n_samples, Q_1, ..., Q_M)``; ``predict`` returns the posterior-mean (or
point-estimate) response tensor for new predictors.  Hyperparameters live
in ``__init__`` so ``get_params`` / ``set_params`` / ``clone`` compose with
the wider ecosystem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import model as mdl
from .fastfit import SaConfig, run_fast
from .mcmc import DimPrior, MhConfig, run_mcmc
from .model import PriorConfig, assemble_coefficient, predict_mean
from .validation import check_new_predictors, check_paired_tensors


def _prior_config(est) -> PriorConfig:
    return PriorConfig(
        mu_u=est.mu_u, mu_v=est.mu_v, mu_g=est.mu_g,
        var_u=est.var_u, var_v=est.var_v, var_g=est.var_g,
        alpha=est.alpha, beta=est.beta,
    )


class TuckerMCMCRegressor(BaseEstimator):
    """Fully Bayesian Tucker tensor regression with dimension inference.

    ``fit`` runs the trans-dimensional sampler and keeps the post-burn-in
    trace; ``predict`` returns the posterior-mean response and
    ``predict_interval`` adds equal-tailed posterior-predictive credible
    intervals.

    Attributes set by ``fit``: ``trace_``, ``theta_`` (posterior mode of the
    core dimension), ``coef_`` (posterior-mean coefficient tensor),
    ``sigma2_`` (posterior-mean noise variance), ``n_params_``,
    ``accept_rate_``.
    """

    def __init__(
        self,
        n_iterations: int = 2000,
        burn_in: int = 1000,
        thin: int = 1,
        b: float = 0.1,
        n_proposal_sweeps: int = 3,
        n_proposal_draws: int = 8,
        initial_theta=None,
        theta_bounds=None,
        fix_theta: bool = False,
        store_factors: bool = False,
        mu_u: float = 0.0,
        mu_v: float = 0.0,
        mu_g: float = 0.0,
        var_u: float = 1.0,
        var_v: float = 1.0,
        var_g: float = 1.0,
        alpha: float = 1.0,
        beta: float = 1.0,
        random_state=None,
    ):
        self.n_iterations = n_iterations
        self.burn_in = burn_in
        self.thin = thin
        self.b = b
        self.n_proposal_sweeps = n_proposal_sweeps
        self.n_proposal_draws = n_proposal_draws
        self.initial_theta = initial_theta
        self.theta_bounds = theta_bounds
        self.fix_theta = fix_theta
        self.store_factors = store_factors
        self.mu_u = mu_u
        self.mu_v = mu_v
        self.mu_g = mu_g
        self.var_u = var_u
        self.var_v = var_v
        self.var_g = var_g
        self.alpha = alpha
        self.beta = beta
        self.random_state = random_state

    def fit(self, X, Y):
        X, Y = check_paired_tensors(X, Y)
        shape = mdl.ModelShape.from_data(X, Y)
        config = MhConfig(
            n_iterations=self.n_iterations,
            burn_in=self.burn_in,
            thin=self.thin,
            b=self.b,
            n_proposal_sweeps=self.n_proposal_sweeps,
            n_proposal_draws=self.n_proposal_draws,
            initial_theta=self.initial_theta,
            seed=self.random_state,
            fix_theta=self.fix_theta,
            store_factors=self.store_factors,
        )
        config.validate()
        dim_prior = DimPrior.for_shape(shape, self.theta_bounds)
        self.trace_ = run_mcmc(X, Y, _prior_config(self), dim_prior, config)
        self.theta_ = self.trace_.theta_mode()
        self.coef_ = self.trace_.coefficient_mean()
        self.sigma2_ = float(self.trace_.sigma2s.mean())
        self.n_params_ = mdl.param_count(shape, self.theta_)
        self.accept_rate_ = self.trace_.accept_rate
        return self

    def _check_fitted(self):
        if not hasattr(self, "trace_"):
            raise NotFittedError("call fit before predicting")

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_new_predictors(X, self.trace_.shape.p_dims)
        return predict_mean(X, self.coef_, self.trace_.shape.n_pred_modes)

    def predict_interval(self, X, level: float = 0.95, random_state=None):
        """Posterior-predictive mean and equal-tailed interval bounds."""
        self._check_fitted()
        X = check_new_predictors(X, self.trace_.shape.p_dims)
        rng = np.random.default_rng(
            self.random_state if random_state is None else random_state
        )
        return mdl.posterior_predict(self.trace_, X, rng, level=level)


class TuckerMAPRegressor(BaseEstimator):
    """Point-estimate Tucker tensor regression via annealed MAP fitting.

    ``fit`` runs the simulated-annealing search over core dimensions with
    closed-form coordinate updates inside; only a point estimate is kept,
    so ``predict`` has no interval companion.

    Attributes set by ``fit``: ``theta_``, ``coef_``, ``sigma2_``, ``bic_``,
    ``n_params_``, ``theta_path_``.
    """

    def __init__(
        self,
        n_outer: int = 200,
        n_inner: int = 10,
        schedule: str = "geometric",
        gamma: float = 0.95,
        zeta0=None,
        initial_theta=None,
        theta_bounds=None,
        tol: float = 1e-8,
        mu_u: float = 0.0,
        mu_v: float = 0.0,
        mu_g: float = 0.0,
        var_u: float = 1.0,
        var_v: float = 1.0,
        var_g: float = 1.0,
        alpha: float = 1.0,
        beta: float = 1.0,
        random_state=None,
    ):
        self.n_outer = n_outer
        self.n_inner = n_inner
        self.schedule = schedule
        self.gamma = gamma
        self.zeta0 = zeta0
        self.initial_theta = initial_theta
        self.theta_bounds = theta_bounds
        self.tol = tol
        self.mu_u = mu_u
        self.mu_v = mu_v
        self.mu_g = mu_g
        self.var_u = var_u
        self.var_v = var_v
        self.var_g = var_g
        self.alpha = alpha
        self.beta = beta
        self.random_state = random_state

    def fit(self, X, Y):
        X, Y = check_paired_tensors(X, Y)
        shape = mdl.ModelShape.from_data(X, Y)
        cfg = SaConfig(
            n_outer=self.n_outer,
            n_inner=self.n_inner,
            schedule=self.schedule,
            gamma=self.gamma,
            zeta0=self.zeta0,
            seed=self.random_state,
            initial_theta=self.initial_theta,
            bounds=self.theta_bounds,
            tol=self.tol,
        )
        cfg.validate()
        fit = run_fast(X, Y, _prior_config(self), cfg)
        self.map_fit_ = fit
        self.theta_ = tuple(fit.state.theta)
        self.coef_ = assemble_coefficient(fit.state)
        self.sigma2_ = float(fit.state.sigma2)
        self.bic_ = float(fit.bic)
        self.n_params_ = mdl.param_count(shape, self.theta_)
        self.theta_path_ = list(fit.theta_path)
        self._p_dims = shape.p_dims
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "map_fit_"):
            raise NotFittedError("call fit before predicting")
        X = check_new_predictors(X, self._p_dims)
        return predict_mean(X, self.coef_, len(self._p_dims))


class VectorizedOLSRegressor(BaseEstimator):
    """Baseline: unstructured least squares on the vectorized tensors."""

    def fit(self, X, Y):
        X, Y = check_paired_tensors(X, Y)
        self.coef_matrix_ = mdl.ols_baseline(X, Y)
        self._p_dims = X.shape[1:]
        self._q_dims = Y.shape[1:]
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "coef_matrix_"):
            raise NotFittedError("call fit before predicting")
        X = check_new_predictors(X, self._p_dims)
        return mdl.ols_predict(self.coef_matrix_, X, self._q_dims)
