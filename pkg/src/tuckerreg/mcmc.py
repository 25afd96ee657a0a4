"""Trans-dimensional MCMC over the core dimension plus within-model Gibbs.

The core dimension ``theta`` moves on the integer grid bounded by the data
extents.  A move proposes a neighbor (one coordinate changed by one), fits
throwaway parameter states for both the candidate and the current dimension
from likelihood-tempered conditionals (fraction ``b`` of the likelihood),
and accepts with a ratio whose data-driven part is the tempered-likelihood
ratio raised to ``1 - b`` evaluated at those states -- a single-sample
estimate of the fractional Bayes factor between the two dimensions.  After
the dimension move, one full Gibbs sweep refreshes all parameters.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .exceptions import NumericalError
from .gibbs import (
    GibbsWorkspace,
    gibbs_sweep,
    initial_state,
    log_likelihood_state,
    sample_core,
    sample_noise_variance,
    sample_u_factor,
    sample_v_factor,
)
from .model import ChainTrace, ModelShape, ParamState, PriorConfig, assemble_coefficient


@dataclass
class DimPrior:
    """Prior over core dimensions on the bounded grid.

    ``bounds`` caps each coordinate (at most the corresponding data extent).
    The default mass function is uniform over the grid; ``log_mass`` may be
    any function of a theta tuple returning an unnormalized log mass --
    only ratios enter the acceptance probability.
    """

    bounds: tuple
    log_mass: object = None

    def __post_init__(self):
        self.bounds = tuple(int(b) for b in self.bounds)
        if any(b < 1 for b in self.bounds):
            raise ValueError("all dimension bounds must be >= 1")

    @staticmethod
    def for_shape(shape: ModelShape, bounds=None) -> "DimPrior":
        full = shape.p_dims + shape.q_dims
        if bounds is None:
            return DimPrior(full)
        bounds = tuple(int(b) for b in bounds)
        if len(bounds) != len(full) or any(b > f for b, f in zip(bounds, full)):
            raise ValueError(f"bounds {bounds} exceed data extents {full}")
        return DimPrior(bounds)

    def log_prob(self, theta) -> float:
        if self.log_mass is None:
            return 0.0
        return float(self.log_mass(tuple(theta)))

    def contains(self, theta) -> bool:
        return len(theta) == len(self.bounds) and all(
            1 <= t <= b for t, b in zip(theta, self.bounds)
        )


@dataclass
class MhConfig:
    """Settings of the trans-dimensional sampler.

    ``b`` is the likelihood fraction used both for the throwaway proposal
    fits and as the tempering exponent of the acceptance ratio.  Each
    proposal runs two throwaway tempered-Gibbs fits (candidate and current
    dimension), warm-started from the chain's current state:
    ``n_proposal_sweeps`` warm-up sweeps followed by ``n_proposal_draws``
    sweeps whose full-data log likelihoods are averaged to estimate the
    tempered-posterior expectation entering the acceptance ratio.
    """

    n_iterations: int = 2000
    burn_in: int = 1000
    thin: int = 1
    b: float = 0.1
    n_proposal_sweeps: int = 3
    n_proposal_draws: int = 8
    initial_theta: tuple | None = None
    seed: int | None = None
    fix_theta: bool = False
    store_factors: bool = False

    def validate(self) -> None:
        if not 0.0 < self.b < 1.0:
            raise ValueError("b must lie strictly in (0, 1)")
        if self.burn_in >= self.n_iterations:
            raise ValueError("burn_in must be smaller than n_iterations")
        if self.thin < 1 or self.n_proposal_sweeps < 1:
            raise ValueError("thin and n_proposal_sweeps must be >= 1")
        if self.n_proposal_draws < 1:
            raise ValueError("n_proposal_draws must be >= 1")


def neighbors(theta, bounds) -> list:
    """Grid points at L1 distance one from ``theta``, clipped to [1, bound]."""
    theta = tuple(int(t) for t in theta)
    out = []
    for i, (t, b) in enumerate(zip(theta, bounds)):
        if t + 1 <= b:
            out.append(theta[:i] + (t + 1,) + theta[i + 1 :])
        if t - 1 >= 1:
            out.append(theta[:i] + (t - 1,) + theta[i + 1 :])
    return out


def propose_move(theta, bounds, rng: np.random.Generator):
    """Uniform draw from the neighbor set.

    Returns ``(theta_new, log_q_forward, log_q_reverse)``; the reverse
    density uses the candidate's own neighbor count, which differs from the
    forward one only at grid boundaries.
    """
    options = neighbors(theta, bounds)
    if not options:
        raise ValueError(f"theta {theta} has no neighbors within bounds {bounds}")
    theta_new = options[rng.integers(len(options))]
    log_q_fwd = -math.log(len(options))
    log_q_rev = -math.log(len(neighbors(theta_new, bounds)))
    return theta_new, log_q_fwd, log_q_rev


def adapt_state(state: ParamState, theta_new) -> ParamState:
    """Resize a parameter state to a nearby core dimension.

    Grown coordinates pad the affected factor and core with zero
    columns/slices (they carry no signal until the next sweeps fill them);
    shrunk coordinates drop the trailing columns/slices.  The factor
    rotation ambiguity makes the dropped index arbitrary.
    """
    L = len(state.u_factors)
    new = state.copy()
    core = new.core
    for c, (t_old, t_new) in enumerate(zip(state.theta, theta_new)):
        if t_new > t_old:
            pad = [(0, 0)] * core.ndim
            pad[c] = (0, t_new - t_old)
            core = np.pad(core, pad)
            if c < L:
                new.u_factors[c] = np.pad(
                    new.u_factors[c], ((0, 0), (0, t_new - t_old))
                )
            else:
                new.v_factors[c - L] = np.pad(
                    new.v_factors[c - L], ((0, 0), (0, t_new - t_old))
                )
        elif t_new < t_old:
            core = np.take(core, range(t_new), axis=c)
            if c < L:
                new.u_factors[c] = new.u_factors[c][:, :t_new]
            else:
                new.v_factors[c - L] = new.v_factors[c - L][:, :t_new]
    new.core = core
    new.theta = tuple(int(t) for t in theta_new)
    return new


def fractional_fit(
    theta,
    ws: GibbsWorkspace,
    b: float,
    n_sweeps: int,
    rng: np.random.Generator,
    init: ParamState | None = None,
) -> ParamState:
    """Throwaway state drawn by short tempered-Gibbs runs for a dimension.

    With ``init`` the run warm-starts from that state (resized to ``theta``
    if needed); otherwise it starts from the prior-mean state, whose first
    sweep draws the factors from their priors since a zero core carries no
    data signal.
    """
    if init is None:
        state = initial_state(theta, ws.shape, ws.priors)
    else:
        state = adapt_state(init, theta)
    for _ in range(n_sweeps):
        state = gibbs_sweep(state, ws, rng, b)
    return state


def _block_rng(base_seed: int, sweep: int, block: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=base_seed, spawn_key=(sweep, block))
    )


def _coupled_tempered_loglik(
    theta, ws, b, base_seed, init, n_warm, n_draws
) -> tuple:
    """Warm tempered fit plus the averaged full-data log likelihood over the
    post-warm-up sweep draws (estimating the tempered-posterior expectation
    that enters the move ratio).

    Every block of every sweep draws from its own generator keyed by
    ``(base_seed, sweep, block)``.  Running the candidate's and the current
    dimension's throwaway fits with the same ``base_seed`` couples their
    randomness, so shared path noise cancels in the likelihood difference
    and the comparison resolves dimension effects far below the
    single-draw noise floor.
    """
    state = adapt_state(init, theta) if init is not None else initial_state(
        theta, ws.shape, ws.priors
    )
    n_u = len(state.u_factors)
    n_v = len(state.v_factors)
    total = 0.0
    for sweep in range(n_warm + n_draws):
        block = 0
        for l in range(n_u):
            state.u_factors[l] = sample_u_factor(
                state, ws, l, _block_rng(base_seed, sweep, block), b
            )
            block += 1
        for m in range(n_v):
            state.v_factors[m] = sample_v_factor(
                state, ws, m, _block_rng(base_seed, sweep, block), b
            )
            block += 1
        state.core = sample_core(
            state, ws, _block_rng(base_seed, sweep, block), b
        )
        block += 1
        state.sigma2 = sample_noise_variance(
            state, ws, _block_rng(base_seed, sweep, block), b
        )
        if sweep >= n_warm:
            total += log_likelihood_state(state, ws)
    return state, total / n_draws


def mh_log_accept(
    loglik_new: float,
    loglik_old: float,
    b: float,
    log_prior_new: float = 0.0,
    log_prior_old: float = 0.0,
    log_q_fwd: float = 0.0,
    log_q_rev: float = 0.0,
) -> float:
    """Log acceptance ratio of the dimension move (before capping at 0).

    The likelihood ratio enters with exponent ``1 - b``; everything stays in
    log space so constants added to both log likelihoods cancel exactly.
    """
    return (
        (log_prior_new - log_prior_old)
        + (log_q_rev - log_q_fwd)
        + (1.0 - b) * (loglik_new - loglik_old)
    )


def mh_accept_prob(
    state_new: ParamState,
    state_old: ParamState,
    ws: GibbsWorkspace,
    b: float,
    dim_prior: DimPrior,
    log_q_fwd: float,
    log_q_rev: float,
) -> float:
    """Acceptance probability of replacing the current dimension/state pair."""
    log_a = mh_log_accept(
        log_likelihood_state(state_new, ws),
        log_likelihood_state(state_old, ws),
        b,
        dim_prior.log_prob(state_new.theta),
        dim_prior.log_prob(state_old.theta),
        log_q_fwd,
        log_q_rev,
    )
    return float(math.exp(min(log_a, 0.0)))


def run_mcmc(
    x: np.ndarray,
    y: np.ndarray,
    priors: PriorConfig | None = None,
    dim_prior: DimPrior | None = None,
    config: MhConfig | None = None,
) -> ChainTrace:
    """Full sampler: dimension move plus Gibbs sweep per iteration.

    Stores every ``thin``-th post-burn-in draw of (iteration, theta, sigma^2,
    assembled coefficient tensor).  On an unrecoverable numerical failure
    the partial trace collected so far is returned with a warning.
    """
    config = config or MhConfig()
    config.validate()
    priors = priors or PriorConfig()
    ws = GibbsWorkspace(x, y, priors)
    shape = ws.shape
    dim_prior = dim_prior or DimPrior.for_shape(shape)
    if len(dim_prior.bounds) != shape.n_pred_modes + shape.n_resp_modes:
        raise ValueError("dimension prior bounds do not match the data modes")

    rng = np.random.default_rng(config.seed)
    theta = tuple(config.initial_theta) if config.initial_theta else (1,) * len(
        dim_prior.bounds
    )
    theta = shape.validate_theta(theta)
    if not dim_prior.contains(theta):
        raise ValueError(f"initial theta {theta} outside prior bounds")

    state = initial_state(theta, shape, priors)
    state = gibbs_sweep(state, ws, rng, 1.0)

    n_modes = len(theta)
    theta_path = np.zeros((config.n_iterations, n_modes), dtype=np.int64)
    move_possible = not config.fix_theta and bool(neighbors(theta, dim_prior.bounds))
    n_proposals = 0
    n_accepts = 0

    iters, thetas, sigma2s, b_draws, factor_draws = [], [], [], [], []
    # the sweeps are many small dense kernels; BLAS thread fan-out loses badly
    with threadpool_limits(limits=1):
        try:
            for t in range(1, config.n_iterations + 1):
                if move_possible:
                    cand, log_q_fwd, log_q_rev = propose_move(
                        theta, dim_prior.bounds, rng
                    )
                    base_seed = int(rng.integers(0, 2**63))
                    cand_state, ll_cand = _coupled_tempered_loglik(
                        cand, ws, config.b, base_seed, state,
                        config.n_proposal_sweeps, config.n_proposal_draws,
                    )
                    _, ll_curr = _coupled_tempered_loglik(
                        theta, ws, config.b, base_seed, state,
                        config.n_proposal_sweeps, config.n_proposal_draws,
                    )
                    log_a = mh_log_accept(
                        ll_cand, ll_curr, config.b,
                        dim_prior.log_prob(cand), dim_prior.log_prob(theta),
                        log_q_fwd, log_q_rev,
                    )
                    n_proposals += 1
                    if math.log(rng.random()) < log_a:
                        n_accepts += 1
                        theta = cand
                        state = cand_state
                state = gibbs_sweep(state, ws, rng, 1.0)
                theta_path[t - 1] = theta
                if t > config.burn_in and (t - config.burn_in - 1) % config.thin == 0:
                    iters.append(t)
                    thetas.append(theta)
                    sigma2s.append(state.sigma2)
                    if config.store_factors:
                        factor_draws.append(state.copy())
                    else:
                        b_draws.append(assemble_coefficient(state))
        except NumericalError as exc:
            warnings.warn(
                f"chain aborted at iteration {t}: {exc}; returning partial trace",
                RuntimeWarning,
                stacklevel=2,
            )
            theta_path = theta_path[: t - 1]

    if config.store_factors:
        b_stack = None
    elif b_draws:
        b_stack = np.asarray(b_draws)
    else:
        b_stack = np.zeros((0, *shape.p_dims, *shape.q_dims))
    return ChainTrace(
        shape=shape,
        iterations=np.asarray(iters, dtype=np.int64),
        thetas=np.asarray(thetas, dtype=np.int64).reshape(len(iters), n_modes),
        sigma2s=np.asarray(sigma2s),
        b_draws=b_stack,
        factor_draws=factor_draws if config.store_factors else None,
        burn_in=config.burn_in,
        seed=config.seed,
        accept_rate=(n_accepts / n_proposals) if n_proposals else float("nan"),
        theta_path=theta_path,
    )
