"""Closed-form full-conditional updates for the Tucker regression model.

Each factor matrix, the core tensor, and the noise variance have conjugate
Gaussian / inverse-gamma full conditionals.  Every update accepts a
likelihood tempering fraction ``b`` in ``(0, 1]``; ``b = 1`` gives the
ordinary full conditionals, smaller ``b`` raises the likelihood to the
power ``b`` (the data precision and sufficient statistics scale by ``b``).

The target factor for a generic mode is handled by rotating that mode into
the leading position of its group, so a single derivation serves every
mode.  Internally the design matrices use C-order row/column enumerations
(views, no copies); a permutation of rows or of parameter coordinates
leaves the posterior unchanged, and the public ``build_u_design`` /
``build_v_design`` helpers return the conventional first-index-fastest
layout for verification against the vectorized-model identities.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
import scipy.linalg

from . import tensor_ops as tops
from .exceptions import NumericalError, ShapeError
from .model import ModelShape, ParamState, PriorConfig

_JITTER_SCALE = 1e-8


def _check_fraction(b: float) -> float:
    if not 0.0 < b <= 1.0:
        raise ValueError(f"likelihood fraction b={b} outside (0, 1]")
    return float(b)


class GibbsWorkspace:
    """Per-chain cache of data rearrangements used by the conditional updates.

    The arrays depend only on ``(x, y)``, so one workspace serves a whole
    chain; it holds mutable buffers and must not be shared across threads.
    """

    def __init__(self, x: np.ndarray, y: np.ndarray, priors: PriorConfig | None = None):
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self.shape = ModelShape.from_data(self.x, self.y)
        self.priors = priors if priors is not None else PriorConfig()
        n = self.shape.n_samples
        L, M = self.shape.n_pred_modes, self.shape.n_resp_modes

        # rows (sample, response-entry) in C enumeration
        self.y_flat = self.y.reshape(-1)
        self.n_total = self.y.size

        # per target predictor mode: X with that mode rotated to position 1,
        # remaining predictor modes flattened, plus the sample-contracted
        # Gram tensor XX[p, p', j, j'] = sum_n X[n,p,j] X[n,p',j'] that turns
        # the factor-update normal equations into small contractions
        self.x_rotated = []
        self.x_gram = []
        for l in range(L):
            xp = np.ascontiguousarray(np.moveaxis(self.x, 1 + l, 1))
            j = self.shape.n_predictors // self.shape.p_dims[l]
            xm = xp.reshape(n, self.shape.p_dims[l], j)
            self.x_rotated.append(xm)
            gram = np.tensordot(xm, xm, axes=([0], [0]))  # (p, j, p', j')
            self.x_gram.append(np.ascontiguousarray(gram.transpose(0, 2, 1, 3)))
        self.y_by_sample = self.y.reshape(n, -1)

        # per target response mode: Y with that mode rotated to the last
        # axis and all other axes flattened into rows
        self.y_rotated = []
        for m in range(M):
            yp = np.ascontiguousarray(np.moveaxis(self.y, 1 + m, -1))
            self.y_rotated.append(yp.reshape(-1, self.shape.q_dims[m]))


def initial_state(
    theta,
    shape: ModelShape,
    priors: PriorConfig,
    rng: np.random.Generator | None = None,
    randomize: bool = False,
) -> ParamState:
    """Fresh parameter state for a given core dimension.

    By default every block sits at its prior mean and ``sigma2`` at the
    prior mean denominator value ``beta / (alpha + 1)``.  With
    ``randomize=True`` the factors and core are drawn from their priors
    instead, which is required by the coordinate-MAP path: the all-zero
    prior mean is a degenerate fixed point of those updates.
    """
    theta = shape.validate_theta(theta)
    L = shape.n_pred_modes
    r_dims, s_dims = theta[:L], theta[L:]

    def block(mu, var, dims):
        if randomize:
            if rng is None:
                raise ValueError("randomize=True needs an rng")
            return mu + math.sqrt(var) * rng.standard_normal(dims)
        return np.full(dims, float(mu))

    u_factors = [
        block(priors.mu_u, priors.var_u, (p, r))
        for p, r in zip(shape.p_dims, r_dims)
    ]
    v_factors = [
        block(priors.mu_v, priors.var_v, (q, s))
        for q, s in zip(shape.q_dims, s_dims)
    ]
    core = block(priors.mu_g, priors.var_g, theta)
    sigma2 = priors.beta / (priors.alpha + 1.0)
    return ParamState(theta, u_factors, v_factors, core, sigma2)


# ---------------------------------------------------------------------------
# design construction


def _u_partial(state: ParamState, ws: GibbsWorkspace, target: int) -> np.ndarray:
    """Coefficient tensor with the target predictor factor left out,
    flattened to (R_t, prod remaining P, prod Q)."""
    shape = ws.shape
    L = shape.n_pred_modes
    if not 0 <= target < L:
        raise ShapeError(f"target predictor mode {target} out of range")
    r_t = state.theta[target]
    core_rot = np.moveaxis(state.core, target, 0)
    rest = [l for l in range(L) if l != target]
    partial = core_rot
    for axis, l in enumerate(rest, start=1):
        partial = tops.mode_product(partial, state.u_factors[l], axis)
    for m, v in enumerate(state.v_factors):
        partial = tops.mode_product(partial, v, L + m)
    n_rest = int(np.prod([shape.p_dims[l] for l in rest], dtype=np.int64))
    return np.ascontiguousarray(partial).reshape(r_t, n_rest, shape.n_responses)


def _u_regression_tensor(state: ParamState, ws: GibbsWorkspace, target: int):
    """Design tensor T[n, q, p, r] for the target predictor factor.

    Contracting T against the target factor reproduces the regression
    surface: sum_{p,r} T[n, q, p, r] * U[p, r] = Yhat[n, q].
    """
    partial = _u_partial(state, ws, target)
    xm = ws.x_rotated[target]  # (N, P_t, n_rest)
    return np.einsum("npj,rjq->nqpr", xm, partial, optimize=True)


def build_u_design(state: ParamState, x: np.ndarray, target: int) -> np.ndarray:
    """Design matrix relating the vectorized target predictor factor to vec Y.

    Rows enumerate the response entries first-index-fastest (sample index
    fastest); columns enumerate ``vec U_target`` (its own first index
    fastest), so ``design @ vectorize(U_target)`` equals the vectorized
    regression surface.
    """
    ws = _adhoc_workspace(state, x)
    t = _u_regression_tensor(state, ws, target)
    n, _, p_t, r_t = t.shape
    q_dims = ws.shape.q_dims
    t6 = t.reshape((n, *q_dims, p_t, r_t))
    m = len(q_dims)
    part = tops.IndexPartition(tuple(range(m + 1)), (m + 1, m + 2))
    return tops.matricize(t6, part)


def _v_regression_matrix(state: ParamState, ws: GibbsWorkspace, target: int):
    """Design matrix D (rows match ws.y_rotated[target]) for the target
    response factor: Y_rot ~ D @ V_target.T row by row."""
    shape = ws.shape
    L, M = shape.n_pred_modes, shape.n_resp_modes
    if not 0 <= target < M:
        raise ShapeError(f"target response mode {target} out of range")
    s_t = state.theta[L + target]

    core_rot = np.moveaxis(state.core, L + target, L)
    partial = core_rot
    for l, u in enumerate(state.u_factors):
        partial = tops.mode_product(partial, u, l)
    rest = [m for m in range(M) if m != target]
    for axis, m in enumerate(rest, start=L + 1):
        partial = tops.mode_product(partial, state.v_factors[m], axis)
    # contract predictors: (N, S_t, Q_rest...)
    d = tops.contracted_product(ws.x, partial, L)
    d = np.ascontiguousarray(np.moveaxis(d, 1, -1)).reshape(-1, s_t)
    return d


def build_v_design(state: ParamState, x: np.ndarray, target: int) -> np.ndarray:
    """Design matrix for the target response factor in the conventional
    layout: rows enumerate (sample, remaining response modes ascending) with
    the sample index fastest, columns the core extent of the target mode."""
    ws = _adhoc_workspace(state, x)
    shape = ws.shape
    L, M = shape.n_pred_modes, shape.n_resp_modes
    s_t = state.theta[L + target]
    core_rot = np.moveaxis(state.core, L + target, L)
    partial = core_rot
    for l, u in enumerate(state.u_factors):
        partial = tops.mode_product(partial, u, l)
    rest = [m for m in range(M) if m != target]
    for axis, m in enumerate(rest, start=L + 1):
        partial = tops.mode_product(partial, state.v_factors[m], axis)
    d = tops.contracted_product(x, partial, L)  # (N, S_t, Q_rest...)
    rows = (0,) + tuple(range(2, d.ndim))
    return tops.matricize(d, tops.IndexPartition(rows, (1,)))


def _adhoc_workspace(state: ParamState, x: np.ndarray) -> GibbsWorkspace:
    """Workspace for one-off design construction (testing paths)."""
    l = len(state.u_factors)
    q_dims = tuple(v.shape[0] for v in state.v_factors)
    y_dummy = np.zeros((x.shape[0], *q_dims))
    return GibbsWorkspace(x, y_dummy)


def _core_matrix(state: ParamState) -> np.ndarray:
    """Core reshaped to (prod R, prod S) in the internal C enumeration."""
    L = len(state.u_factors)
    r = int(np.prod(state.theta[:L], dtype=np.int64))
    return state.core.reshape(r, -1)


def _predictor_image(state: ParamState, ws: GibbsWorkspace) -> np.ndarray:
    """X contracted through the predictor factors: (N, prod R)."""
    z = ws.x
    for l, u in enumerate(state.u_factors):
        z = tops.mode_product(z, u.T, 1 + l)
    return np.ascontiguousarray(z).reshape(ws.shape.n_samples, -1)


def _response_image(state: ParamState, ws: GibbsWorkspace) -> np.ndarray:
    """Y contracted through the response factors: (N, prod S)."""
    z = ws.y
    for m, v in enumerate(state.v_factors):
        z = tops.mode_product(z, v.T, 1 + m)
    return np.ascontiguousarray(z).reshape(ws.shape.n_samples, -1)


def predict_state(state: ParamState, ws: GibbsWorkspace) -> np.ndarray:
    """Regression surface for the workspace predictors at this state."""
    xu = _predictor_image(state, ws)
    z = xu @ _core_matrix(state)  # (N, prod S)
    L = ws.shape.n_pred_modes
    s_dims = state.theta[L:]
    z = z.reshape((ws.shape.n_samples, *s_dims))
    for m, v in enumerate(state.v_factors):
        z = tops.mode_product(z, v, 1 + m)
    return z


def residual_ss(state: ParamState, ws: GibbsWorkspace) -> float:
    return tops.frobenius_norm_sq(ws.y - predict_state(state, ws))


def log_likelihood_state(state: ParamState, ws: GibbsWorkspace) -> float:
    """Full-data Gaussian log likelihood at the state."""
    rss = residual_ss(state, ws)
    n = ws.n_total
    return -0.5 * n * math.log(2.0 * math.pi * state.sigma2) - 0.5 * rss / state.sigma2


# ---------------------------------------------------------------------------
# SPD solves


def _chol_precision(a: np.ndarray):
    """Lower Cholesky factor of a posterior precision, with one jitter retry.

    Exact arithmetic guarantees positive definiteness (the prior precision
    is a positive multiple of the identity); jitter only covers roundoff.
    """
    try:
        return scipy.linalg.cholesky(a, lower=True)
    except scipy.linalg.LinAlgError:
        jitter = _JITTER_SCALE * float(np.mean(np.diag(a)))
        warnings.warn(
            f"posterior precision required {jitter:.3e} diagonal jitter",
            RuntimeWarning,
            stacklevel=2,
        )
        try:
            return scipy.linalg.cholesky(
                a + jitter * np.eye(a.shape[0]), lower=True
            )
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(
                "posterior precision not positive definite after jitter"
            ) from exc


def _gaussian_from_precision(chol_l, rhs, rng: np.random.Generator | None):
    """Mean (and one draw when rng given) of N(A^-1 rhs, A^-1), A = L L^T.

    ``rhs`` may be a matrix; columns are treated as independent blocks.
    """
    mean = scipy.linalg.cho_solve((chol_l, True), rhs)
    if rng is None:
        return mean, None
    z = rng.standard_normal(rhs.shape)
    noise = scipy.linalg.solve_triangular(chol_l, z, lower=True, trans=1)
    return mean, mean + noise


# ---------------------------------------------------------------------------
# conditional updates


def _u_conditional(state, ws, target, b):
    """Posterior precision and right-hand side of the target factor update.

    The design never materializes: with T[n,q,p,r] = sum_j X[n,p,j] W[r,j,q]
    its Gram matrix factorizes through the cached X Gram tensor,
    gram[(p,r),(p',r')] = sum_{j,j'} XX[p,p',j,j'] * WW[r,r',j,j'],
    and the data term through Y contracted with W.
    """
    partial = _u_partial(state, ws, target)  # (R, J, Q)
    r_t, n_rest, _ = partial.shape
    p_t = ws.shape.p_dims[target]
    w = partial.reshape(r_t * n_rest, -1)  # (R*J, Q)
    ww = (w @ w.T).reshape(r_t, n_rest, r_t, n_rest)
    ww = np.ascontiguousarray(ww.transpose(0, 2, 1, 3))  # (R, R', J, J')
    gram = np.tensordot(ws.x_gram[target], ww, axes=([2, 3], [2, 3]))
    gram = np.ascontiguousarray(gram.transpose(0, 2, 1, 3))  # (P, R, P', R')
    n_par = p_t * r_t
    a = gram.reshape(n_par, n_par)
    a *= b / state.sigma2
    prec_prior = 1.0 / ws.priors.var_u
    a[np.diag_indices_from(a)] += prec_prior
    yw = (ws.y_by_sample @ w.T).reshape(-1, r_t, n_rest)  # (N, R, J)
    rhs = np.tensordot(ws.x_rotated[target], yw, axes=([0, 2], [0, 2]))  # (P, R)
    rhs = rhs.reshape(-1)
    rhs *= b / state.sigma2
    rhs += prec_prior * ws.priors.mu_u
    return a, rhs, (p_t, r_t)


def sample_u_factor(
    state: ParamState,
    ws: GibbsWorkspace,
    target: int,
    rng: np.random.Generator,
    b: float = 1.0,
) -> np.ndarray:
    """Draw the target predictor factor from its (tempered) full conditional."""
    b = _check_fraction(b)
    a, rhs, dims = _u_conditional(state, ws, target, b)
    chol = _chol_precision(a)
    _, draw = _gaussian_from_precision(chol, rhs, rng)
    return draw.reshape(dims)


def map_u_factor(state: ParamState, ws: GibbsWorkspace, target: int) -> np.ndarray:
    """Conditional posterior mean (the closed-form MAP coordinate update)."""
    a, rhs, dims = _u_conditional(state, ws, target, 1.0)
    chol = _chol_precision(a)
    mean, _ = _gaussian_from_precision(chol, rhs, None)
    return mean.reshape(dims)


def _v_conditional(state, ws, target, b):
    d = _v_regression_matrix(state, ws, target)
    prec_prior = 1.0 / ws.priors.var_v
    a = (b / state.sigma2) * (d.T @ d)
    a[np.diag_indices_from(a)] += prec_prior
    rhs = (b / state.sigma2) * (d.T @ ws.y_rotated[target])
    rhs += prec_prior * ws.priors.mu_v
    return a, rhs


def sample_v_factor(
    state: ParamState,
    ws: GibbsWorkspace,
    target: int,
    rng: np.random.Generator,
    b: float = 1.0,
) -> np.ndarray:
    """Draw the target response factor from its (tempered) full conditional.

    The joint system over the factor's rows decouples into one small solve
    per response index (the design enters through an identity Kronecker
    block), so the posterior is handled block by block.
    """
    b = _check_fraction(b)
    a, rhs = _v_conditional(state, ws, target, b)
    chol = _chol_precision(a)
    _, draw = _gaussian_from_precision(chol, rhs, rng)
    return draw.T


def map_v_factor(state: ParamState, ws: GibbsWorkspace, target: int) -> np.ndarray:
    a, rhs = _v_conditional(state, ws, target, 1.0)
    chol = _chol_precision(a)
    mean, _ = _gaussian_from_precision(chol, rhs, None)
    return mean.T


def _core_conditional(state, ws, b):
    xu = _predictor_image(state, ws)
    yv = _response_image(state, ws)
    xtx = xu.T @ xu
    vtv = None
    for v in state.v_factors:
        g = v.T @ v
        vtv = g if vtv is None else np.kron(vtv, g)
    a = (b / state.sigma2) * np.kron(xtx, vtv)
    a[np.diag_indices_from(a)] += 1.0 / ws.priors.var_g
    rhs = (b / state.sigma2) * (xu.T @ yv).reshape(-1)
    rhs += ws.priors.mu_g / ws.priors.var_g
    return a, rhs


def sample_core(
    state: ParamState,
    ws: GibbsWorkspace,
    rng: np.random.Generator,
    b: float = 1.0,
) -> np.ndarray:
    """Draw the core tensor from its (tempered) full conditional.

    The conditional is the conjugate Gaussian for the bilinear regression of
    Y on (predictor image, response factors); its precision is the Kronecker
    product of the two Gram matrices plus the prior precision, so no Gram
    inverse is ever formed and a rank-deficient response factor stack is
    harmless.
    """
    b = _check_fraction(b)
    a, rhs = _core_conditional(state, ws, b)
    chol = _chol_precision(a)
    _, draw = _gaussian_from_precision(chol, rhs, rng)
    return draw.reshape(state.theta)


def map_core(state: ParamState, ws: GibbsWorkspace) -> np.ndarray:
    a, rhs = _core_conditional(state, ws, 1.0)
    chol = _chol_precision(a)
    mean, _ = _gaussian_from_precision(chol, rhs, None)
    return mean.reshape(state.theta)


def sigma2_posterior_params(
    state: ParamState, ws: GibbsWorkspace, b: float = 1.0
) -> tuple:
    """(alpha', beta') of the inverse-gamma conditional for the noise variance."""
    b = _check_fraction(b)
    alpha_post = ws.priors.alpha + 0.5 * b * ws.n_total
    beta_post = ws.priors.beta + 0.5 * b * residual_ss(state, ws)
    return alpha_post, beta_post


def sample_noise_variance(
    state: ParamState,
    ws: GibbsWorkspace,
    rng: np.random.Generator,
    b: float = 1.0,
) -> float:
    """Draw sigma^2 from its inverse-gamma (tempered) full conditional."""
    alpha_post, beta_post = sigma2_posterior_params(state, ws, b)
    return float(beta_post / rng.gamma(alpha_post))


def map_noise_variance(state: ParamState, ws: GibbsWorkspace) -> float:
    """Closed-form noise-variance update beta' / (alpha' - 1)."""
    alpha_post, beta_post = sigma2_posterior_params(state, ws, 1.0)
    if alpha_post <= 1.0:
        raise ValueError("alpha' must exceed 1 for the closed-form update")
    return float(beta_post / (alpha_post - 1.0))


def gibbs_sweep(
    state: ParamState,
    ws: GibbsWorkspace,
    rng: np.random.Generator,
    b: float = 1.0,
) -> ParamState:
    """One deterministic-scan pass over all blocks.

    Updates the predictor factors in mode order, then the response factors,
    then the core, then the noise variance; the core dimension is untouched.
    """
    new = state.copy()
    for l in range(len(new.u_factors)):
        new.u_factors[l] = sample_u_factor(new, ws, l, rng, b)
    for m in range(len(new.v_factors)):
        new.v_factors[m] = sample_v_factor(new, ws, m, rng, b)
    new.core = sample_core(new, ws, rng, b)
    new.sigma2 = sample_noise_variance(new, ws, rng, b)
    return new
