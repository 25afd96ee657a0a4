"""The tensor-on-tensor regression model.

The response tensor ``Y`` of shape ``(N, Q_1, ..., Q_M)`` is regressed on a
predictor tensor ``X`` of shape ``(N, P_1, ..., P_L)`` through

    Y = <X, B>_L + E,

where the coefficient tensor ``B`` of shape ``(P_1..P_L, Q_1..Q_M)`` carries
a Tucker structure: a core of extents ``theta = (R_1..R_L, S_1..S_M)``
multiplied by one factor matrix per mode.  Noise entries are iid
``N(0, sigma^2)``.  Priors are Gaussian on the vectorized core and factors
and inverse-gamma on ``sigma^2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor_ops as tops
from .exceptions import ShapeError

CoreDim = tuple  # (R_1..R_L, S_1..S_M), positive ints


@dataclass(frozen=True)
class ModelShape:
    """Problem dimensions: sample count plus predictor/response extents."""

    n_samples: int
    p_dims: tuple
    q_dims: tuple

    def __init__(self, n_samples, p_dims, q_dims):
        object.__setattr__(self, "n_samples", int(n_samples))
        object.__setattr__(self, "p_dims", tuple(int(p) for p in p_dims))
        object.__setattr__(self, "q_dims", tuple(int(q) for q in q_dims))
        if self.n_samples < 1:
            raise ShapeError("n_samples must be >= 1")
        if len(self.p_dims) < 1 or len(self.q_dims) < 1:
            raise ShapeError("need at least one predictor and one response mode")
        if any(p < 1 for p in self.p_dims) or any(q < 1 for q in self.q_dims):
            raise ShapeError("all extents must be >= 1")

    @property
    def n_pred_modes(self) -> int:
        return len(self.p_dims)

    @property
    def n_resp_modes(self) -> int:
        return len(self.q_dims)

    @property
    def n_responses(self) -> int:
        return int(np.prod(self.q_dims, dtype=np.int64))

    @property
    def n_predictors(self) -> int:
        return int(np.prod(self.p_dims, dtype=np.int64))

    def validate_theta(self, theta) -> CoreDim:
        """Check a core-dimension tuple against the data extents.

        Core extents are capped at the data extents: a larger core is never
        identifiable.
        """
        theta = tuple(int(t) for t in theta)
        L, M = self.n_pred_modes, self.n_resp_modes
        if len(theta) != L + M:
            raise ShapeError(f"theta {theta} must have {L + M} entries")
        for t, p in zip(theta[:L], self.p_dims):
            if not 1 <= t <= p:
                raise ShapeError(f"theta {theta} outside [1, extent] bounds")
        for t, q in zip(theta[L:], self.q_dims):
            if not 1 <= t <= q:
                raise ShapeError(f"theta {theta} outside [1, extent] bounds")
        return theta

    @staticmethod
    def from_data(x: np.ndarray, y: np.ndarray) -> "ModelShape":
        if x.ndim < 2 or y.ndim < 2:
            raise ShapeError("X and Y must have at least 2 modes (samples first)")
        if x.shape[0] != y.shape[0]:
            raise ShapeError(
                f"X has {x.shape[0]} samples but Y has {y.shape[0]}"
            )
        return ModelShape(x.shape[0], x.shape[1:], y.shape[1:])


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the conjugate priors.

    Means and variances are scalars broadcast over the corresponding
    vectorized parameter blocks (so all prior covariances are multiples of
    the identity); ``alpha``/``beta`` parametrize the inverse-gamma prior on
    the noise variance.
    """

    mu_u: float = 0.0
    mu_v: float = 0.0
    mu_g: float = 0.0
    var_u: float = 1.0
    var_v: float = 1.0
    var_g: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("var_u", "var_v", "var_g", "alpha", "beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def sigma2_prior_mean_denominator(self) -> float:
        return self.alpha + 1.0


@dataclass
class ParamState:
    """One draw/iterate of the model parameters for a fixed core dimension."""

    theta: CoreDim
    u_factors: list  # L matrices of shape (P_l, R_l)
    v_factors: list  # M matrices of shape (Q_m, S_m)
    core: np.ndarray  # extents theta
    sigma2: float

    def validate(self, shape: ModelShape) -> None:
        L, M = shape.n_pred_modes, shape.n_resp_modes
        theta = shape.validate_theta(self.theta)
        if self.core.shape != theta:
            raise ShapeError(f"core shape {self.core.shape} != theta {theta}")
        for l, u in enumerate(self.u_factors):
            if u.shape != (shape.p_dims[l], theta[l]):
                raise ShapeError(f"U[{l}] has shape {u.shape}")
        for m, v in enumerate(self.v_factors):
            if v.shape != (shape.q_dims[m], theta[L + m]):
                raise ShapeError(f"V[{m}] has shape {v.shape}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    def copy(self) -> "ParamState":
        return ParamState(
            tuple(self.theta),
            [u.copy() for u in self.u_factors],
            [v.copy() for v in self.v_factors],
            self.core.copy(),
            float(self.sigma2),
        )


@dataclass
class ChainTrace:
    """Post-burn-in draws retained for prediction and uncertainty reports.

    ``b_draws`` stacks the assembled coefficient tensors, one per stored
    iteration, so prediction needs nothing but this array and ``sigma2s``.
    Setting ``store_factors`` in the sampler swaps the stack for per-draw
    Tucker factors when the full coefficient tensor would be too large.
    """

    shape: ModelShape
    iterations: np.ndarray  # stored iteration indices, strictly increasing
    thetas: np.ndarray  # (n_stored, L+M) int array
    sigma2s: np.ndarray  # (n_stored,)
    b_draws: np.ndarray | None  # (n_stored, *p_dims, *q_dims)
    factor_draws: list | None = None  # per-draw ParamState when B not stored
    burn_in: int = 0
    seed: int | None = None
    accept_rate: float = float("nan")
    theta_path: np.ndarray | None = None  # full per-iteration theta history

    def __len__(self) -> int:
        return len(self.iterations)

    def coefficient_draws(self) -> np.ndarray:
        """Stacked B draws of shape ``(n_stored, *p_dims, *q_dims)``."""
        if self.b_draws is not None:
            return self.b_draws
        stack = np.empty(
            (len(self), *self.shape.p_dims, *self.shape.q_dims), dtype=np.float64
        )
        for i, state in enumerate(self.factor_draws):
            stack[i] = assemble_coefficient(state)
        return stack

    def coefficient_mean(self) -> np.ndarray:
        return self.coefficient_draws().mean(axis=0)

    def theta_mode(self) -> CoreDim:
        """Most frequent core dimension among the stored draws."""
        values, counts = np.unique(self.thetas, axis=0, return_counts=True)
        return tuple(int(v) for v in values[np.argmax(counts)])


def assemble_coefficient(state: ParamState) -> np.ndarray:
    """Expand a parameter state into the full coefficient tensor B."""
    return tops.tucker_assemble(state.core, state.u_factors + state.v_factors)


def predict_mean(x: np.ndarray, b: np.ndarray, n_pred_modes: int) -> np.ndarray:
    """Noise-free regression surface ``<X, B>`` contracted over the predictor modes."""
    if x.ndim != n_pred_modes + 1:
        raise ShapeError(f"X of order {x.ndim} with {n_pred_modes} predictor modes")
    return tops.contracted_product(x, b, n_pred_modes)


def log_likelihood(y: np.ndarray, y_hat: np.ndarray, sigma2: float) -> float:
    """Gaussian log-likelihood of the residuals, summed over every entry."""
    if y.shape != y_hat.shape:
        raise ShapeError(f"response {y.shape} vs prediction {y_hat.shape}")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    rss = tops.frobenius_norm_sq(y - y_hat)
    n = y.size
    return -0.5 * n * np.log(2.0 * np.pi * sigma2) - 0.5 * rss / sigma2


def param_count(shape: ModelShape, theta) -> int:
    """Number of scalar parameters in the Tucker representation for ``theta``."""
    theta = shape.validate_theta(theta)
    L = shape.n_pred_modes
    r_dims, s_dims = theta[:L], theta[L:]
    total = sum(p * r for p, r in zip(shape.p_dims, r_dims))
    total += sum(q * s for q, s in zip(shape.q_dims, s_dims))
    total += int(np.prod(r_dims, dtype=np.int64)) * int(np.prod(s_dims, dtype=np.int64))
    return int(total)


@dataclass
class PredictiveSummary:
    """Pointwise posterior-predictive mean and equal-tailed interval."""

    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    samples: np.ndarray | None = None  # (n_total_draws, n_new, *q_dims) if kept


def posterior_predict(
    trace: ChainTrace,
    x_new: np.ndarray,
    rng: np.random.Generator,
    draws_per_sample: int = 1,
    level: float = 0.95,
    return_samples: bool = False,
    chunk_rows: int = 64,
) -> PredictiveSummary:
    """Posterior-predictive summary for new predictor data.

    For every stored draw ``(B, sigma^2)`` the predictive law is Gaussian
    around ``<X_new, B>`` with variance ``sigma^2`` per entry;
    ``draws_per_sample`` noise replicates are taken per stored draw.
    Intervals are equal-tailed empirical quantiles across all predictive
    samples.  ``level=0`` degenerates both interval ends to the pointwise
    mean of the per-draw means.

    Processing is chunked over rows of ``x_new`` to bound memory.
    """
    if len(trace) == 0:
        raise ValueError("trace holds no stored draws")
    if not 0 <= level < 1:
        raise ValueError("level must lie in [0, 1)")
    L = trace.shape.n_pred_modes
    if x_new.ndim != L + 1 or x_new.shape[1:] != trace.shape.p_dims:
        raise ShapeError(
            f"x_new extents {x_new.shape[1:]} != model extents {trace.shape.p_dims}"
        )
    n_new = x_new.shape[0]
    q_dims = trace.shape.q_dims
    n_resp = int(np.prod(q_dims, dtype=np.int64))

    b_stack = trace.coefficient_draws()
    n_draws = b_stack.shape[0]
    # (n_draws, prod(P), prod(Q)) in the package layout convention
    b_mats = np.stack(
        [tops.matricize(b_stack[i], _pq_partition(trace.shape)) for i in range(n_draws)]
    )
    x_mat = tops.matricize(x_new, tops.mode_partition(0, x_new.ndim))
    sigmas = np.sqrt(trace.sigma2s)

    mean_flat = np.empty((n_new, n_resp))
    lower_flat = np.empty((n_new, n_resp))
    upper_flat = np.empty((n_new, n_resp))
    lo_q, hi_q = 0.5 - level / 2.0, 0.5 + level / 2.0
    kept = [] if return_samples else None

    for start in range(0, n_new, chunk_rows):
        stop = min(start + chunk_rows, n_new)
        xc = x_mat[start:stop]  # (c, prod(P))
        means = np.einsum("cp,dpq->dcq", xc, b_mats)  # (n_draws, c, prod(Q))
        mean_flat[start:stop] = means.mean(axis=0)
        if draws_per_sample < 1:
            raise ValueError("draws_per_sample must be >= 1")
        noise = rng.standard_normal((n_draws, draws_per_sample, stop - start, n_resp))
        samples = means[:, None, :, :] + sigmas[:, None, None, None] * noise
        samples = samples.reshape(n_draws * draws_per_sample, stop - start, n_resp)
        if level == 0.0:
            lower_flat[start:stop] = mean_flat[start:stop]
            upper_flat[start:stop] = mean_flat[start:stop]
        else:
            lower_flat[start:stop] = np.quantile(samples, lo_q, axis=0)
            upper_flat[start:stop] = np.quantile(samples, hi_q, axis=0)
        if kept is not None:
            kept.append(samples)

    def refold(flat):
        return flat.reshape((n_new, *q_dims), order="F")

    samples_out = None
    if kept is not None:
        samples_out = np.concatenate(
            [k.reshape((k.shape[0], k.shape[1], *q_dims), order="F") for k in kept],
            axis=1,
        )
    return PredictiveSummary(
        refold(mean_flat), refold(lower_flat), refold(upper_flat), level, samples_out
    )


def _pq_partition(shape: ModelShape) -> tops.IndexPartition:
    L, M = shape.n_pred_modes, shape.n_resp_modes
    return tops.IndexPartition(tuple(range(L)), tuple(range(L, L + M)))


def rpe(y_true_sets, y_pred_sets) -> float:
    """Relative prediction error averaged over held-out sets.

    Each set contributes ``|Y - Yhat|_F^2 / |Y|_F^2``.
    """
    y_true_sets = list(y_true_sets)
    y_pred_sets = list(y_pred_sets)
    if len(y_true_sets) != len(y_pred_sets):
        raise ValueError("mismatched number of truth/prediction sets")
    if not y_true_sets:
        raise ValueError("need at least one evaluation set")
    total = 0.0
    for y, y_hat in zip(y_true_sets, y_pred_sets):
        if y.shape != y_hat.shape:
            raise ShapeError(f"set shapes differ: {y.shape} vs {y_hat.shape}")
        denom = tops.frobenius_norm_sq(y)
        if denom == 0.0:
            raise ZeroDivisionError("a truth set is identically zero")
        total += tops.frobenius_norm_sq(y - y_hat) / denom
    return total / len(y_true_sets)


def ols_baseline(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Unstructured least-squares coefficient matrix on vectorized data.

    Returns the ``(prod(P), prod(Q))`` matrix minimizing
    ``|Y_(1) - X_(1) B|_F^2`` column by column.  When the design is rank
    deficient (e.g. fewer samples than predictors) the minimum-norm solution
    is returned and a warning is emitted.
    """
    shape = ModelShape.from_data(x, y)
    x_mat = tops.matricize(x, tops.mode_partition(0, x.ndim))
    y_mat = tops.matricize(y, tops.mode_partition(0, y.ndim))
    b, _, rank, _ = np.linalg.lstsq(x_mat, y_mat, rcond=None)
    if rank < x_mat.shape[1]:
        warnings.warn(
            f"design has rank {rank} < {x_mat.shape[1]}; "
            "returning the minimum-norm least-squares solution",
            RuntimeWarning,
            stacklevel=2,
        )
    return b


def ols_predict(b_mat: np.ndarray, x_new: np.ndarray, q_dims) -> np.ndarray:
    """Apply an :func:`ols_baseline` coefficient matrix to new predictors."""
    q_dims = tuple(q_dims)
    x_mat = tops.matricize(x_new, tops.mode_partition(0, x_new.ndim))
    y_mat = x_mat @ b_mat
    return y_mat.reshape((x_new.shape[0], *q_dims), order="F")
