"""Optimization-based fitting: closed-form MAP updates plus annealing.

For a fixed core dimension the conditional posterior of every factor block
is Gaussian, so its mode is the ridge-style closed-form solve already used
by the Gibbs sampler; cycling those solves is block-coordinate ascent on
the joint posterior.  The core dimension itself is chosen by simulated
annealing on the Bayesian information criterion

    BIC(theta) = -2 * loglik(MAP fit) + n_params(theta) * log(N * prod Q),

counting every scalar response entry as one observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .gibbs import (
    GibbsWorkspace,
    initial_state,
    log_likelihood_state,
    map_core,
    map_noise_variance,
    map_u_factor,
    map_v_factor,
)
from .mcmc import DimPrior, neighbors
from .model import ModelShape, ParamState, PriorConfig, param_count


@dataclass
class SaConfig:
    """Annealing schedule and inner-solver settings.

    ``schedule`` is ``"geometric"`` (``zeta0 * gamma^t``) or
    ``"logarithmic"`` (``zeta0 / log(1 + t)``).  ``zeta0=None`` calibrates
    the initial temperature from the BIC spread of a few random neighbor
    probes.  ``n_inner`` caps the MAP coordinate passes per candidate fit,
    with early exit once the relative parameter change drops below ``tol``.
    """

    n_outer: int = 200
    n_inner: int = 10
    schedule: str = "geometric"
    gamma: float = 0.95
    zeta0: float | None = None
    seed: int | None = None
    initial_theta: tuple | None = None
    bounds: tuple | None = None
    tol: float = 1e-8

    def validate(self) -> None:
        if self.schedule not in ("geometric", "logarithmic"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "geometric" and not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.zeta0 is not None and not self.zeta0 > 0:
            raise ValueError("zeta0 must be positive")
        if self.n_outer < 1 or self.n_inner < 1:
            raise ValueError("n_outer and n_inner must be >= 1")


@dataclass
class MapFit:
    """Point estimate returned by the fast path."""

    state: ParamState
    bic: float
    loglik: float
    theta_path: list = field(default_factory=list)
    bic_path: list = field(default_factory=list)


def temperature(t: int, cfg: SaConfig, zeta0: float) -> float:
    """Annealing temperature at outer iteration ``t`` (1-based)."""
    if cfg.schedule == "geometric":
        return zeta0 * cfg.gamma**t
    return zeta0 / math.log(1.0 + t)


def sa_accept(bic_new: float, bic_old: float, zeta: float, rng) -> bool:
    """Annealing acceptance: improvements (and exact ties) always pass,
    uphill moves pass with probability exp(-(delta BIC)/zeta)."""
    if not zeta > 0:
        raise ValueError("temperature must be positive")
    if bic_new <= bic_old:
        return True
    return bool(rng.random() < math.exp((bic_old - bic_new) / zeta))


def bic(state: ParamState, ws: GibbsWorkspace) -> float:
    """BIC of a fitted state under the scalar-observation count convention."""
    ll = log_likelihood_state(state, ws)
    k = param_count(ws.shape, state.theta)
    return -2.0 * ll + k * math.log(ws.n_total)


def _neg_log_joint(state: ParamState, ws: GibbsWorkspace) -> float:
    """Negative unnormalized log joint posterior (for monotonicity checks)."""
    pri = ws.priors
    val = -log_likelihood_state(state, ws)
    for u in state.u_factors:
        val += 0.5 * np.sum((u - pri.mu_u) ** 2) / pri.var_u
    for v in state.v_factors:
        val += 0.5 * np.sum((v - pri.mu_v) ** 2) / pri.var_v
    val += 0.5 * np.sum((state.core - pri.mu_g) ** 2) / pri.var_g
    val += (pri.alpha + 1.0) * math.log(state.sigma2) + pri.beta / state.sigma2
    return float(val)


def _relative_change(old: ParamState, new: ParamState) -> float:
    num = 0.0
    den = 0.0
    for a, b_ in zip(
        old.u_factors + old.v_factors + [old.core],
        new.u_factors + new.v_factors + [new.core],
    ):
        num += float(np.sum((a - b_) ** 2))
        den += float(np.sum(b_**2))
    num += (old.sigma2 - new.sigma2) ** 2
    den += new.sigma2**2
    return math.sqrt(num / den) if den > 0 else math.sqrt(num)


def map_cycle(
    state: ParamState,
    ws: GibbsWorkspace,
    n_passes: int,
    tol: float = 0.0,
    check_objective: bool = False,
) -> ParamState:
    """Up to ``n_passes`` rounds of closed-form coordinate updates.

    Block order matches the Gibbs scan: predictor factors, response factors,
    core, noise variance.  With ``check_objective`` the factor/core blocks
    assert that the negative log joint never increases (they are exact
    conditional maximizers; the noise-variance block uses the closed-form
    posterior-mean update, which is not the conditional mode, so it is
    excluded from the assertion).
    """
    current = state.copy()
    for _ in range(max(n_passes, 0)):
        before = current.copy() if tol > 0 else None
        obj = _neg_log_joint(current, ws) if check_objective else None
        for l in range(len(current.u_factors)):
            current.u_factors[l] = map_u_factor(current, ws, l)
            if check_objective:
                obj = _assert_non_increasing(obj, current, ws, f"U[{l}]")
        for m in range(len(current.v_factors)):
            current.v_factors[m] = map_v_factor(current, ws, m)
            if check_objective:
                obj = _assert_non_increasing(obj, current, ws, f"V[{m}]")
        current.core = map_core(current, ws)
        if check_objective:
            obj = _assert_non_increasing(obj, current, ws, "core")
        current.sigma2 = map_noise_variance(current, ws)
        if tol > 0 and _relative_change(before, current) < tol:
            break
    return current


def _assert_non_increasing(prev, state, ws, label):
    now = _neg_log_joint(state, ws)
    if now > prev + 1e-8 * (1.0 + abs(prev)):
        raise AssertionError(
            f"objective increased after {label} update: {prev} -> {now}"
        )
    return now


def fit_theta(
    theta,
    ws: GibbsWorkspace,
    cfg: SaConfig,
    rng: np.random.Generator,
) -> ParamState:
    """MAP fit for one candidate dimension from a random prior initialization."""
    state = initial_state(theta, ws.shape, ws.priors, rng=rng, randomize=True)
    return map_cycle(state, ws, cfg.n_inner, tol=cfg.tol)


def _calibrate_zeta0(theta0, fit0_bic, ws, cfg, bounds, rng, n_probes=5) -> float:
    """Initial temperature from the BIC spread over random neighbor probes."""
    opts = neighbors(theta0, bounds)
    if not opts:
        return 1.0
    deltas = []
    for _ in range(n_probes):
        cand = opts[rng.integers(len(opts))]
        cand_fit = fit_theta(cand, ws, cfg, rng)
        deltas.append(abs(bic(cand_fit, ws) - fit0_bic))
    scale = float(np.mean(deltas))
    return 10.0 * scale if scale > 0 else 1.0


def run_fast(
    x: np.ndarray,
    y: np.ndarray,
    priors: PriorConfig | None = None,
    cfg: SaConfig | None = None,
) -> MapFit:
    """Simulated-annealing search over core dimensions with MAP inner fits.

    Every outer iteration proposes a uniform neighbor of the current
    dimension, fits it from scratch, and applies the annealing acceptance
    rule to the BIC difference.  Returns the lowest-BIC fit encountered
    together with the dimension path for diagnostics.
    """
    cfg = cfg or SaConfig()
    cfg.validate()
    priors = priors or PriorConfig()
    ws = GibbsWorkspace(x, y, priors)
    shape = ws.shape
    bounds = DimPrior.for_shape(shape, cfg.bounds).bounds
    rng = np.random.default_rng(cfg.seed)

    theta = tuple(cfg.initial_theta) if cfg.initial_theta else (1,) * len(bounds)
    theta = shape.validate_theta(theta)
    # many small dense solves; keep BLAS single-threaded
    with threadpool_limits(limits=1):
        current = fit_theta(theta, ws, cfg, rng)
        current_bic = bic(current, ws)
        zeta0 = cfg.zeta0
        if zeta0 is None:
            zeta0 = _calibrate_zeta0(theta, current_bic, ws, cfg, bounds, rng)

        best = current
        best_bic = current_bic
        theta_path = [theta]
        bic_path = [current_bic]

        for t in range(1, cfg.n_outer + 1):
            opts = neighbors(theta, bounds)
            if not opts:
                break
            zeta = temperature(t, cfg, zeta0)
            cand = opts[rng.integers(len(opts))]
            cand_fit = fit_theta(cand, ws, cfg, rng)
            cand_bic = bic(cand_fit, ws)
            if sa_accept(cand_bic, current_bic, zeta, rng):
                theta, current, current_bic = cand, cand_fit, cand_bic
                if cand_bic <= best_bic:
                    best, best_bic = cand_fit, cand_bic
            theta_path.append(theta)
            bic_path.append(current_bic)

    return MapFit(
        state=best,
        bic=best_bic,
        loglik=log_likelihood_state(best, ws),
        theta_path=theta_path,
        bic_path=bic_path,
    )
