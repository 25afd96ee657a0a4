"""Run-configuration files: a strict JSON schema with per-section defaults.

Top-level sections are ``model`` (priors, dimension bounds), ``mcmc``,
``fast``, ``sim``, and ``io``.  Every key is optional and defaults are
listed below; unknown keys anywhere are rejected so typos cannot silently
fall back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .exceptions import ConfigError
from .fastfit import SaConfig
from .mcmc import MhConfig
from .model import ModelShape, PriorConfig
from .simulate import SimConfig

_PRIOR_KEYS = {
    "mu_u": 0.0, "mu_v": 0.0, "mu_g": 0.0,
    "var_u": 1.0, "var_v": 1.0, "var_g": 1.0,
    "alpha": 1.0, "beta": 1.0,
}
_MODEL_KEYS = {"priors": None, "theta_bounds": None}
_MCMC_KEYS = {
    "n_iterations": 2000, "burn_in": 1000, "thin": 1, "b": 0.1,
    "n_proposal_sweeps": 3, "n_proposal_draws": 8,
    "initial_theta": None, "fix_theta": False,
    "store_factors": False,
}
_FAST_KEYS = {
    "n_outer": 200, "n_inner": 10, "schedule": "geometric", "gamma": 0.95,
    "zeta0": None, "initial_theta": None, "bounds": None, "tol": 1e-8,
}
_SIM_KEYS = {
    "n_samples": 100, "p_dims": [16, 12], "q_dims": [10, 8],
    "theta_star": [3, 3, 3, 3], "snr": 5.0, "design": "uncorrelated",
    "corr_rate": 0.5, "n_replicates": 5, "n_eval_sets": 5,
    "n_eval_samples": 1000,
}
_IO_KEYS = {"out_dir": ".", "seed": None, "threads": 1}


@dataclass
class RunConfig:
    """Parsed configuration with one attribute per section."""

    priors: PriorConfig = field(default_factory=PriorConfig)
    theta_bounds: tuple | None = None
    mcmc: MhConfig = field(default_factory=MhConfig)
    fast: SaConfig = field(default_factory=SaConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    out_dir: str = "."
    seed: int | None = None
    threads: int = 1


def _take(section: dict, defaults: dict, where: str) -> dict:
    unknown = set(section) - set(defaults)
    if unknown:
        raise ConfigError(
            f"unknown key(s) in {where}: {', '.join(sorted(unknown))}"
        )
    merged = dict(defaults)
    merged.update(section)
    return merged


def parse_run_config(doc: dict) -> RunConfig:
    """Validate a decoded JSON document and build the typed configuration."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration root must be a JSON object")
    known = {"model", "mcmc", "fast", "sim", "io"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

    model = _take(doc.get("model", {}), _MODEL_KEYS, "model")
    prior_values = _take(model.get("priors") or {}, _PRIOR_KEYS, "model.priors")
    mcmc_values = _take(doc.get("mcmc", {}), _MCMC_KEYS, "mcmc")
    fast_values = _take(doc.get("fast", {}), _FAST_KEYS, "fast")
    sim_values = _take(doc.get("sim", {}), _SIM_KEYS, "sim")
    io_values = _take(doc.get("io", {}), _IO_KEYS, "io")

    try:
        priors = PriorConfig(**prior_values)
        mcmc = MhConfig(
            **{
                **mcmc_values,
                "initial_theta": _opt_tuple(mcmc_values["initial_theta"]),
            }
        )
        mcmc.validate()
        fast = SaConfig(
            **{
                **fast_values,
                "initial_theta": _opt_tuple(fast_values["initial_theta"]),
                "bounds": _opt_tuple(fast_values["bounds"]),
            }
        )
        fast.validate()
        sim = SimConfig(
            shape=ModelShape(
                sim_values["n_samples"], sim_values["p_dims"], sim_values["q_dims"]
            ),
            theta_star=tuple(sim_values["theta_star"]),
            snr=float(sim_values["snr"]),
            design=sim_values["design"],
            corr_rate=float(sim_values["corr_rate"]),
            n_replicates=int(sim_values["n_replicates"]),
            n_eval_sets=int(sim_values["n_eval_sets"]),
            n_eval_samples=int(sim_values["n_eval_samples"]),
        )
        sim.validate()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    seed = io_values["seed"]
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
        raise ConfigError("io.seed must be an integer")
    return RunConfig(
        priors=priors,
        theta_bounds=_opt_tuple(model["theta_bounds"]),
        mcmc=mcmc,
        fast=fast,
        sim=sim,
        out_dir=str(io_values["out_dir"]),
        seed=seed,
        threads=int(io_values["threads"]),
    )


def _opt_tuple(value):
    return None if value is None else tuple(int(v) for v in value)


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_run_config(doc)
