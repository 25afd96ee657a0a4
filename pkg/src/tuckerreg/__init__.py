"""Bayesian tensor-on-tensor regression with Tucker-structured coefficients.

The package provides two fitting routes for regressing one tensor on
another through a Tucker-decomposed coefficient tensor whose core dimension
is inferred from the data: a trans-dimensional MCMC sampler with full
posterior uncertainty, and a fast annealed-MAP point estimator.  Estimator
classes follow the scikit-learn ``fit``/``predict`` conventions; the lower
level sampler, tensor algebra, simulation harness, and file formats are
exposed for direct use.
"""

from .estimators import (
    TuckerMAPRegressor,
    TuckerMCMCRegressor,
    VectorizedOLSRegressor,
)
from .exceptions import ConfigError, NumericalError, PartitionError, ShapeError
from .fastfit import MapFit, SaConfig, run_fast
from .mcmc import DimPrior, MhConfig, run_mcmc
from .model import (
    ChainTrace,
    ModelShape,
    ParamState,
    PriorConfig,
    assemble_coefficient,
    log_likelihood,
    ols_baseline,
    param_count,
    posterior_predict,
    predict_mean,
    rpe,
)
from .simulate import SimConfig, gen_dataset, run_replication

__version__ = "0.1.0"

__all__ = [
    "ChainTrace",
    "ConfigError",
    "DimPrior",
    "MapFit",
    "MhConfig",
    "ModelShape",
    "NumericalError",
    "ParamState",
    "PartitionError",
    "PriorConfig",
    "SaConfig",
    "ShapeError",
    "SimConfig",
    "TuckerMAPRegressor",
    "TuckerMCMCRegressor",
    "VectorizedOLSRegressor",
    "assemble_coefficient",
    "gen_dataset",
    "log_likelihood",
    "ols_baseline",
    "param_count",
    "posterior_predict",
    "predict_mean",
    "rpe",
    "run_fast",
    "run_mcmc",
    "run_replication",
    "__version__",
]
