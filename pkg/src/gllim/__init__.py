"""Gaussian locally-linear mapping (GLLiM) with partially-latent responses."""

from .data import Dataset, Standardizer, load_dataset
from .em import FitConfig, FitReport, fit
from .errors import GLLiMError
from .model import (
    ConstraintSpec,
    ForwardParams,
    GLLiMParams,
    derive_forward,
    forward_expectation,
    from_joint_gmm,
    inverse_expectation,
    load_model,
    log_likelihood,
    save_model,
    to_joint_gmm,
)
from .selection import bic, parameter_count, select_lw

__all__ = [
    "ConstraintSpec",
    "Dataset",
    "FitConfig",
    "FitReport",
    "ForwardParams",
    "GLLiMError",
    "GLLiMParams",
    "Standardizer",
    "bic",
    "derive_forward",
    "fit",
    "forward_expectation",
    "from_joint_gmm",
    "inverse_expectation",
    "load_dataset",
    "load_model",
    "log_likelihood",
    "parameter_count",
    "save_model",
    "select_lw",
    "to_joint_gmm",
]
