"""Truncated-normal EMOS for ensemble wind-speed forecasts, with semi-local
clustering, interpolation to unobserved stations and forecast verification."""

from .data import Dataset, EnsembleForecast, Observation, Role, Station, load_dataset
from .emos import EmosParams, OptimizerConfig, fit, fit_group_models
from .tn import TruncNormal, tn_crps

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EmosParams",
    "EnsembleForecast",
    "Observation",
    "OptimizerConfig",
    "Role",
    "Station",
    "TruncNormal",
    "fit",
    "fit_group_models",
    "load_dataset",
    "tn_crps",
]
