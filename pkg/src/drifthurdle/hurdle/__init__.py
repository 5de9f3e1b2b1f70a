"""Hurdle-Gamma spatio-temporal model: simulation, Laplace fitting and prediction."""

from .data import (Dataset, Standardizer, aggregate_cells, aggregate_time, read_dataset,
                   standardize, write_dataset)
from .fit import HurdleFit, fit_hurdle
from .model import HurdleModelSpec, LaplaceEngine, ar1_precision
from .predict import (PosteriorSummary, PredictionTargets, predict,
                      time_averaged_comparison)
from .simulate import LatentTruth, simulate_hurdle

__all__ = [
    "Dataset", "HurdleFit", "HurdleModelSpec", "LaplaceEngine", "LatentTruth",
    "PosteriorSummary", "PredictionTargets", "Standardizer", "aggregate_cells",
    "aggregate_time", "ar1_precision", "fit_hurdle", "predict", "read_dataset",
    "simulate_hurdle", "standardize", "time_averaged_comparison", "write_dataset",
]
