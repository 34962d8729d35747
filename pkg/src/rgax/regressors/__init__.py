"""Supervised regressors behind one fit/predict contract."""

from .base import (FittedRegressor, TuningGrid, constant_model, load_model, predict,
                   save_model)
from .forest import fit_forest
from .gbt import fit_gbt
from .logistic import fit_logistic

__all__ = ["FittedRegressor", "TuningGrid", "constant_model", "fit_forest", "fit_gbt",
           "fit_logistic", "load_model", "predict", "save_model"]
