"""Expected Shortfall as a weighted average of CAViaR tail quantiles.

A grid of conditional quantiles is fitted first (SAV or AS CAViaR, one fit
per level, then sorted row-wise). ES is then a linear combination of the
grid quantiles whose weights minimize the AL joint VaR/ES score.
"""
from .backtest import (
    LossMatrix,
    McsResult,
    ModelSpec,
    RollingConfig,
    RollingForecast,
    aggregate_joint_loss,
    aggregate_quantile_loss,
    fit_model,
    mcs,
    parse_model,
    rolling_forecast,
)
from .caviar import CaviarFit, CaviarParams, CaviarSpec, QuantileGrid, QuantileMatrix, fit_caviar, fit_grid
from .core import BetaWeightParams, DomainError, StudentTParams, beta_weight
from .optimize import BoxConstraints, MultiStartConfig, OptimizationError, minimize_multistart
from .simulate import DgpForm, DgpSpec, run_bias_study, simulate, true_es, true_var
from .wq import EsTag, EsVariant, EsWeightFit, build_grid, fit_es_weights, forecast_es

__version__ = "0.1.0"

__all__ = [
    "BetaWeightParams", "BoxConstraints", "CaviarFit", "CaviarParams", "CaviarSpec",
    "DgpForm", "DgpSpec", "DomainError", "EsTag", "EsVariant", "EsWeightFit",
    "LossMatrix", "McsResult", "ModelSpec", "MultiStartConfig", "OptimizationError",
    "QuantileGrid", "QuantileMatrix", "RollingConfig", "RollingForecast", "StudentTParams",
    "aggregate_joint_loss", "aggregate_quantile_loss", "beta_weight", "build_grid",
    "fit_caviar", "fit_es_weights", "fit_grid", "fit_model", "forecast_es", "mcs",
    "minimize_multistart", "parse_model", "rolling_forecast", "run_bias_study",
    "simulate", "true_es", "true_var",
]
