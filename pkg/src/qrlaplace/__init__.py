"""Laplace-approximated Bayesian quantile regression for latent Gaussian models."""

from .ald import ald_logpdf, ald_sample, pinball_loss
from .curvature import CurvatureEstimate, TkcConfig, fisher_curvature, tkc_curvature, tkc_estimate
from .design import CrossedDesign, GpDesign, GroupedDesign, make_fixed_design
from .laplace import FitConfig, FitResult, fit, laplace_log_marginal, predict
from .mode import ModeConfig, find_mode
from .model import QuantileModel
from .quadrature import exact_log_marginal

__all__ = [
    "CrossedDesign",
    "CurvatureEstimate",
    "FitConfig",
    "FitResult",
    "GpDesign",
    "GroupedDesign",
    "ModeConfig",
    "QuantileModel",
    "TkcConfig",
    "ald_logpdf",
    "ald_sample",
    "exact_log_marginal",
    "find_mode",
    "fisher_curvature",
    "fit",
    "laplace_log_marginal",
    "make_fixed_design",
    "pinball_loss",
    "predict",
    "tkc_curvature",
    "tkc_estimate",
]
