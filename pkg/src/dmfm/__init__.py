"""Dynamic matrix factor models: loadings, MAR(1) factor dynamics and prediction."""

from __future__ import annotations

from .dataio import MatrixSeries, exp_smooth_detrend, read_series, write_series
from .errors import DMFMError, EstimationError, ValidationError
from .factor import LoadingPair, extract_factors, select_rank_er, tipup_loadings
from .mar import MarModel, asym_cov, fit, l2e_estimate, lse_estimate, proj_estimate

__version__ = "0.1.0"

__all__ = [
    "DMFMError",
    "EstimationError",
    "LoadingPair",
    "MarModel",
    "MatrixSeries",
    "ValidationError",
    "asym_cov",
    "exp_smooth_detrend",
    "extract_factors",
    "fit",
    "l2e_estimate",
    "lse_estimate",
    "proj_estimate",
    "read_series",
    "select_rank_er",
    "tipup_loadings",
    "write_series",
]
