"""Local predictive ability of forecasting experts from their log scores.

Two Gaussian-process models infer an expert's ELPD as a function of pooling
variables: a latent log-noncentrality model with a scaled noncentral
chi-squared likelihood (``gp_chisq``) and a fast Gaussian model on
cube-root-transformed scores (``gp_cube``).  ``pooling`` turns the resulting
ELPD posteriors into combination weights.
"""
from .data import (ColumnMap, DataError, PosteriorDraws, PriorConfig, ScoreDataset,
                   Standardizer, load_dataset, load_draws, save_draws)
from .hmc import HmcConfig
from .kernel import KernelConfig
from .ncx2 import ScaledNcx2Params
from .pooling import PoolWeights
from .transforms import CUBE_ROOT, TransformSpec

__version__ = "0.1.0"

__all__ = [
    "CUBE_ROOT", "ColumnMap", "DataError", "HmcConfig", "KernelConfig", "PoolWeights",
    "PosteriorDraws", "PriorConfig", "ScaledNcx2Params", "ScoreDataset", "Standardizer",
    "TransformSpec", "load_dataset", "load_draws", "save_draws", "__version__",
]
