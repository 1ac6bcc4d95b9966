"""Time series clustering with finite mixtures of linear Gaussian state space models."""

__version__ = "0.1.0"

from .data import TimeSeriesDataset
from .estimator import MLGSSMClustering
from .exceptions import MlgssmError
from .initializer import InitConfig, best_params_per_series, init_mixture
from .io import load_dataset, load_model, save_dataset, save_model
from .kalman import LgssmParams, filter, log_likelihood, smooth, sufficient_stats
from .lgssm_em import EmConfig, fit_lgssm
from .metrics import confusion_matrix, similarity, similarity_from_labels
from .mixture_em import MixtureParams, e_step, fit_mixture, m_step
from .model_selection import bic, grid_search
from .preprocess import RECIPES, PipelineSpec, apply_pipeline
from .simulate import SimSpec, generate_dataset

__all__ = [
    "EmConfig", "InitConfig", "LgssmParams", "MLGSSMClustering", "MixtureParams",
    "MlgssmError", "PipelineSpec", "RECIPES", "SimSpec", "TimeSeriesDataset",
    "apply_pipeline", "best_params_per_series", "bic", "confusion_matrix", "e_step",
    "filter", "fit_lgssm", "fit_mixture", "generate_dataset", "grid_search", "init_mixture",
    "load_dataset", "load_model", "log_likelihood", "m_step", "save_dataset", "save_model",
    "similarity", "similarity_from_labels", "smooth", "sufficient_stats",
]
