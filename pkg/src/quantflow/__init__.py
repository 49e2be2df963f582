"""Density-based outlier detection with a quantile-trained normalizing flow.

Fit an invertible flow to inlier feature embeddings by maximizing a low
batch quantile of the log-likelihood, then flag test features whose exact
log-likelihood falls below a TPR-beta threshold.
"""

from .detector import ScoreSet, Threshold, decide, score, select_threshold
from .features import BatchPlan, FeatureSet, load_csv, load_features, make_batches, save_features
from .flow import FlowModel, clamp_scale
from .metrics import EvalReport, aupr, auroc, evaluate, fpr_at_tpr
from .objective import LossResult, QuantileSpec, mean_nll_loss, qnll_loss, quantile
from .synthetic import DistSpec, analytic_log_prob, heavy_tailed_task, sample
from .training import AdamState, TrainConfig, TrainLog, adam_step, standardize_fit_apply, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BatchPlan",
    "DistSpec",
    "EvalReport",
    "FeatureSet",
    "FlowModel",
    "LossResult",
    "QuantileSpec",
    "ScoreSet",
    "Threshold",
    "TrainConfig",
    "TrainLog",
    "adam_step",
    "analytic_log_prob",
    "aupr",
    "auroc",
    "clamp_scale",
    "decide",
    "evaluate",
    "fpr_at_tpr",
    "heavy_tailed_task",
    "load_csv",
    "load_features",
    "make_batches",
    "mean_nll_loss",
    "qnll_loss",
    "quantile",
    "sample",
    "save_features",
    "score",
    "select_threshold",
    "standardize_fit_apply",
    "train",
]
