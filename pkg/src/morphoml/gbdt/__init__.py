"""Gradient-boosted decision trees with a focal multiclass objective."""
from .loss import (
    balanced_class_weights,
    focal_grad_hess,
    focal_loss,
    focal_loss_mean,
    softmax,
)
from .model import GbdtModel, Tree, load_model, model_checksum, save_model
from .train import GbdtParams, cross_validate, quantile_bin_edges, stratified_case_folds, train

__all__ = [
    "GbdtModel",
    "GbdtParams",
    "Tree",
    "balanced_class_weights",
    "cross_validate",
    "focal_grad_hess",
    "focal_loss",
    "focal_loss_mean",
    "load_model",
    "model_checksum",
    "quantile_bin_edges",
    "save_model",
    "softmax",
    "stratified_case_folds",
    "train",
]
