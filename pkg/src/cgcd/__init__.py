"""Desk-scale laboratory for continual generalized category discovery."""

from . import autodiff, clustering, config, data, losses, model, protocol, trainer
from .autodiff import Tensor, backward, finite_diff_grad, make_rng
from .clustering import clustering_acc, hungarian, kmeans, split_acc
from .losses import LossConfig, ViewBatch, candidate_neighbors, labeled_loss, positiveness, scl_loss, soft_loss, ucl_loss
from .model import ModelParams, embed, features, init, sgd_step
from .trainer import RunReport, TrainConfig, meta_test, meta_train, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "finite_diff_grad",
    "make_rng",
    "clustering_acc",
    "hungarian",
    "kmeans",
    "split_acc",
    "LossConfig",
    "ViewBatch",
    "candidate_neighbors",
    "labeled_loss",
    "positiveness",
    "scl_loss",
    "soft_loss",
    "ucl_loss",
    "ModelParams",
    "embed",
    "features",
    "init",
    "sgd_step",
    "RunReport",
    "TrainConfig",
    "meta_test",
    "meta_train",
    "run_pipeline",
    "autodiff",
    "clustering",
    "config",
    "data",
    "losses",
    "model",
    "protocol",
    "trainer",
]
