"""Spatially attentive output layer: library and CLI.

A from-scratch numpy autodiff core, a small residual backbone, an output
layer that aggregates per-location class scores with a learned spatial
attention map, CutMix self-supervision, self-distillation into a plain
GAP-FC head, and weakly supervised localization evaluation.
"""

from saol.autodiff import (
    Tensor,
    bilinear_resize,
    concat,
    conv2d,
    global_avg_pool,
    matmul,
    no_grad,
)
from saol.backbone import Backbone, BackboneConfig
from saol.checkpoint import CheckpointError, load_model, load_state, save_state
from saol.cutmix import CutMixBatch, downsample_mask, sample_cutmix
from saol.data import DataError, load_cifar10, make_shapes, one_hot
from saol.head import HeadConfig, SaolClassifier, SaolOutput, attended_aggregate
from saol.losses import LossConfig, total_loss
from saol.train import SGD, TrainConfig, cosine_lr, evaluate, train
from saol.wsol import extract_box, iou, loc_accuracy, min_max_normalize

__version__ = "0.1.0"

__all__ = [
    "Backbone",
    "BackboneConfig",
    "CheckpointError",
    "CutMixBatch",
    "DataError",
    "HeadConfig",
    "LossConfig",
    "SGD",
    "SaolClassifier",
    "SaolOutput",
    "Tensor",
    "TrainConfig",
    "attended_aggregate",
    "bilinear_resize",
    "concat",
    "conv2d",
    "cosine_lr",
    "downsample_mask",
    "evaluate",
    "extract_box",
    "global_avg_pool",
    "iou",
    "load_cifar10",
    "load_model",
    "load_state",
    "loc_accuracy",
    "make_shapes",
    "matmul",
    "min_max_normalize",
    "no_grad",
    "one_hot",
    "sample_cutmix",
    "save_state",
    "total_loss",
    "train",
    "__version__",
]
