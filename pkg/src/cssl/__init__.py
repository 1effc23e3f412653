"""Desk-scale continual self-supervised representation learning.

A numpy-backed library implementing view-invariance objectives (cross-
correlation, contrastive, predictor/stop-gradient), exemplar-free continual
regularizers (feature distillation, its projected variant, Fisher-weighted
parameter anchoring), the class-incremental training loop, and the
evaluation kit (linear probes, accuracy matrices, representation similarity,
forgetting/intransigence).
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, grad_check
from .data import (AugmentationPolicy, Dataset, TaskStream, gen_synthetic,
                   identity_policy, load_cifar_binary, make_views, minibatches,
                   split_tasks)
from .losses import (barlow_loss, barlow_twins_loss, cosine_sim,
                     cross_correlation, estimate_fisher, ewc_penalty, fd_loss,
                     ntxent_loss, pfr_loss, simsiam_loss)
from .models import (ModelArch, ModelBundle, Snapshot, build_model,
                     forward_encoder, forward_projector, forward_snapshot,
                     forward_temporal, load_checkpoint, save_checkpoint,
                     take_snapshot)

__all__ = [
    "Tensor", "backward", "grad_check",
    "AugmentationPolicy", "Dataset", "TaskStream", "gen_synthetic",
    "identity_policy", "load_cifar_binary", "make_views", "minibatches",
    "split_tasks",
    "barlow_loss", "barlow_twins_loss", "cosine_sim", "cross_correlation",
    "estimate_fisher", "ewc_penalty", "fd_loss", "ntxent_loss", "pfr_loss",
    "simsiam_loss",
    "ModelArch", "ModelBundle", "Snapshot", "build_model", "forward_encoder",
    "forward_projector", "forward_snapshot", "forward_temporal",
    "load_checkpoint", "save_checkpoint", "take_snapshot",
]
