"""Dilated-residual U-Net segmentation engine for layered retinal scans.

Everything runs on numpy tensors through a small reverse-mode autodiff
tape; see the README for the module map and the demos/ directory for
narrative walkthroughs of each capability.
"""

from .autodiff import Tape, Variable, backward, zero_grads
from .data import (CLASS_NAMES, PALETTE, QUANTIFIED_CLASSES, Sample,
                   load_sample, render_labels, split_dataset)
from .losses import jaccard_loss, one_hot
from .metrics import MetricsReport, dice, evaluate_dataset, sensitivity, specificity
from .model import DilatedResidualUNet, ModelConfig, predict_classes
from .phantom import PhantomConfig, generate_phantom
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Tape", "Variable", "backward", "zero_grads",
    "CLASS_NAMES", "PALETTE", "QUANTIFIED_CLASSES", "Sample",
    "load_sample", "render_labels", "split_dataset",
    "jaccard_loss", "one_hot",
    "MetricsReport", "dice", "evaluate_dataset", "sensitivity", "specificity",
    "DilatedResidualUNet", "ModelConfig", "predict_classes",
    "PhantomConfig", "generate_phantom",
    "TrainConfig", "train",
    "__version__",
]
