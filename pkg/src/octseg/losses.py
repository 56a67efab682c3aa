"""Training loss: one minus the mean per-class soft Jaccard index.

For predicted probabilities p and one-hot truth t, each class c contributes

    J_c = (sum(p_c * t_c) + eps) / (sum(p_c + t_c - p_c * t_c) + eps)

with sums over every pixel of every image in the batch, and the loss is
1 - mean_c J_c.  The epsilon keeps classes absent from both prediction and
truth at J_c = 1 instead of 0/0.  Built entirely from taped primitives, so
the gradient comes from the same machinery the rest of the network uses.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Variable

DEFAULT_EPS = 1e-6


def one_hot(labels: np.ndarray, n_classes: int = 8, dtype=np.float32) -> np.ndarray:
    """Expand an integer label map (H,W) or (N,H,W) to N,C,H,W one-hot planes."""
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    if labels.ndim != 3:
        raise ValueError(f"labels must be (H,W) or (N,H,W), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(
            f"labels outside 0..{n_classes - 1}: "
            f"min {labels.min()}, max {labels.max()}")
    planes = labels[:, None, :, :] == np.arange(n_classes)[None, :, None, None]
    return planes.astype(dtype)


def jaccard_loss(probs: Variable, truth: np.ndarray,
                 eps: float = DEFAULT_EPS) -> Variable:
    """Mean soft-Jaccard loss over all classes; differentiable end to end."""
    probs = ad.as_variable(probs)
    pv = probs.value
    truth = np.asarray(truth, dtype=pv.dtype)
    if pv.ndim != 4:
        raise ValueError(f"probabilities must be N,C,H,W, got shape {pv.shape}")
    if truth.shape != pv.shape:
        raise ValueError(
            f"shape mismatch: probs {pv.shape} vs truth {truth.shape}")
    if not np.isfinite(pv).all():
        raise ad.NonFiniteValue("non-finite probabilities in jaccard_loss")
    if not np.isfinite(truth).all():
        raise ad.NonFiniteValue("non-finite truth in jaccard_loss")

    n_classes = pv.shape[1]
    axes = (0, 2, 3)
    inter = ad.reduce_sum(ad.mul(probs, truth), axes)          # (C,)
    sum_p = ad.reduce_sum(probs, axes)                         # (C,)
    sum_t = truth.sum(axis=axes)                               # constant (C,)
    union = ad.sub(ad.add(sum_p, Variable(sum_t)), inter)
    per_class = ad.div(ad.add(inter, eps), ad.add(union, eps))
    return ad.sub(1.0, ad.mul(ad.reduce_sum(per_class), 1.0 / n_classes))
