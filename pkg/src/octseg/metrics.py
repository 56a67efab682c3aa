"""Segmentation quality metrics and dataset-level reporting.

Per class i with predicted mask DS_i and reference mask MS_i:

    dice        DC_i = 2 |DS_i & MS_i| / (|DS_i| + |MS_i|)
    specificity Sp_i = |~DS_i & ~MS_i| / |~MS_i|
    sensitivity Sn_i = |DS_i & MS_i| / |MS_i|

A metric whose denominator is empty is undefined and reported as None;
undefined values are excluded from aggregates rather than counted as zero.
Aggregation is per image first, then mean +/- sd within each group.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import jaccard_loss, one_hot
from .model import predict_classes

METRIC_NAMES = ("dice", "specificity", "sensitivity")


def _as_masks(pred_mask, truth_mask):
    pred = np.asarray(pred_mask, dtype=bool)
    truth = np.asarray(truth_mask, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(
            f"mask dimensions differ: {pred.shape} vs {truth.shape}")
    return pred, truth


def dice(pred_mask, truth_mask) -> float | None:
    pred, truth = _as_masks(pred_mask, truth_mask)
    denom = int(pred.sum()) + int(truth.sum())
    if denom == 0:
        return None
    return 2.0 * int(np.logical_and(pred, truth).sum()) / denom


def specificity(pred_mask, truth_mask) -> float | None:
    pred, truth = _as_masks(pred_mask, truth_mask)
    truth_neg = int((~truth).sum())
    if truth_neg == 0:
        return None
    return int(np.logical_and(~pred, ~truth).sum()) / truth_neg


def sensitivity(pred_mask, truth_mask) -> float | None:
    pred, truth = _as_masks(pred_mask, truth_mask)
    truth_pos = int(truth.sum())
    if truth_pos == 0:
        return None
    return int(np.logical_and(pred, truth).sum()) / truth_pos


@dataclass
class ImageMetrics:
    sample_id: str
    group: str
    loss: float
    # class index -> {"dice": value-or-None, ...}
    per_class: dict[int, dict[str, float | None]]


@dataclass
class MetricsReport:
    class_indices: tuple[int, ...]
    class_names: dict[int, str]
    images: list[ImageMetrics] = field(default_factory=list)

    def groups(self) -> list[str]:
        seen: dict[str, None] = {}
        for im in self.images:
            seen.setdefault(im.group, None)
        return list(seen)

    def values(self, metric: str, class_index: int,
               group: str | None = None) -> list[float]:
        """Defined per-image values for one metric/class, optionally filtered
        by group."""
        out = []
        for im in self.images:
            if group is not None and im.group != group:
                continue
            v = im.per_class[class_index][metric]
            if v is not None:
                out.append(v)
        return out

    def aggregate(self, metric: str, class_index: int,
                  group: str | None = None) -> tuple[float, float, int] | None:
        """(mean, sd, n) over per-image values, or None if no image defines
        the metric.  sd is the sample standard deviation (0 when n == 1)."""
        vals = self.values(metric, class_index, group)
        if not vals:
            return None
        arr = np.asarray(vals, dtype=np.float64)
        sd = float(arr.std(ddof=1)) if len(vals) > 1 else 0.0
        return float(arr.mean()), sd, len(vals)

    def coverage(self, class_index: int, group: str | None = None) -> int:
        """Number of images whose reference contains the class (dice defined)."""
        return len(self.values("dice", class_index, group))

    def mean_loss(self, group: str | None = None) -> float:
        losses = [im.loss for im in self.images
                  if group is None or im.group == group]
        return float(np.mean(losses)) if losses else float("nan")

    def mean_dice_over_classes(self, group: str | None = None) -> float:
        """Mean of all defined per-image per-class dice values."""
        vals = []
        for c in self.class_indices:
            vals.extend(self.values("dice", c, group))
        return float(np.mean(vals)) if vals else float("nan")

    def to_table(self) -> str:
        lines = []
        header = f"{'group':<16}{'class':<20}{'n':>4}" + "".join(
            f"{m:>22}" for m in ("dice", "specificity", "sensitivity"))
        scopes = [None] + self.groups()
        for group in scopes:
            label = group or "all"
            lines.append(f"== {label} (mean loss {self.mean_loss(group):.6f})")
            lines.append(header)
            for c in self.class_indices:
                cells = []
                n = self.coverage(c, group)
                for metric in METRIC_NAMES:
                    agg = self.aggregate(metric, c, group)
                    cells.append("undefined".rjust(22) if agg is None
                                 else f"{agg[0]:.4f} +/- {agg[1]:.4f}".rjust(22))
                lines.append(f"{label:<16}{self.class_names[c]:<20}{n:>4}"
                             + "".join(cells))
            lines.append("")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "class_indices": list(self.class_indices),
            "class_names": {str(k): v for k, v in self.class_names.items()},
            "images": [
                {
                    "sample_id": im.sample_id,
                    "group": im.group,
                    "loss": im.loss,
                    "per_class": {
                        str(c): dict(vals) for c, vals in im.per_class.items()
                    },
                }
                for im in self.images
            ],
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1))

    @classmethod
    def from_json(cls, path) -> "MetricsReport":
        raw = json.loads(Path(path).read_text())
        report = cls(
            class_indices=tuple(raw["class_indices"]),
            class_names={int(k): v for k, v in raw["class_names"].items()},
        )
        for im in raw["images"]:
            report.images.append(ImageMetrics(
                sample_id=im["sample_id"],
                group=im["group"],
                loss=im["loss"],
                per_class={int(c): dict(vals)
                           for c, vals in im["per_class"].items()},
            ))
        return report


def image_metrics(sample_id: str, group: str, pred_labels: np.ndarray,
                  truth_labels: np.ndarray, loss: float,
                  class_indices, class_names) -> ImageMetrics:
    per_class = {}
    for c in class_indices:
        pred_mask = pred_labels == c
        truth_mask = truth_labels == c
        per_class[c] = {
            "dice": dice(pred_mask, truth_mask),
            "specificity": specificity(pred_mask, truth_mask),
            "sensitivity": sensitivity(pred_mask, truth_mask),
        }
    return ImageMetrics(sample_id, group, loss, per_class)


def evaluate_dataset(model, samples, class_indices, class_names) -> MetricsReport:
    """Forward every sample in inference mode and collect per-image metrics."""
    samples = list(samples)
    if not samples:
        raise ValueError("evaluate_dataset needs a non-empty dataset")
    report = MetricsReport(tuple(class_indices), dict(class_names))
    n_classes = model.config.n_classes
    for s in samples:
        probs = model.forward(s.image[None, None], mode="infer")
        loss = jaccard_loss(probs, one_hot(s.labels, n_classes,
                                           dtype=probs.value.dtype)).item()
        pred = predict_classes(probs)[0]
        report.images.append(image_metrics(
            s.id, s.group, pred, s.labels, loss, class_indices, class_names))
    return report
