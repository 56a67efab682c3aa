"""Samples, class palette, PNG round trips, dataset splitting, manifests.

Images are stored on disk as 8-bit grayscale PNG; label maps as 8-bit
grayscale PNG whose pixel values are the class indices 0..7.  Color
renders use an indexed-palette PNG so that parsing a render back recovers
the class indices exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

N_CLASSES = 8

CLASS_NAMES = {
    0: "vitreous",
    1: "rnfl_prelamina",
    2: "retina_other",
    3: "rpe",
    4: "choroid",
    5: "sclera",
    6: "lamina_cribrosa",
    7: "noise",
}

# display colors: vitreous black, RNFL+prelamina red, other retina cyan,
# RPE pink, choroid green, sclera yellow, lamina cribrosa blue, noise gray
PALETTE = {
    0: (0, 0, 0),
    1: (220, 30, 30),
    2: (0, 210, 210),
    3: (245, 130, 190),
    4: (40, 180, 60),
    5: (230, 220, 50),
    6: (50, 80, 230),
    7: (128, 128, 128),
}

# classes scored quantitatively; sclera and lamina cribrosa are assessed
# qualitatively only, noise and vitreous are exempt
QUANTIFIED_CLASSES = (1, 2, 3, 4)

GROUPS = ("healthy-like", "glaucoma-like")


class DataError(ValueError):
    """Malformed sample file or inconsistent image/label pair."""


@dataclass
class Sample:
    image: np.ndarray       # (H, W) float32 in [0, 1]
    labels: np.ndarray      # (H, W) uint8 in 0..7
    group: str
    id: str

    def validate(self) -> "Sample":
        if self.image.shape != self.labels.shape:
            raise DataError(
                f"{self.id}: image {self.image.shape} vs labels "
                f"{self.labels.shape}")
        h, w = self.image.shape
        if h % 8 or w % 8:
            raise DataError(
                f"{self.id}: dims {h}x{w} not divisible by 8")
        if self.labels.max(initial=0) >= N_CLASSES:
            raise DataError(
                f"{self.id}: label value {self.labels.max()} > {N_CLASSES - 1}")
        return self


def _read_gray8(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "P"):
                raise DataError(
                    f"{path}: expected an 8-bit grayscale/indexed image, "
                    f"got mode {img.mode!r}")
            return np.asarray(img if img.mode == "L" else img.convert("P"),
                              dtype=np.uint8)
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"{path}: not a readable image ({exc})") from exc


def load_image(path) -> np.ndarray:
    """Load a bare grayscale image as (H, W) float32 in [0, 1]; dims must be
    divisible by 8."""
    img = _read_gray8(path)
    h, w = img.shape
    if h % 8 or w % 8:
        raise DataError(f"{path}: dims {h}x{w} not divisible by 8; "
                        f"resize or crop before segmenting")
    return img.astype(np.float32) / 255.0


def load_sample(image_path, label_path, group: str = GROUPS[0],
                sample_id: str | None = None) -> Sample:
    """Load an image/label PNG pair, scaling intensities to [0, 1]."""
    img = _read_gray8(image_path)
    lab = _read_gray8(label_path)
    if img.shape != lab.shape:
        raise DataError(
            f"dimension mismatch: {image_path} is {img.shape}, "
            f"{label_path} is {lab.shape}")
    sid = sample_id if sample_id is not None else Path(image_path).stem
    sample = Sample(image=img.astype(np.float32) / 255.0, labels=lab,
                    group=group, id=sid)
    return sample.validate()


def save_sample(sample: Sample, image_path, label_path) -> None:
    arr = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(image_path)
    Image.fromarray(sample.labels.astype(np.uint8), mode="L").save(label_path)


def render_labels(labels: np.ndarray) -> Image.Image:
    """Indexed-color render of a label map using the class palette."""
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= N_CLASSES:
        raise DataError(f"labels outside 0..{N_CLASSES - 1}")
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    flat = [0] * (256 * 3)
    for idx, (r, g, b) in PALETTE.items():
        flat[3 * idx:3 * idx + 3] = (r, g, b)
    img.putpalette(flat)
    return img


def parse_render(path_or_image) -> np.ndarray:
    """Recover the class indices from an indexed-color render."""
    if isinstance(path_or_image, Image.Image):
        img = path_or_image
    else:
        img = Image.open(path_or_image)
    if img.mode != "P":
        raise DataError("render must be an indexed-palette image")
    return np.asarray(img, dtype=np.uint8)


def split_dataset(samples, n_train: int, n_val: int, n_test: int,
                  seed: int = 0):
    """Disjoint train/val/test split with a group-balanced training set.

    The training set takes n_train/2 samples from each group; validation
    and test sets are drawn from the shuffled remainder.
    """
    samples = list(samples)
    if n_train % 2:
        raise ValueError("n_train must be even to balance the two groups")
    if n_train + n_val + n_test > len(samples):
        raise ValueError(
            f"requested {n_train + n_val + n_test} samples, "
            f"only {len(samples)} available")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x5B17)))
    by_group = {g: [] for g in GROUPS}
    for s in samples:
        if s.group not in by_group:
            raise DataError(f"unknown group {s.group!r} for sample {s.id}")
        by_group[s.group].append(s)
    for g in GROUPS:
        if len(by_group[g]) < n_train // 2:
            raise ValueError(
                f"insufficient {g} samples: need {n_train // 2}, "
                f"have {len(by_group[g])}")
        order = rng.permutation(len(by_group[g]))
        by_group[g] = [by_group[g][i] for i in order]

    train = []
    for g in GROUPS:
        train.extend(by_group[g][:n_train // 2])
    rest = []
    for g in GROUPS:
        rest.extend(by_group[g][n_train // 2:])
    order = rng.permutation(len(rest))
    rest = [rest[i] for i in order]
    if n_val + n_test > len(rest):
        raise ValueError("not enough samples left for validation and test")
    return train, rest[:n_val], rest[n_val:n_val + n_test]


@dataclass
class ManifestEntry:
    id: str
    group: str
    image_path: str
    label_path: str
    seed: int


def write_manifest(path, entries) -> None:
    """One sample per line: id, group, image path, label path, seed."""
    lines = [f"{e.id}\t{e.group}\t{e.image_path}\t{e.label_path}\t{e.seed}"
             for e in entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    entries = []
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise DataError(f"{path}:{ln}: expected 5 tab-separated fields")
        sid, group, image_path, label_path, seed = parts
        if group not in GROUPS:
            raise DataError(f"{path}:{ln}: unknown group {group!r}")
        try:
            seed_val = int(seed)
        except ValueError as exc:
            raise DataError(f"{path}:{ln}: bad seed {seed!r}") from exc
        entries.append(ManifestEntry(sid, group, image_path, label_path,
                                     seed_val))
    if not entries:
        raise DataError(f"manifest is empty: {path}")
    return entries


def load_manifest_samples(path) -> list[Sample]:
    """Load every sample referenced by a manifest; relative paths resolve
    against the manifest's directory."""
    base = Path(path).parent
    out = []
    for e in read_manifest(path):
        img = Path(e.image_path)
        lab = Path(e.label_path)
        out.append(load_sample(img if img.is_absolute() else base / img,
                               lab if lab.is_absolute() else base / lab,
                               group=e.group, sample_id=e.id))
    return out
