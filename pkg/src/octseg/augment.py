"""Online augmentation applied jointly to image and label map.

Transforms run in a fixed order (hflip, rotate, elastic, intensity shift,
noise, occlude).  Geometric transforms warp the image bilinearly and the
labels nearest-neighbor with the same spatial map, so tissue and label move
together.  All randomness is drawn up front into an :class:`AugmentParams`
from a counter-based Philox stream keyed by (global seed, sample id,
epoch); applying the same params twice is bitwise identical.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .data import Sample


@dataclass(frozen=True)
class AugmentConfig:
    rotation_max_deg: float = 8.0
    hflip_prob: float = 0.5
    noise_sigma: float = 0.03           # additive, fraction of the [0,1] range
    speckle_sigma: float = 0.05         # multiplicative
    elastic_alpha: float = 15.0         # px, max displacement per axis
    elastic_sigma: float = 10.0         # px, smoothness of the field
    gamma_range: tuple[float, float] = (0.5, 2.0)
    occlusion_count: int = 20
    occlusion_size: tuple[int, int] = (60, 20)   # width x height, px
    occlusion_factor_range: tuple[float, float] = (0.2, 0.8)
    enable_hflip: bool = True
    enable_rotate: bool = True
    enable_elastic: bool = True
    enable_intensity: bool = True
    enable_noise: bool = True
    enable_occlude: bool = True

    def __post_init__(self):
        if self.rotation_max_deg < 0 or self.noise_sigma < 0 \
                or self.speckle_sigma < 0 or self.elastic_alpha < 0 \
                or self.elastic_sigma <= 0 or self.occlusion_count < 0:
            raise ValueError("augmentation magnitudes must be non-negative")
        lo, hi = self.occlusion_factor_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError("occlusion factors must lie in (0, 1]")
        if not (0.0 <= self.hflip_prob <= 1.0):
            raise ValueError("hflip_prob must be a probability")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(enable_hflip=False, enable_rotate=False,
                   enable_elastic=False, enable_intensity=False,
                   enable_noise=False, enable_occlude=False)


def rng_for(global_seed: int, sample_id: str, epoch: int) -> np.random.Generator:
    """Counter-based stream keyed by (global_seed, sample_id, epoch)."""
    digest = hashlib.sha256(
        f"{int(global_seed)}/{sample_id}/{int(epoch)}".encode()).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class AugmentParams:
    """Concrete draw of every enabled transform for one sample."""
    do_hflip: bool = False
    angle_deg: float = 0.0
    elastic_dy: np.ndarray | None = None
    elastic_dx: np.ndarray | None = None
    gamma: float = 1.0
    knots_y: np.ndarray | None = None
    speckle: np.ndarray | None = None
    white: np.ndarray | None = None
    patches: list[tuple[int, int, float]] = field(default_factory=list)


def draw_params(config: AugmentConfig, rng: np.random.Generator,
                shape: tuple[int, int]) -> AugmentParams:
    """Draw all transform parameters (and noise fields) in a fixed order."""
    h, w = shape
    p = AugmentParams()
    if config.enable_hflip:
        p.do_hflip = bool(rng.random() < config.hflip_prob)
    if config.enable_rotate:
        p.angle_deg = float(rng.uniform(-config.rotation_max_deg,
                                        config.rotation_max_deg))
    if config.enable_elastic:
        p.elastic_dy, p.elastic_dx = build_elastic_field(
            (h, w), config.elastic_alpha, config.elastic_sigma, rng)
    if config.enable_intensity:
        p.gamma = float(rng.uniform(*config.gamma_range))
        increments = rng.uniform(0.25, 1.75, size=3)
        p.knots_y = np.concatenate([[0.0], np.cumsum(increments)])
        p.knots_y /= p.knots_y[-1]
    if config.enable_noise:
        p.speckle = rng.normal(0.0, config.speckle_sigma, size=(h, w))
        p.white = rng.normal(0.0, config.noise_sigma, size=(h, w))
    if config.enable_occlude:
        pw, ph = config.occlusion_size
        lo, hi = config.occlusion_factor_range
        for _ in range(config.occlusion_count):
            y0 = int(rng.integers(0, max(h - ph, 0) + 1))
            x0 = int(rng.integers(0, max(w - pw, 0) + 1))
            p.patches.append((x0, y0, float(rng.uniform(lo, hi))))
    return p


def hflip(sample: Sample) -> Sample:
    """Mirror image and labels about the vertical axis."""
    return replace(sample,
                   image=sample.image[:, ::-1].copy(),
                   labels=sample.labels[:, ::-1].copy())


def rotate(sample: Sample, angle_deg: float) -> Sample:
    """Rotate about the image center; bilinear for the image, nearest for
    the labels, zero fill outside the frame."""
    if angle_deg == 0.0:
        return replace(sample, image=sample.image.copy(),
                       labels=sample.labels.copy())
    h, w = sample.image.shape
    theta = np.deg2rad(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    src_y = cy + (yy - cy) * cos_t - (xx - cx) * sin_t
    src_x = cx + (yy - cy) * sin_t + (xx - cx) * cos_t
    return _warp(sample, src_y, src_x)


def _warp(sample: Sample, src_y: np.ndarray, src_x: np.ndarray) -> Sample:
    coords = np.stack([src_y, src_x])
    image = map_coordinates(sample.image, coords, order=1,
                            mode="constant", cval=0.0)
    labels = map_coordinates(sample.labels, coords, order=0,
                             mode="constant", cval=0)
    return replace(sample, image=image.astype(np.float32),
                   labels=labels.astype(np.uint8))


def build_elastic_field(shape: tuple[int, int], alpha: float, sigma: float,
                        rng: np.random.Generator):
    """Smoothed unit-uniform displacement field scaled by alpha.

    Gaussian smoothing is a convex combination of values in [-1, 1], so
    each displacement component is bounded by alpha in magnitude.
    """
    dy = gaussian_filter(rng.uniform(-1.0, 1.0, size=shape), sigma,
                         mode="reflect") * alpha
    dx = gaussian_filter(rng.uniform(-1.0, 1.0, size=shape), sigma,
                         mode="reflect") * alpha
    return dy, dx


def elastic_deform(sample: Sample, dy: np.ndarray, dx: np.ndarray) -> Sample:
    """Warp image and labels with one shared displacement field."""
    if not np.any(dy) and not np.any(dx):
        return replace(sample, image=sample.image.copy(),
                       labels=sample.labels.copy())
    h, w = sample.image.shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return _warp(sample, yy + dy, xx + dx)


def intensity_shift(image: np.ndarray, gamma: float,
                    knots_y: np.ndarray | None) -> np.ndarray:
    """Monotone nondecreasing remap of [0,1]: gamma curve followed by a
    4-knot piecewise-linear map with phi(0)=0 and phi(1)=1."""
    out = np.power(image, gamma, dtype=np.float32)
    if knots_y is not None:
        knots_x = np.linspace(0.0, 1.0, len(knots_y))
        out = np.interp(out, knots_x, knots_y).astype(np.float32)
    return out


def add_noise(image: np.ndarray, speckle: np.ndarray,
              white: np.ndarray) -> np.ndarray:
    """I' = clamp(I * (1 + speckle) + white, 0, 1)."""
    out = image * (1.0 + speckle) + white
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def occlude(sample: Sample, patches, size: tuple[int, int]) -> Sample:
    """Darken rectangular patches by their factor; labels untouched.

    Factors assign into a multiplier mask (overlaps take the later patch),
    so every occluded pixel keeps a ratio inside the configured range.
    """
    pw, ph = size
    h, w = sample.image.shape
    mult = np.ones((h, w), dtype=np.float32)
    for x0, y0, factor in patches:
        mult[y0:min(y0 + ph, h), x0:min(x0 + pw, w)] = factor
    return replace(sample, image=(sample.image * mult).astype(np.float32),
                   labels=sample.labels.copy())


def apply_params(sample: Sample, config: AugmentConfig,
                 params: AugmentParams) -> Sample:
    out = sample
    if config.enable_hflip and params.do_hflip:
        out = hflip(out)
    if config.enable_rotate:
        out = rotate(out, params.angle_deg)
    if config.enable_elastic:
        out = elastic_deform(out, params.elastic_dy, params.elastic_dx)
    if config.enable_intensity:
        out = replace(out,
                      image=intensity_shift(out.image, params.gamma,
                                            params.knots_y))
    if config.enable_noise:
        out = replace(out, image=add_noise(out.image, params.speckle,
                                           params.white))
    if config.enable_occlude:
        out = occlude(out, params.patches, config.occlusion_size)
    return out


def augment_sample(sample: Sample, config: AugmentConfig,
                   rng_key: tuple[int, str, int]) -> Sample:
    """Apply the enabled transforms, deterministic in rng_key."""
    rng = rng_for(*rng_key)
    params = draw_params(config, rng, sample.image.shape)
    return apply_params(sample, config, params)
