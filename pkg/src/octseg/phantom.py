"""Synthetic layered phantoms standing in for clinical scans.

Each phantom stacks smoothly undulating tissue bands from top to bottom
(vitreous, RNFL+prelamina, other retina, RPE, choroid, sclera) over a noisy
bottom band, indents the inner layers with a central cup, and embeds a
lamina-cribrosa disc in the connective tissue below the cup.  Labels and
intensities are produced from the same geometry, so the ground truth is
exact by construction.  The glaucoma-like group draws a thinner nerve-fiber
layer and a deeper cup than the healthy-like group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import GROUPS, N_CLASSES, Sample


class PhantomError(ValueError):
    """Configured geometry cannot fit in the requested image."""


@dataclass(frozen=True)
class PhantomConfig:
    height: int = 248
    width: int = 384
    ilm_frac: float = 0.22             # mean depth of the inner surface
    boundary_wave_amp: float = 6.0     # px, interface undulation
    thickness_wave_amp: float = 2.0    # px, per-layer thickness undulation
    rnfl_healthy: tuple[float, float] = (18.0, 30.0)
    rnfl_glaucoma: tuple[float, float] = (7.0, 14.0)
    retina: tuple[float, float] = (26.0, 40.0)
    rpe: tuple[float, float] = (4.0, 7.0)
    choroid: tuple[float, float] = (28.0, 48.0)
    cup_depth_healthy: tuple[float, float] = (8.0, 20.0)
    cup_depth_glaucoma: tuple[float, float] = (26.0, 48.0)
    cup_sigma: tuple[float, float] = (26.0, 52.0)
    noise_band: tuple[float, float] = (14.0, 26.0)
    lc_semi_x: tuple[float, float] = (30.0, 55.0)
    lc_semi_y: tuple[float, float] = (9.0, 16.0)
    lc_drop: tuple[float, float] = (6.0, 14.0)
    vessel_count: tuple[int, int] = (2, 5)
    vessel_width: tuple[float, float] = (4.0, 10.0)
    vessel_atten: tuple[float, float] = (0.35, 0.7)
    min_band: float = 2.0              # per-column floor for squeezed layers
    min_sclera: float = 4.0
    base_intensity: tuple[float, ...] = (
        0.04, 0.72, 0.40, 0.92, 0.55, 0.68, 0.82, 0.10)
    speckle_sigma: tuple[float, ...] = (
        0.10, 0.14, 0.16, 0.08, 0.20, 0.14, 0.16, 0.30)
    extra_noise: tuple[float, ...] = (
        0.015, 0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.06)
    blur_sigma: float = 0.6
    white_noise: float = 0.012

    def __post_init__(self):
        if self.height % 8 or self.width % 8:
            raise PhantomError(
                f"phantom dims must be divisible by 8, got "
                f"{self.height}x{self.width}")
        self.validate_budget()

    def validate_budget(self) -> None:
        """Reject configurations whose worst-case stack cannot fit."""
        base = self.ilm_frac * self.height + self.boundary_wave_amp
        slack = 4 * self.thickness_wave_amp + 2.0 * self.height / 248.0
        rnfl_max = max(self.rnfl_healthy[1], self.rnfl_glaucoma[1])
        cup_max = max(self.cup_depth_healthy[1], self.cup_depth_glaucoma[1])
        # regime A: cup shallow enough that no layer hits its floor
        deepest_a = (base + rnfl_max + self.retina[1] + self.rpe[1]
                     + self.choroid[1] + 0.35 * cup_max + slack)
        # regime B: inner layers fully squeezed to their floors
        deepest_b = (base + cup_max + 2 * self.min_band + self.rpe[1]
                     + self.choroid[1] + slack)
        deepest = max(deepest_a, deepest_b) + self.min_sclera
        room = self.height - self.noise_band[1]
        if deepest > room:
            raise PhantomError(
                f"layer stack needs {deepest:.0f} rows but only {room:.0f} "
                f"are available above the noise band; shrink the thickness "
                f"ranges or enlarge the image")

    @classmethod
    def for_size(cls, height: int, width: int) -> "PhantomConfig":
        """Scale the default pixel ranges from 248x384 to another size.

        The fixed floors dominate at small sizes, so the soft-tissue ranges
        shrink stepwise until the worst-case stack fits."""
        if height % 8 or width % 8:
            raise PhantomError(
                f"phantom dims must be divisible by 8, got {height}x{width}")
        sy = height / 248.0
        sx = width / 384.0

        def vr(lo_hi, s, floor):
            lo, hi = lo_hi
            return (max(lo * s, floor), max(hi * s, floor + 1.0))

        for squeeze in (1.0, 0.97, 0.94, 0.91, 0.88, 0.84, 0.80):
            t = sy * squeeze
            try:
                return cls(
                    height=height, width=width,
                    boundary_wave_amp=max(6.0 * sy, 1.0),
                    thickness_wave_amp=max(2.0 * sy, 0.5),
                    rnfl_healthy=vr((18, 30), t, 4.0),
                    rnfl_glaucoma=vr((7, 14), t, 2.0),
                    retina=vr((26, 40), t, 5.0),
                    rpe=vr((4, 7), t, 2.0),
                    choroid=vr((28, 48), t, 6.0),
                    cup_depth_healthy=vr((8, 20), t, 2.0),
                    cup_depth_glaucoma=vr((26, 48), t, 5.0),
                    cup_sigma=vr((26, 52), sx, 6.0),
                    noise_band=vr((14, 26), sy, 4.0),
                    lc_semi_x=vr((30, 55), sx, 6.0),
                    lc_semi_y=vr((9, 16), sy, 3.0),
                    lc_drop=vr((6, 14), sy, 2.0),
                    vessel_width=vr((4, 10), sx, 2.0),
                    min_band=max(2.0 * sy, 1.2),
                    min_sclera=max(4.0 * sy, 1.5),
                )
            except PhantomError:
                continue
        raise PhantomError(
            f"no scaled layer stack fits a {height}x{width} image; "
            f"use at least 64 rows")


def _wavy(rng: np.random.Generator, width: int, amp: float,
          n_waves: int = 3) -> np.ndarray:
    """Sum of low-frequency sinusoids across the image width."""
    x = np.linspace(0.0, 1.0, width)
    out = np.zeros(width)
    for k in range(1, n_waves + 1):
        freq = k * rng.uniform(0.5, 1.2)
        amp_k = amp * rng.uniform(0.4, 1.0) / k
        phase = rng.uniform(0.0, 2.0 * np.pi)
        out += amp_k * np.sin(2.0 * np.pi * freq * x + phase)
    return out


def generate_phantom(config: PhantomConfig, seed: int,
                     group: str = GROUPS[0]) -> Sample:
    """Deterministically generate one phantom for the given seed and group."""
    if group not in GROUPS:
        raise ValueError(f"group must be one of {GROUPS}, got {group!r}")
    glaucoma = group == GROUPS[1]
    cfg = config
    h, w = cfg.height, cfg.width
    rng = np.random.default_rng(np.random.SeedSequence((int(seed),
                                                        int(glaucoma))))

    ilm_base = cfg.ilm_frac * h + _wavy(rng, w, cfg.boundary_wave_amp)
    cup_depth = rng.uniform(*(cfg.cup_depth_glaucoma if glaucoma
                              else cfg.cup_depth_healthy))
    cup_sigma = rng.uniform(*cfg.cup_sigma)
    cup_center = w * (0.5 + rng.uniform(-0.07, 0.07))
    xs = np.arange(w)
    cup = cup_depth * np.exp(-0.5 * ((xs - cup_center) / cup_sigma) ** 2)

    def band(lo_hi):
        return rng.uniform(*lo_hi) + _wavy(rng, w, cfg.thickness_wave_amp)

    t_rnfl = band(cfg.rnfl_glaucoma if glaucoma else cfg.rnfl_healthy)
    t_retina = band(cfg.retina)
    t_rpe = np.maximum(band(cfg.rpe), cfg.min_band)
    t_choroid = np.maximum(band(cfg.choroid), cfg.min_band)
    noise_top = h - np.maximum(band(cfg.noise_band), 4.0)

    # the cup squeezes the inner two layers, never below the floor
    th1 = np.maximum(t_rnfl - 0.25 * cup, cfg.min_band)
    th2 = np.maximum(t_retina - 0.50 * cup, cfg.min_band)

    ilm = ilm_base + cup
    b1 = ilm + th1
    b2 = b1 + th2
    b3 = b2 + t_rpe
    b4 = b3 + t_choroid
    b5 = noise_top
    b4 = np.minimum(b4, b5 - cfg.min_sclera)
    if np.any(b4 <= b3 + 1.0):
        raise PhantomError("choroid collapsed; thickness ranges exceed the "
                           "image height for this draw")

    ys = np.arange(h)[:, None]
    level = ((ys >= ilm[None, :]).astype(np.uint8)
             + (ys >= b1[None, :])
             + (ys >= b2[None, :])
             + (ys >= b3[None, :])
             + (ys >= b4[None, :])
             + (ys >= b5[None, :]))
    labels = np.array([0, 1, 2, 3, 4, 5, 7], dtype=np.uint8)[level]

    # lamina cribrosa disc in the connective tissue under the cup
    lc_rx = rng.uniform(*cfg.lc_semi_x)
    lc_ry = rng.uniform(*cfg.lc_semi_y)
    lc_drop = rng.uniform(*cfg.lc_drop)
    cx = int(round(cup_center))
    cx = min(max(cx, 0), w - 1)
    cy = float(b3[cx] + lc_drop)
    cy = min(cy, float(b5.min() - lc_ry - 3.0))
    ellipse = (((xs[None, :] - cup_center) / lc_rx) ** 2
               + ((ys - cy) / lc_ry) ** 2) <= 1.0
    lc_mask = ellipse & np.isin(labels, (4, 5))
    if lc_mask.sum() < 8:
        # clamped placement missed the connective band; drop the disc into
        # the middle of the choroid instead
        cy = float(0.5 * (b3[cx] + b4[cx]))
        ellipse = (((xs[None, :] - cup_center) / lc_rx) ** 2
                   + ((ys - cy) / lc_ry) ** 2) <= 1.0
        lc_mask = ellipse & np.isin(labels, (4, 5))
    labels[lc_mask] = 6

    base_lut = np.asarray(cfg.base_intensity, dtype=np.float32)
    mult_lut = np.asarray(cfg.speckle_sigma, dtype=np.float32)
    add_lut = np.asarray(cfg.extra_noise, dtype=np.float32)
    image = base_lut[labels]
    image = image * (1.0 + mult_lut[labels]
                     * rng.standard_normal((h, w)).astype(np.float32))
    image += add_lut[labels] * rng.standard_normal((h, w)).astype(np.float32)

    # slow vascular texture inside the choroid
    vasc = gaussian_filter(rng.standard_normal((h, w)).astype(np.float32), 4.0)
    image = np.where((labels == 4) & (vasc > 0.25), image * 0.78, image)
    # pore texture inside the lamina
    pores = gaussian_filter(rng.standard_normal((h, w)).astype(np.float32), 1.5)
    image = np.where((labels == 6) & (pores > 0.2), image * 0.82, image)

    # dark vessel shadows dropping from the inner surface
    n_vessels = int(rng.integers(cfg.vessel_count[0], cfg.vessel_count[1] + 1))
    for _ in range(n_vessels):
        vx = rng.uniform(0.06 * w, 0.94 * w)
        half = rng.uniform(*cfg.vessel_width) / 2.0
        atten = rng.uniform(*cfg.vessel_atten)
        col_mask = np.abs(xs - vx) <= half
        shadow = col_mask[None, :] & (ys >= (ilm[None, :] - 2.0))
        image = np.where(shadow, image * atten, image)

    image = gaussian_filter(image, cfg.blur_sigma)
    image += cfg.white_noise * rng.standard_normal((h, w)).astype(np.float32)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    prefix = "g" if glaucoma else "h"
    return Sample(image=image, labels=labels, group=group,
                  id=f"{prefix}{int(seed):06d}").validate()


def layer_thickness(sample: Sample, class_index: int) -> float:
    """Mean per-column pixel thickness of one class (generator audits)."""
    return float((sample.labels == class_index).sum(axis=0).mean())
