"""Training-time augmentations for stacked [h, w, 33] samples."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class MaskVariant(enum.Enum):
    BOTTOM_HALF = "bottom"
    LEFT_HALF = "left"
    RIGHT_HALF = "right"


ALL_MASKS = (MaskVariant.BOTTOM_HALF, MaskVariant.LEFT_HALF, MaskVariant.RIGHT_HALF)


@dataclass
class AugmentConfig:
    crop_fraction: float = 0.9
    flip_prob: float = 0.5
    cutout_prob: float = 0.5
    cutout_side_fraction: float = 0.25
    mask_prob: float = 0.5
    mask_variants: tuple[MaskVariant, ...] = field(default=ALL_MASKS)
    seed: int = 0

    def __post_init__(self):
        self.mask_variants = tuple(MaskVariant(v) if not isinstance(v, MaskVariant) else v
                                   for v in self.mask_variants)
        for name in ("flip_prob", "cutout_prob", "mask_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("crop_fraction", "cutout_side_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(crop_fraction=1.0, flip_prob=0.0, cutout_prob=0.0, mask_prob=0.0)


def hflip(x: np.ndarray) -> np.ndarray:
    return x[:, ::-1, :].copy()


def apply_mask(x: np.ndarray, variant: MaskVariant) -> np.ndarray:
    """Zero one half of the image across every channel."""
    h, w = x.shape[:2]
    out = x.copy()
    if variant is MaskVariant.BOTTOM_HALF:
        if h % 2:
            raise ValueError(f"bottom-half mask needs an even height, got {h}")
        out[h // 2:] = 0.0
    elif variant is MaskVariant.LEFT_HALF:
        if w % 2:
            raise ValueError(f"left-half mask needs an even width, got {w}")
        out[:, : w // 2] = 0.0
    else:
        if w % 2:
            raise ValueError(f"right-half mask needs an even width, got {w}")
        out[:, w // 2:] = 0.0
    return out


def random_crop(x: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Cut a random window of ``fraction`` of each side and zero-pad it back, centred."""
    h, w = x.shape[:2]
    ch, cw = max(1, round(h * fraction)), max(1, round(w * fraction))
    if (ch, cw) == (h, w):
        return x
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    out = np.zeros_like(x)
    oy, ox = (h - ch) // 2, (w - cw) // 2
    out[oy:oy + ch, ox:ox + cw] = x[top:top + ch, left:left + cw]
    return out


def cutout(x: np.ndarray, side_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Zero a square of side ``side_fraction * min(h, w)`` centred at a random pixel, clipped at borders."""
    h, w = x.shape[:2]
    side = max(1, round(min(h, w) * side_fraction))
    cy, cx = int(rng.integers(0, h)), int(rng.integers(0, w))
    y0, y1 = max(0, cy - side // 2), min(h, cy - side // 2 + side)
    x0, x1 = max(0, cx - side // 2), min(w, cx - side // 2 + side)
    out = x.copy()
    out[y0:y1, x0:x1] = 0.0
    return out


def apply_augment(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Crop, flip, cutout, then half-mask; all randomness comes from ``rng``."""
    h, w = x.shape[:2]
    if cfg.mask_prob > 0:
        for v in cfg.mask_variants:
            if (v is MaskVariant.BOTTOM_HALF and h % 2) or (v is not MaskVariant.BOTTOM_HALF and w % 2):
                raise ValueError(f"half masks need even dimensions, got {h}x{w}")
    u = rng.random(4)
    out = random_crop(x, cfg.crop_fraction, rng) if cfg.crop_fraction < 1.0 else x
    if u[0] < cfg.flip_prob:
        out = hflip(out)
    if u[1] < cfg.cutout_prob:
        out = cutout(out, cfg.cutout_side_fraction, rng)
    if u[2] < cfg.mask_prob and cfg.mask_variants:
        variant = cfg.mask_variants[int(u[3] * len(cfg.mask_variants))]
        out = apply_mask(out, variant)
    return out if out is not x else x.copy()
