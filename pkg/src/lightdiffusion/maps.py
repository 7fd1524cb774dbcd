"""Specular (brightening) and shadow (darkening) maps relative to a fully diffuse render."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SaturatedShadowError, ValidationError
from .renderer import ImageBuffer

EPS = 1e-4


@dataclass(eq=False)
class SpecShadowPair:
    specular: np.ndarray
    shadow: np.ndarray

    def __post_init__(self):
        self.specular = np.asarray(self.specular, dtype=np.float64)
        self.shadow = np.asarray(self.shadow, dtype=np.float64)
        if self.specular.shape != self.shadow.shape:
            raise ValidationError("specular and shadow maps must share a shape")


def _lum(img) -> np.ndarray:
    if isinstance(img, ImageBuffer):
        return img.luminance()
    arr = np.asarray(img, dtype=np.float64)
    return arr @ np.array([0.2126, 0.7152, 0.0722]) if arr.ndim == 3 else arr


def compute_spec_shadow(image, diffuse, alpha=None, eps: float = EPS) -> SpecShadowPair:
    """Luminance-ratio maps ``S = clamp(1 - Y_d / Y)`` and ``D = clamp(1 - Y / Y_d)``.

    Both denominators get a guard of ``eps`` times the mean foreground
    luminance of ``diffuse``.  Tying the guard to the image level keeps the
    maps invariant when both images are rescaled by the same exposure.
    ``S`` is only non-zero where the image is brighter than the diffuse
    render and ``D`` only where it is darker, so ``min(S, D) == 0`` exactly.
    Both maps are zero where ``alpha == 0``.
    """
    y = _lum(image)
    yd = _lum(diffuse)
    if y.shape != yd.shape:
        raise ValidationError(f"image shapes differ: {y.shape} vs {yd.shape}")
    if alpha is None:
        alpha = image.alpha if isinstance(image, ImageBuffer) else np.ones_like(y)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != y.shape:
        raise ValidationError("alpha shape does not match image")
    fg = alpha > 0
    level = float(yd[fg].mean()) if fg.any() else 0.0
    eps = eps * (level if level > 0 else 1.0)
    # eps alone would let both maps go positive where y ~ yd; gate on the ratio side
    s = np.clip(1.0 - yd / (y + eps), 0.0, 1.0) * (fg & (y > yd))
    d = np.clip(1.0 - y / (yd + eps), 0.0, 1.0) * (fg & (y < yd))
    return SpecShadowPair(s, d)


def reconstruct_diffuse(image, pair: SpecShadowPair) -> np.ndarray:
    """Invert the maps to recover the diffuse luminance (ignoring ``eps``)."""
    y = _lum(image)
    if y.shape != pair.specular.shape:
        raise ValidationError("image and maps differ in shape")
    if np.any(pair.shadow >= 1.0):
        raise SaturatedShadowError("shadow map saturated at 1; diffuse luminance unrecoverable")
    out = y.copy()
    s = pair.specular > 0
    d = pair.shadow > 0
    out[s] = y[s] * (1.0 - pair.specular[s])
    out[d] = y[d] / (1.0 - pair.shadow[d])
    return out


def composite(fg, alpha, bg):
    """``alpha * fg + (1 - alpha) * bg`` in linear space.

    Accepts ImageBuffers (returning an ImageBuffer carrying ``bg``'s alpha)
    or plain arrays.
    """
    f = fg.rgb if isinstance(fg, ImageBuffer) else np.asarray(fg, dtype=np.float64)
    b = bg.rgb if isinstance(bg, ImageBuffer) else np.asarray(bg, dtype=np.float64)
    a = np.asarray(alpha, dtype=np.float64)
    if f.shape != b.shape or a.shape != f.shape[:2]:
        raise ValidationError(f"composite shapes differ: fg {f.shape}, bg {b.shape}, alpha {a.shape}")
    out = a[..., None] * f + (1.0 - a[..., None]) * b
    if isinstance(bg, ImageBuffer):
        return ImageBuffer(out, bg.alpha)
    return out
