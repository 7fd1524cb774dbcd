"""Synthetic external shadows that follow the subject's geometry.

A silhouette texture is wrapped on a virtual vertical cylinder around the
subject.  Rays from each surface point towards the dominant light pick up the
silhouette occupancy where they leave the cylinder.  The projected mask is
blurred and faded according to the lighting Gini, then used to blend towards
a render with the dominant light removed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .envmap import EnvironmentMap, dominant_light_direction, zero_cone
from .errors import ClampWarning, ValidationError
from .renderer import ImageBuffer, RenderBundle, Scene, _surface, render_env

SILHOUETTE_KINDS = ("bars", "blob", "leaves")

CYLINDER_RADIUS_FACTOR = 2.0
REMOVAL_HALF_ANGLE = math.radians(20.0)
BLUR_FRACTION = 0.04
OPACITY_RANGE = (0.2, 0.95)
TINT_STRENGTH = 0.15
TINT_BAND = (0.15, 0.85)


@dataclass(eq=False)
class SilhouetteTexture:
    """Occupancy in [0, 1]; rows run top to bottom of the cylinder, columns around it.

    The cylinder spans heights ``[-half_height, half_height]`` and angles
    ``[0, 2 pi)`` measured from ``+x`` towards ``+z``.
    """

    occupancy: np.ndarray
    half_height: float = 2.0

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=np.float64)
        if occ.ndim != 2 or np.any(occ < 0) or np.any(occ > 1):
            raise ValidationError("occupancy must be a 2-D grid with values in [0, 1]")
        if not np.any(occ > 0.5):
            raise ValidationError("silhouette needs at least one texel above 0.5")
        self.occupancy = occ

    @property
    def coverage(self) -> float:
        return float(self.occupancy.mean())

    def lookup(self, angle, height):
        rows, cols = self.occupancy.shape
        u = np.mod(angle, 2 * np.pi) / (2 * np.pi) * cols
        v = (self.half_height - height) / (2 * self.half_height) * rows
        inside = (v >= 0) & (v < rows)
        r = np.clip(v.astype(int), 0, rows - 1)
        c = np.clip(u.astype(int), 0, cols - 1)
        return np.where(inside, self.occupancy[r, c], 0.0)


def _threshold_to_coverage(field_: np.ndarray, coverage: float, softness: float = 1.0) -> np.ndarray:
    thr = np.quantile(field_, 1.0 - coverage)
    scale = softness * field_.std() / 8.0 + 1e-12
    return 1.0 / (1.0 + np.exp(-(field_ - thr) / scale))


def sample_silhouette(kind: str, seed: int = 0, shape=(64, 256)) -> SilhouetteTexture:
    """Procedural occluder pattern with coverage in [0.2, 0.8].

    ``bars`` are vertical stripes with a 50 % duty cycle, ``blob`` a smooth
    random field thresholded at a random coverage, ``leaves`` a scatter of
    elliptical leaf shapes.
    """
    if kind not in SILHOUETTE_KINDS:
        raise ValidationError(f"kind must be one of {SILHOUETTE_KINDS}")
    rng = np.random.default_rng(seed)
    rows, cols = shape
    if kind == "bars":
        pairs = int(rng.integers(10, 24))
        phase = rng.uniform(0, 1)
        u = (np.arange(cols) + 0.5) / cols * pairs + phase
        stripe = (np.mod(u, 1.0) < 0.5).astype(np.float64)
        occ = np.repeat(stripe[None, :], rows, axis=0)
        occ = ndimage.uniform_filter1d(occ, size=3, axis=1, mode="wrap")
    elif kind == "blob":
        f = rng.standard_normal(shape)
        f = ndimage.gaussian_filter(f, sigma=(rows / 10, cols / 24), mode=("nearest", "wrap"))
        occ = _threshold_to_coverage(f, rng.uniform(0.3, 0.7))
    else:
        yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
        f = np.zeros(shape)
        for _ in range(int(rng.integers(25, 60))):
            cy, cx = rng.uniform(0, rows), rng.uniform(0, cols)
            a, b = rng.uniform(2, 6), rng.uniform(5, 14)
            ang = rng.uniform(0, np.pi)
            dx = np.mod(xx - cx + cols / 2, cols) - cols / 2
            dy = yy - cy
            lx = dx * math.cos(ang) + dy * math.sin(ang)
            ly = -dx * math.sin(ang) + dy * math.cos(ang)
            f = np.maximum(f, np.exp(-((lx / b) ** 2 + (ly / a) ** 2)))
        occ = _threshold_to_coverage(f + 1e-3 * rng.standard_normal(shape), rng.uniform(0.3, 0.7), 0.5)
    occ = np.clip(occ, 0.0, 1.0)
    return SilhouetteTexture(occ, half_height=2.0)


def cylinder_exit(points, light_dir, radius):
    """Exit parameter ``t`` of rays ``p + t w`` through the vertical cylinder ``x^2 + z^2 = r^2``.

    Returns NaN where the ray runs parallel to the axis.
    """
    w = np.asarray(light_dir, dtype=np.float64)
    a = w[0] ** 2 + w[2] ** 2
    if a < 1e-12:
        return np.full(points.shape[0], np.nan)
    b = 2.0 * (points[:, 0] * w[0] + points[:, 2] * w[2])
    c = points[:, 0] ** 2 + points[:, 2] ** 2 - radius ** 2
    disc = np.maximum(b * b - 4 * a * c, 0.0)
    return (-b + np.sqrt(disc)) / (2 * a)


def project_shadow_mask(scene: Scene, sil: SilhouetteTexture, light_dir, resolution=(64, 64)) -> np.ndarray:
    """Screen-space occlusion fraction cast by ``sil`` from direction ``light_dir``."""
    w = np.asarray(light_dir, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(w) - 1.0) > 1e-6:
        raise ValidationError("light_dir must be a unit vector")
    resolution = tuple(int(v) for v in resolution)
    surf = _surface(scene, resolution)
    radius = CYLINDER_RADIUS_FACTOR * scene.geometry.bounding_radius
    t = cylinder_exit(surf.points, w, radius)
    occ = np.zeros(surf.points.shape[0])
    ok = np.isfinite(t)
    q = surf.points[ok] + t[ok, None] * w
    occ[ok] = sil.lookup(np.arctan2(q[:, 2], q[:, 0]), q[:, 1])
    h, wd = resolution
    mask = np.zeros(h * wd)
    mask[surf.index] = occ
    return mask.reshape(h, wd)


def blur_sigma(g: float, width: int) -> float:
    return BLUR_FRACTION * width * (1.0 - g)


def shadow_opacity(g: float) -> float:
    lo, hi = OPACITY_RANGE
    return lo + (hi - lo) * g


def _clamp_gini(g: float) -> float:
    if not 0.0 <= g <= 1.0:
        warnings.warn(f"gini {g} outside [0, 1]; clamped", ClampWarning)
        g = min(max(g, 0.0), 1.0)
    return float(g)


def blurred_mask(mask, alpha, g: float) -> np.ndarray:
    """Mask blurred with ``sigma(G)`` and restricted to the subject."""
    g = _clamp_gini(g)
    mask = np.asarray(mask, dtype=np.float64)
    sigma = blur_sigma(g, mask.shape[1])
    blurred = ndimage.gaussian_filter(mask, sigma=sigma, mode="nearest") if sigma > 0 else mask.copy()
    return blurred * (np.asarray(alpha) > 0)


def remove_dominant_light(env: EnvironmentMap, half_angle: float = REMOVAL_HALF_ANGLE) -> EnvironmentMap:
    return zero_cone(env, dominant_light_direction(env), half_angle)


def apply_external_shadow(bundle: RenderBundle, scene: Scene, env: EnvironmentMap, mask, g: float,
                          return_mask: bool = False):
    """Darken ``bundle.image`` towards the render without the dominant light.

    ``bundle`` must be the render of ``scene`` under ``env``.  The blend
    weight is ``opacity(G) * blur(mask, sigma(G))``.  With ``return_mask``
    the blurred mask (before opacity) is returned as well, for
    :func:`subsurface_tint`.
    """
    g = _clamp_gini(g)
    img = bundle.image
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != img.rgb.shape[:2]:
        raise ValidationError("mask does not match the bundle resolution")
    soft = blurred_mask(mask, img.alpha, g)
    weight = shadow_opacity(g) * soft
    if not np.any(weight):
        out = ImageBuffer(img.rgb.copy(), img.alpha)
    else:
        removed = render_env(scene, remove_dominant_light(env), img.rgb.shape[:2]).image.rgb
        out = ImageBuffer(img.rgb * (1.0 - weight[..., None]) + removed * weight[..., None], img.alpha)
    return (out, soft) if return_mask else out


def subsurface_tint(img: ImageBuffer, mask, skin_mask, strength: float = TINT_STRENGTH) -> ImageBuffer:
    """Redden skin pixels on shadow edges, peaking where the (blurred) mask is 0.5."""
    mask = np.asarray(mask, dtype=np.float64)
    skin = np.asarray(skin_mask, dtype=bool)
    lo, hi = TINT_BAND
    half = 0.5 * (hi - lo)
    profile = np.clip(1.0 - np.abs(mask - 0.5) / half, 0.0, 1.0)
    band = (mask >= lo) & (mask <= hi) & skin
    rgb = img.rgb.copy()
    rgb[..., 0] = np.where(band, rgb[..., 0] * (1.0 + strength * profile), rgb[..., 0])
    return ImageBuffer(rgb, img.alpha)
