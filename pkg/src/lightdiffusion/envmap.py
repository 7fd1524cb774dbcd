"""Equirectangular HDR environment maps.

Texel ``(r, c)`` of a ``height x width`` map sits at colatitude
``theta = pi * (r + 0.5) / height`` and longitude
``phi = 2 * pi * (c + 0.5) / width``.  Row 0 is the north pole.  Directions
use a y-up frame with the camera looking down ``-z``::

    omega = (sin(theta) cos(phi), cos(theta), sin(theta) sin(phi))

so ``phi = pi / 2`` on the equator points at the viewer (``+z``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    ClampWarning,
    DegenerateLightingError,
    LightDiffusionError,
    UndefinedGiniError,
    ValidationError,
)

REC709 = np.array([0.2126, 0.7152, 0.0722])

# Convolution resolution used when none is requested explicitly.
DEFAULT_WORK_HEIGHT = 32


@dataclass(frozen=True, eq=False)
class EnvironmentMap:
    """Linear-RGB radiance on an equirectangular grid, shape (height, width, 3)."""

    radiance: np.ndarray

    def __post_init__(self):
        rad = np.array(self.radiance, dtype=np.float64)
        if rad.ndim != 3 or rad.shape[2] != 3:
            raise ValidationError(f"radiance must have shape (H, W, 3), got {rad.shape}")
        if rad.shape[0] < 2 or rad.shape[1] < 4:
            raise ValidationError(f"map must be at least 2x4 texels, got {rad.shape[:2]}")
        if not np.all(np.isfinite(rad)) or np.any(rad < 0):
            raise ValidationError("radiance must be finite and non-negative")
        rad.setflags(write=False)
        object.__setattr__(self, "radiance", rad)

    @property
    def height(self) -> int:
        return self.radiance.shape[0]

    @property
    def width(self) -> int:
        return self.radiance.shape[1]

    @property
    def size(self) -> int:
        return self.height * self.width

    @classmethod
    def constant(cls, color, height: int = 16, width: int | None = None) -> "EnvironmentMap":
        width = 2 * height if width is None else width
        rad = np.broadcast_to(np.asarray(color, dtype=np.float64), (height, width, 3))
        return cls(rad)

    def thetas(self) -> np.ndarray:
        return texel_thetas(self.height)

    def directions(self) -> np.ndarray:
        return texel_directions(self.height, self.width)

    def solid_angles(self) -> np.ndarray:
        """Per-texel ``sin(theta) dtheta dphi``, shape (height, width)."""
        return texel_solid_angles(self.height, self.width)

    def __add__(self, other: "EnvironmentMap") -> "EnvironmentMap":
        if self.radiance.shape != other.radiance.shape:
            raise ValidationError("maps must share a grid to be added")
        return EnvironmentMap(self.radiance + other.radiance)

    def scaled(self, factor: float) -> "EnvironmentMap":
        return EnvironmentMap(self.radiance * float(factor))


def texel_thetas(height: int) -> np.ndarray:
    return np.pi * (np.arange(height) + 0.5) / height


def texel_phis(width: int) -> np.ndarray:
    return 2.0 * np.pi * (np.arange(width) + 0.5) / width


def spherical_to_direction(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), np.cos(theta) * np.ones_like(phi), st * np.sin(phi)], axis=-1)


def direction_to_spherical(d) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(d, dtype=np.float64)
    theta = np.arccos(np.clip(d[..., 1], -1.0, 1.0))
    phi = np.mod(np.arctan2(d[..., 2], d[..., 0]), 2.0 * np.pi)
    return theta, phi


def texel_directions(height: int, width: int) -> np.ndarray:
    th, ph = np.meshgrid(texel_thetas(height), texel_phis(width), indexing="ij")
    return spherical_to_direction(th, ph)


def texel_solid_angles(height: int, width: int) -> np.ndarray:
    dtheta = np.pi / height
    dphi = 2.0 * np.pi / width
    return np.repeat((np.sin(texel_thetas(height)) * dtheta * dphi)[:, None], width, axis=1)


def luminance(rgb):
    """Rec. 709 luminance of a linear-RGB triple or an array of triples."""
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.shape[-1:] != (3,):
        raise ValidationError(f"expected trailing RGB axis, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValidationError("luminance requires finite, non-negative RGB")
    y = arr @ REC709
    return float(y) if y.ndim == 0 else y


def gini_coefficient(values) -> float:
    """Gini coefficient of non-negative samples via the sorted O(k log k) form."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0 or np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValidationError("gini needs a non-empty set of finite non-negative values")
    total = x.sum()
    if total <= 0:
        raise UndefinedGiniError("gini is undefined when all samples are zero")
    k = x.size
    p = np.sort(x / total, kind="stable")
    coeff = 2.0 * np.arange(1, k + 1) - k - 1
    g = float(np.dot(coeff, p) / k)
    return min(max(g, 0.0), 1.0)


def sample_weights(env: EnvironmentMap) -> np.ndarray:
    """Pole-compensated luminance ``lum(E_i) sin(theta_i)`` per texel."""
    return luminance(env.radiance) * np.sin(env.thetas())[:, None]


def gini(env: EnvironmentMap) -> float:
    """Diffuseness of ``env``: Gini coefficient of sin-weighted texel luminance.

    Note that even a constant map scores above zero because of the
    ``sin(theta)`` profile.
    """
    return gini_coefficient(sample_weights(env))


def mean_radiance(env: EnvironmentMap) -> np.ndarray:
    w = env.solid_angles()
    return np.einsum("hw,hwc->c", w, env.radiance) / w.sum()


def downsample(env: EnvironmentMap, height: int) -> EnvironmentMap:
    """Solid-angle weighted block average to ``height`` rows (and 2x columns ratio kept).

    Maps whose dimensions are not integer multiples of the target are
    returned unchanged.
    """
    if height >= env.height or env.height % height:
        return env
    f = env.height // height
    if env.width % f:
        return env
    w = np.sin(env.thetas())[:, None, None]
    num = (env.radiance * w).reshape(height, f, env.width // f, f, 3).sum(axis=(1, 3))
    den = np.broadcast_to(w, env.radiance.shape[:2] + (1,)).reshape(height, f, env.width // f, f, 1).sum(axis=(1, 3))
    return EnvironmentMap(num / den)


def diffuse_convolve(
    env: EnvironmentMap,
    n: float,
    out_height: int | None = None,
    work_height: int | None = DEFAULT_WORK_HEIGHT,
) -> EnvironmentMap:
    """Blur ``env`` with the normalised clamped-cosine lobe ``max(0, cos g)^n``.

    Each output direction is a weighted average of input texels with weights
    ``max(0, w_o . w_i)^n sin(theta_i)``, so constant maps are fixed points.
    ``n = 0`` gives a uniform hemisphere average.

    Parameters
    ----------
    env : EnvironmentMap
    n : float
        Phong exponent, ``n >= 0``.  ``math.inf`` returns the map unchanged
        (resampled to ``out_height`` if needed).
    out_height : int, optional
        Output rows; output width is ``2 * out_height``.  Defaults to the
        input height.
    work_height : int or None
        Input maps taller than this are block-averaged down before the
        O(k_in * k_out) sum.  ``None`` disables the reduction.
    """
    if not (n >= 0):
        raise ValidationError(f"exponent must be >= 0, got {n}")
    out_height = env.height if out_height is None else int(out_height)
    if out_height < 2:
        raise ValidationError("out_height must be >= 2")
    src = downsample(env, work_height) if work_height else env
    if math.isinf(n):
        if src.height == out_height and src.width == 2 * out_height:
            return src
        # nearest-lobe limit: fall back to a very sharp finite lobe
        n = 1e6

    d_in = src.directions().reshape(-1, 3)
    rad_in = src.radiance.reshape(-1, 3)
    log_sin = np.log(np.sin(src.thetas()))
    log_sin = np.repeat(log_sin, src.width)
    d_out = texel_directions(out_height, 2 * out_height).reshape(-1, 3)
    out = np.empty((d_out.shape[0], 3))
    chunk = max(1, 2_000_000 // d_in.shape[0])
    with np.errstate(divide="ignore"):
        for s in range(0, d_out.shape[0], chunk):
            cosg = d_out[s:s + chunk] @ d_in.T
            if n == 0:
                logk = np.where(cosg > 0, 0.0, -np.inf)
            else:
                logk = np.where(cosg > 0, n * np.log(np.maximum(cosg, 1e-300)), -np.inf)
            logk = logk + log_sin
            logk -= logk.max(axis=1, keepdims=True)
            k = np.exp(logk)
            den = k.sum(axis=1)
            if not np.all(den > 0):
                raise LightDiffusionError("degenerate kernel normalisation")
            out[s:s + chunk] = (k @ rad_in) / den[:, None]
    return EnvironmentMap(np.maximum(out, 0.0).reshape(out_height, 2 * out_height, 3))


def diffusion_parameter(g_source: float, g_diffuse: float, g_target: float) -> float:
    """Rescale a target Gini to ``t`` in [0, 1]: 0 fully diffuse, 1 unchanged."""
    if not g_source > g_diffuse:
        raise DegenerateLightingError(
            f"source gini {g_source} must exceed diffused gini {g_diffuse}"
        )
    t = (g_target - g_diffuse) / (g_source - g_diffuse)
    if t < 0.0 or t > 1.0:
        warnings.warn(f"target gini {g_target} outside [{g_diffuse}, {g_source}]; t clamped", ClampWarning)
        t = min(max(t, 0.0), 1.0)
    return float(t)


def dominant_light_direction(env: EnvironmentMap, percentile: float = 99.0) -> np.ndarray:
    """Unit direction of the strongest light.

    Takes the ``lum * sin(theta)``-weighted centroid of texels above the given
    percentile.  When that centroid vanishes (e.g. a ring of equal texels),
    falls back to the single brightest texel, smallest flat index first.
    """
    x = sample_weights(env).ravel()
    if not x.sum() > 0:
        raise UndefinedGiniError("no light in environment map")
    sel = x > np.percentile(x, percentile)
    if not sel.any():
        sel = x >= x.max()
    dirs = env.directions().reshape(-1, 3)
    c = (x[sel, None] * dirs[sel]).sum(axis=0)
    norm = np.linalg.norm(c)
    if norm <= 1e-9 * x[sel].sum():
        c = dirs[int(np.argmax(x))]
        norm = np.linalg.norm(c)
    return c / norm


def zero_cone(env: EnvironmentMap, direction, half_angle: float) -> EnvironmentMap:
    """Copy of ``env`` with texels within ``half_angle`` radians of ``direction`` set to 0."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    cos_to = env.directions() @ d
    rad = env.radiance.copy()
    rad[cos_to >= math.cos(half_angle)] = 0.0
    return EnvironmentMap(rad)


def exponent_for_gini(
    env: EnvironmentMap,
    target_gini: float,
    n_min: float = 1.0,
    n_max: float = 4096.0,
    iters: int = 40,
) -> float:
    """Phong exponent whose convolved map reaches ``target_gini``.

    Bisection in ``log n``; convolution runs at the map's own resolution.
    Returns ``n_min`` if the target is at or below the fully diffused Gini
    and ``math.inf`` if it is above what ``n_max`` still reaches.
    """

    def g_of(n):
        return gini(diffuse_convolve(env, n, out_height=env.height, work_height=None))

    if target_gini <= g_of(n_min):
        return float(n_min)
    if target_gini >= g_of(n_max):
        return math.inf
    lo, hi = math.log(n_min), math.log(n_max)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if g_of(math.exp(mid)) < target_gini:
            lo = mid
        else:
            hi = mid
    return float(math.exp(0.5 * (lo + hi)))


# ---------------------------------------------------------------------------
# Procedural maps


@dataclass(frozen=True)
class Lobe:
    direction: tuple[float, float, float]
    width: float
    intensity: float
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class ProceduralEnvSpec:
    """Ambient term plus up to eight exponential lobes.

    ``noise`` scales a smooth multiplicative variation of the ambient term
    drawn from the seed; with ``noise = 0`` the seed has no effect.
    """

    lobes: tuple[Lobe, ...] = ()
    ambient: float = 0.0
    ambient_color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    noise: float = 0.0
    height: int = 32
    width: int = 64

    def to_dict(self) -> dict:
        return {
            "lobes": [
                {"direction": list(l.direction), "width": l.width,
                 "intensity": l.intensity, "color": list(l.color)}
                for l in self.lobes
            ],
            "ambient": self.ambient,
            "ambient_color": list(self.ambient_color),
            "noise": self.noise,
            "height": self.height,
            "width": self.width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProceduralEnvSpec":
        try:
            lobes = tuple(
                Lobe(tuple(map(float, l["direction"])), float(l["width"]),
                     float(l["intensity"]), tuple(map(float, l.get("color", (1, 1, 1)))))
                for l in d.get("lobes", [])
            )
            return cls(
                lobes=lobes,
                ambient=float(d.get("ambient", 0.0)),
                ambient_color=tuple(map(float, d.get("ambient_color", (1, 1, 1)))),
                noise=float(d.get("noise", 0.0)),
                height=int(d.get("height", 32)),
                width=int(d.get("width", 64)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed environment spec: {exc}") from exc


def _validate_env_spec(spec: ProceduralEnvSpec) -> None:
    if len(spec.lobes) > 8:
        raise ValidationError("at most 8 lobes")
    if spec.ambient < 0 or spec.noise < 0:
        raise ValidationError("ambient and noise must be >= 0")
    if not spec.lobes and spec.ambient == 0:
        raise ValidationError("spec without lobes or ambient light gives an all-zero map")
    if spec.height < 2 or spec.width < 4:
        raise ValidationError("map must be at least 2x4 texels")
    for lobe in spec.lobes:
        if not (0 < lobe.width <= math.pi):
            raise ValidationError(f"lobe width must be in (0, pi], got {lobe.width}")
        if not lobe.intensity > 0:
            raise ValidationError("lobe intensity must be > 0")
        if np.linalg.norm(lobe.direction) == 0:
            raise ValidationError("lobe direction must be non-zero")
        if min(lobe.color) < 0:
            raise ValidationError("lobe color must be non-negative")


def gen_procedural_env(spec: ProceduralEnvSpec, seed: int = 0) -> EnvironmentMap:
    """Render ``spec`` to a map; deterministic in ``(spec, seed)``."""
    _validate_env_spec(spec)
    dirs = texel_directions(spec.height, spec.width)
    ambient = np.full((spec.height, spec.width), spec.ambient)
    if spec.noise > 0:
        rng = np.random.default_rng(seed)
        field_ = rng.standard_normal((spec.height, spec.width))
        field_ = ndimage.gaussian_filter(field_, sigma=max(spec.height / 8, 1.0), mode=("nearest", "wrap"))
        field_ /= field_.std() + 1e-12
        ambient = ambient * np.exp(spec.noise * field_)
    rad = ambient[..., None] * np.asarray(spec.ambient_color, dtype=np.float64)
    for lobe in spec.lobes:
        d = np.asarray(lobe.direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        falloff = np.exp((dirs @ d - 1.0) / lobe.width ** 2)
        rad = rad + lobe.intensity * falloff[..., None] * np.asarray(lobe.color, dtype=np.float64)
    return EnvironmentMap(rad)


def random_env_spec(rng: np.random.Generator, height: int = 32) -> ProceduralEnvSpec:
    """Outdoor-like lighting: one sharp sun-like lobe, up to two soft fills, tinted sky."""

    def direction(max_azimuth):
        elev = rng.uniform(-0.1, 1.1)
        az = rng.uniform(-max_azimuth, max_azimuth)
        # azimuth measured from +z (towards camera) around +y
        return (math.cos(elev) * math.sin(az), math.sin(elev), math.cos(elev) * math.cos(az))

    def tint(spread):
        c = np.clip(1.0 + rng.uniform(-spread, spread, size=3), 0.2, None)
        return tuple(float(v) for v in c / (c @ REC709))

    lobes = [Lobe(direction(1.9), float(rng.uniform(0.04, 0.25)),
                  float(rng.uniform(40.0, 400.0)), tint(0.3))]
    for _ in range(int(rng.integers(0, 3))):
        lobes.append(Lobe(direction(math.pi), float(rng.uniform(0.3, 0.9)),
                          float(rng.uniform(0.3, 2.0)), tint(0.5)))
    return ProceduralEnvSpec(
        lobes=tuple(lobes),
        ambient=float(rng.uniform(0.05, 0.6)),
        ambient_color=tint(0.5),
        noise=float(rng.uniform(0.0, 0.5)),
        height=height,
        width=2 * height,
    )
