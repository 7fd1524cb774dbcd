"""Synthetic portrait renderer.

A fixed orthographic camera looks down ``-z`` at a subject of unit bounding
radius centred at the origin.  Shading is Lambertian plus a Phong lobe around
the mirrored view ray, lit by distant directional lights with binary
ray-traced visibility.  An environment render is the sum of one-light-at-a-time
(OLAT) images over the texels of the (downsampled) environment map, so every
render is linear in the lighting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numba
import numpy as np
from scipy import ndimage

from .envmap import (
    EnvironmentMap,
    diffuse_convolve,
    downsample,
    texel_directions,
    texel_solid_angles,
)
from .errors import ValidationError

# Half-height of the visible frame in object units; the subject has radius 1.
FRAME_HALF_HEIGHT = 1.1
# Rows of the environment map used for the OLAT sum (height 16 -> 512 lights).
INTEGRATION_HEIGHT = 16

GEOMETRIES = ("sphere", "bust")
ALBEDO_PATTERNS = ("flat", "two_tone", "noise")


@dataclass(eq=False)
class ImageBuffer:
    """Linear RGB (H, W, 3) with coverage alpha (H, W)."""

    rgb: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3 or self.alpha.shape != self.rgb.shape[:2]:
            raise ValidationError(f"bad image shapes rgb={self.rgb.shape} alpha={self.alpha.shape}")
        if not np.all(np.isfinite(self.rgb)) or np.any(self.rgb < 0):
            raise ValidationError("image RGB must be finite and non-negative")
        if np.any(self.alpha < 0) or np.any(self.alpha > 1):
            raise ValidationError("alpha must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    def luminance(self) -> np.ndarray:
        return self.rgb @ np.array([0.2126, 0.7152, 0.0722])


@dataclass(frozen=True)
class Occluder:
    """Opaque rectangle with the given centre, plane normal and in-plane up axis."""

    center: tuple[float, float, float]
    normal: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    half_width: float = 0.5
    half_height: float = 0.5

    def frame(self):
        c = np.asarray(self.center, dtype=np.float64)
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        up = np.asarray(self.up, dtype=np.float64)
        v = up - (up @ n) * n
        v = v / np.linalg.norm(v)
        u = np.cross(v, n)
        return c, n, u, v


@dataclass(frozen=True)
class SceneSpec:
    geometry: str = "sphere"
    albedo_pattern: str = "flat"
    albedo: tuple[float, float, float] = (0.5, 0.5, 0.5)
    clothing_albedo: tuple[float, float, float] = (0.2, 0.25, 0.5)
    skin_fraction: float = 0.6
    texture_noise: float = 0.0
    specular_strength: float = 0.0
    specular_exponent: float = 16.0
    occluder: Occluder | None = None
    texture_size: int = 128

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        if self.occluder is not None:
            d["occluder"] = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.occluder).items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        try:
            occ = d.pop("occluder", None)
            if occ is not None:
                occ = Occluder(**{k: tuple(v) if isinstance(v, list) else v for k, v in occ.items()})
            kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
            return cls(occluder=occ, **kw)
        except TypeError as exc:
            raise ValidationError(f"malformed scene spec: {exc}") from exc


# ---------------------------------------------------------------------------
# Geometry


class Sphere:
    """Unit sphere at the origin."""

    bounding_radius = 1.0

    def intersect(self, x, y):
        r2 = x * x + y * y
        hit = r2 < 1.0
        z = np.sqrt(np.clip(1.0 - r2, 0.0, None))
        pts = np.stack([x, y, z], axis=-1)
        return hit, pts, pts.copy()

    def self_visible(self, points, normals, dirs, candidates):
        # convex: the clamped cosine already encodes all self-occlusion
        return candidates


_BUST_FEATURES = (
    # (cx, cy, sx, sy, amplitude)
    (0.0, -0.05, 0.07, 0.20, 0.22),    # nose bridge
    (0.0, -0.20, 0.08, 0.07, 0.08),    # nose tip
    (0.0, 0.28, 0.45, 0.06, 0.07),     # brow ridge
    (-0.30, 0.15, 0.12, 0.08, -0.10),  # eye sockets
    (0.30, 0.15, 0.12, 0.08, -0.10),
    (-0.38, -0.22, 0.15, 0.14, 0.06),  # cheeks
    (0.38, -0.22, 0.15, 0.14, 0.06),
    (0.0, -0.55, 0.20, 0.08, 0.05),    # chin
)


class Bust:
    """Face-like heightfield ``z = h(x, y)`` over a disk, treated as a solid below h.

    A shallow ellipsoid carries Gaussian bumps and dents (nose, brow, eye
    sockets, cheeks, chin) whose amplitudes vary with the seed.
    """

    bounding_radius = 1.0
    rim = 0.98
    depth = 0.85
    grid_size = 256

    def __init__(self, seed: int):
        rng = np.random.default_rng(seed)
        scale = rng.uniform(0.8, 1.2, size=len(_BUST_FEATURES))
        self.features = np.array(
            [(cx, cy, sx, sy, a * s) for (cx, cy, sx, sy, a), s in zip(_BUST_FEATURES, scale)]
        )
        g = np.linspace(-1.0, 1.0, self.grid_size)
        gx, gy = np.meshgrid(g, g, indexing="xy")
        hg = self.height(gx, gy)
        hg[gx * gx + gy * gy >= self.rim ** 2] = -1e9
        self.grid = np.ascontiguousarray(hg)
        self.hmax = float(hg.max())

    def height(self, x, y):
        r2 = x * x + y * y
        taper = np.sqrt(np.clip(1.0 - r2, 0.0, None))
        h = self.depth * taper
        for cx, cy, sx, sy, a in self.features:
            h = h + a * taper * np.exp(-0.5 * (((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2))
        return h

    def intersect(self, x, y):
        hit = x * x + y * y < self.rim ** 2
        eps = 1e-5
        z = self.height(x, y)
        hx = (self.height(x + eps, y) - self.height(x - eps, y)) / (2 * eps)
        hy = (self.height(x, y + eps) - self.height(x, y - eps)) / (2 * eps)
        n = np.stack([-hx, -hy, np.ones_like(hx)], axis=-1)
        n /= np.linalg.norm(n, axis=-1, keepdims=True)
        return hit, np.stack([x, y, z], axis=-1), n

    def self_visible(self, points, normals, dirs, candidates):
        return _march_heightfield(
            np.ascontiguousarray(points), np.ascontiguousarray(dirs), candidates,
            self.grid, self.hmax,
        )


@numba.njit(cache=True)
def _height_lookup(grid, x, y):
    n = grid.shape[0]
    fx = (x + 1.0) * 0.5 * (n - 1)
    fy = (y + 1.0) * 0.5 * (n - 1)
    if fx < 0.0 or fy < 0.0 or fx > n - 1 or fy > n - 1:
        return -1e9
    i0 = min(int(fy), n - 2)
    j0 = min(int(fx), n - 2)
    ty = fy - i0
    tx = fx - j0
    a = grid[i0, j0] * (1 - tx) + grid[i0, j0 + 1] * tx
    b = grid[i0 + 1, j0] * (1 - tx) + grid[i0 + 1, j0 + 1] * tx
    return a * (1 - ty) + b * ty


@numba.njit(cache=True)
def _march_heightfield(points, dirs, candidates, grid, hmax):
    step = 0.015
    t0 = 0.03
    bias = 0.004
    P = points.shape[0]
    K = dirs.shape[0]
    vis = np.zeros((P, K), dtype=np.bool_)
    for p in range(P):
        px, py, pz = points[p, 0], points[p, 1], points[p, 2]
        for k in range(K):
            if not candidates[p, k]:
                continue
            dx, dy, dz = dirs[k, 0], dirs[k, 1], dirs[k, 2]
            t = t0
            visible = True
            while True:
                qx = px + t * dx
                qy = py + t * dy
                qz = pz + t * dz
                if qz > hmax or qx * qx + qy * qy > 1.0:
                    break
                if qz < _height_lookup(grid, qx, qy) - bias:
                    visible = False
                    break
                t += step
            vis[p, k] = visible
    return vis


def occluder_visible(occ: Occluder, points, dirs) -> np.ndarray:
    """(P, K) mask, True where the ray from each point along each direction misses ``occ``."""
    c, n, u, v = occ.frame()
    denom = dirs @ n
    safe = np.where(np.abs(denom) > 1e-12, denom, np.inf)
    t = ((c - points) @ n)[:, None] / safe[None, :]
    q = points[:, None, :] + t[..., None] * dirs[None, :, :] - c
    lu = q @ u
    lv = q @ v
    blocked = (t > 0) & (np.abs(lu) <= occ.half_width) & (np.abs(lv) <= occ.half_height)
    return ~blocked


# ---------------------------------------------------------------------------
# Scenes


@dataclass(eq=False)
class Scene:
    spec: SceneSpec
    seed: int
    geometry: object
    albedo_texture: np.ndarray
    skin_texture: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def specular_strength(self) -> float:
        return self.spec.specular_strength

    @property
    def specular_exponent(self) -> float:
        return self.spec.specular_exponent

    @property
    def occluder(self):
        return self.spec.occluder


def _validate_scene_spec(spec: SceneSpec) -> None:
    if spec.geometry not in GEOMETRIES:
        raise ValidationError(f"geometry must be one of {GEOMETRIES}")
    if spec.albedo_pattern not in ALBEDO_PATTERNS:
        raise ValidationError(f"albedo_pattern must be one of {ALBEDO_PATTERNS}")
    for c in (spec.albedo, spec.clothing_albedo):
        if len(c) != 3 or min(c) < 0 or max(c) > 1:
            raise ValidationError("albedo colours must be RGB triples in [0, 1]")
    if not 0 <= spec.skin_fraction <= 1:
        raise ValidationError("skin_fraction must be in [0, 1]")
    if spec.specular_strength < 0 or spec.specular_exponent < 1:
        raise ValidationError("need specular_strength >= 0 and specular_exponent >= 1")
    if spec.texture_noise < 0 or spec.texture_size < 8:
        raise ValidationError("need texture_noise >= 0 and texture_size >= 8")


def build_scene(spec: SceneSpec, seed: int = 0) -> Scene:
    """Instantiate geometry and albedo/skin textures; deterministic in ``(spec, seed)``.

    Textures live on the ``[-1, 1]^2`` object-space xy square (every visible
    surface point is a graph over it).  For ``two_tone`` the top
    ``skin_fraction`` of the subject disk is skin, the rest clothing.
    """
    _validate_scene_spec(spec)
    rng = np.random.default_rng(seed)
    T = spec.texture_size
    c = (np.arange(T) + 0.5) / T * 2.0 - 1.0
    tx, ty = np.meshgrid(c, -c, indexing="xy")
    disk = tx * tx + ty * ty < 1.0

    base = np.broadcast_to(np.asarray(spec.albedo, dtype=np.float64), (T, T, 3)).copy()
    skin = np.ones((T, T), dtype=bool)
    if spec.albedo_pattern == "two_tone":
        thr = np.quantile(ty[disk], 1.0 - spec.skin_fraction) if spec.skin_fraction > 0 else np.inf
        skin = ty >= thr
        base[~skin] = spec.clothing_albedo
    noise_amount = spec.texture_noise
    if spec.albedo_pattern == "noise" and noise_amount == 0:
        noise_amount = 0.3
    if noise_amount > 0:
        f = ndimage.gaussian_filter(rng.standard_normal((T, T)), sigma=T / 32, mode="wrap")
        f /= f.std() + 1e-12
        base = base * (1.0 + noise_amount * f)[..., None]
    albedo = np.clip(base, 0.0, 1.0)

    geom = Sphere() if spec.geometry == "sphere" else Bust(seed)
    return Scene(spec=spec, seed=seed, geometry=geom, albedo_texture=albedo, skin_texture=skin)


def random_scene_spec(rng: np.random.Generator) -> SceneSpec:
    """Bust or sphere with a skin tone drawn from a narrow prior and random clothing."""
    u = rng.uniform()
    light_skin = np.array([0.80, 0.58, 0.47])
    dark_skin = np.array([0.36, 0.22, 0.16])
    skin = (1 - u) * light_skin + u * dark_skin
    skin = np.clip(skin * rng.uniform(0.95, 1.05, size=3), 0, 1)
    return SceneSpec(
        geometry="bust" if rng.uniform() < 0.75 else "sphere",
        albedo_pattern="two_tone",
        albedo=tuple(float(v) for v in skin),
        clothing_albedo=tuple(float(v) for v in rng.uniform(0.05, 0.9, size=3)),
        skin_fraction=float(rng.uniform(0.5, 0.75)),
        texture_noise=float(rng.uniform(0.0, 0.12)),
        specular_strength=float(rng.uniform(0.02, 0.15)),
        specular_exponent=float(rng.uniform(10.0, 60.0)),
    )


# ---------------------------------------------------------------------------
# Rendering


@dataclass(eq=False)
class _Surface:
    alpha: np.ndarray          # (H, W)
    index: np.ndarray          # flat pixel ids of subject pixels
    points: np.ndarray         # (P, 3)
    normals: np.ndarray        # (P, 3)
    reflect: np.ndarray        # (P, 3) mirrored view ray
    albedo: np.ndarray         # (P, 3)
    skin: np.ndarray           # (P,)
    shape: tuple


def pixel_coordinates(resolution) -> tuple[np.ndarray, np.ndarray]:
    """Object-space (x, y) of pixel centres for an (H, W) frame."""
    h, w = resolution
    s = FRAME_HALF_HEIGHT
    xs = ((np.arange(w) + 0.5) / w * 2.0 - 1.0) * s * w / h
    ys = (1.0 - (np.arange(h) + 0.5) / h * 2.0) * s
    return np.meshgrid(xs, ys, indexing="xy")


def _texture_lookup(tex, x, y):
    T = tex.shape[0]
    col = np.clip(((x + 1.0) * 0.5 * T).astype(int), 0, T - 1)
    row = np.clip(((1.0 - y) * 0.5 * T).astype(int), 0, T - 1)
    return tex[row, col]


def _check_resolution(resolution) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in resolution)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"resolution must be an (H, W) pair, got {resolution!r}") from exc
    if h < 1 or w < 1:
        raise ValidationError("resolution must be positive")
    return h, w


def _surface(scene: Scene, resolution) -> _Surface:
    key = ("surface", resolution)
    if key not in scene._cache:
        x, y = pixel_coordinates(resolution)
        hit, pts, nrm = scene.geometry.intersect(x, y)
        idx = np.flatnonzero(hit)
        pts = pts.reshape(-1, 3)[idx]
        nrm = nrm.reshape(-1, 3)[idx]
        view = np.array([0.0, 0.0, -1.0])
        refl = view - 2.0 * (nrm @ view)[:, None] * nrm
        scene._cache[key] = _Surface(
            alpha=hit.astype(np.float64),
            index=idx,
            points=pts,
            normals=nrm,
            reflect=refl,
            albedo=_texture_lookup(scene.albedo_texture, pts[:, 0], pts[:, 1]),
            skin=_texture_lookup(scene.skin_texture, pts[:, 0], pts[:, 1]),
            shape=tuple(resolution),
        )
    return scene._cache[key]


def visibility(scene: Scene, resolution, dirs) -> np.ndarray:
    """Binary (P, K) visibility of each subject pixel towards each light direction."""
    surf = _surface(scene, resolution)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    cand = (surf.normals @ dirs.T) > 0
    vis = scene.geometry.self_visible(surf.points, surf.normals, dirs, cand)
    if scene.occluder is not None:
        vis &= occluder_visible(scene.occluder, surf.points, dirs)
    return vis


def _transport(scene: Scene, resolution, dirs, cache_key=None):
    """Diffuse and specular OLAT responses, each (P, K), visibility included."""
    if cache_key is not None and cache_key in scene._cache:
        return scene._cache[cache_key]
    surf = _surface(scene, resolution)
    vis = visibility(scene, resolution, dirs)
    cos_n = np.clip(surf.normals @ dirs.T, 0.0, None) * vis
    spec = np.zeros_like(cos_n)
    if scene.specular_strength > 0:
        spec = scene.specular_strength * np.clip(surf.reflect @ dirs.T, 0.0, None) ** scene.specular_exponent * vis
    out = (cos_n / np.pi, spec)
    if cache_key is not None:
        scene._cache[cache_key] = out
    return out


def _assemble(surf: _Surface, diffuse_irr, spec_irr) -> np.ndarray:
    h, w = surf.shape
    rgb = np.zeros((h * w, 3))
    rgb[surf.index] = surf.albedo * diffuse_irr + spec_irr
    return np.maximum(rgb, 0.0).reshape(h, w, 3)


def render_olat(scene: Scene, light_dir, light_rgb, resolution=(128, 128)) -> ImageBuffer:
    """Image under a single distant light of colour ``light_rgb`` from ``light_dir``."""
    resolution = _check_resolution(resolution)
    d = np.asarray(light_dir, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValidationError("light_dir must be a unit vector")
    rgb_l = np.asarray(light_rgb, dtype=np.float64).reshape(3)
    surf = _surface(scene, resolution)
    dif, spec = _transport(scene, resolution, d[None, :])
    img = _assemble(surf, dif @ rgb_l[None, :], spec @ rgb_l[None, :])
    return ImageBuffer(img, surf.alpha)


@dataclass(eq=False)
class RenderBundle:
    image: ImageBuffer
    albedo_gt: ImageBuffer
    skin_mask: np.ndarray
    normals: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        return self.image.alpha


def light_weights(env: EnvironmentMap) -> tuple[np.ndarray, np.ndarray]:
    """OLAT directions (K, 3) and colours ``E_i sin(theta_i) dtheta dphi`` (K, 3)."""
    dirs = env.directions().reshape(-1, 3)
    w = env.radiance.reshape(-1, 3) * texel_solid_angles(env.height, env.width).reshape(-1, 1)
    return dirs, w


def render_env(scene: Scene, env: EnvironmentMap, resolution=(128, 128),
               integration_height: int | None = INTEGRATION_HEIGHT) -> RenderBundle:
    """Render under ``env`` as the weighted sum of OLAT images over its texels.

    Maps taller than ``integration_height`` are block-averaged first.
    """
    resolution = _check_resolution(resolution)
    if integration_height:
        env = downsample(env, integration_height)
    dirs, w = light_weights(env)
    surf = _surface(scene, resolution)
    dif, spec = _transport(scene, resolution, dirs, cache_key=("transport", resolution, env.height, env.width))
    img = _assemble(surf, dif @ w, spec @ w)
    h, wd = resolution
    alb = np.zeros((h * wd, 3))
    alb[surf.index] = surf.albedo
    skin = np.zeros(h * wd, dtype=bool)
    skin[surf.index] = surf.skin
    nrm = np.zeros((h * wd, 3))
    nrm[surf.index] = surf.normals
    return RenderBundle(
        image=ImageBuffer(img, surf.alpha),
        albedo_gt=ImageBuffer(alb.reshape(h, wd, 3), surf.alpha),
        skin_mask=skin.reshape(h, wd),
        normals=nrm.reshape(h, wd, 3),
    )


def render_diffused(scene: Scene, env: EnvironmentMap, n: float, resolution=(128, 128),
                    integration_height: int = INTEGRATION_HEIGHT) -> ImageBuffer:
    """Ground-truth light-diffused image: render under the cosine-lobe blurred map.

    The map is reduced to the integration grid before blurring, so the blur
    runs texel-to-texel on the grid the renderer sums over and large ``n``
    converges to :func:`render_env` instead of point-sampling sharp lobes.
    """
    if not n >= 0:
        raise ValidationError(f"exponent must be >= 0, got {n}")
    if math.isinf(n):
        return render_env(scene, env, resolution, integration_height).image
    src = downsample(env, integration_height) if integration_height else env
    blurred = diffuse_convolve(src, n, out_height=src.height, work_height=None)
    return render_env(scene, blurred, resolution, integration_height).image
