"""Brute-force reference implementations used only by the tests.

Each one follows the defining formula directly, with loops where that keeps
it obviously correct, and shares no code with the package.
"""

from __future__ import annotations

import math

import numpy as np

Y709 = (0.2126, 0.7152, 0.0722)


def lum(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    return Y709[0] * rgb[..., 0] + Y709[1] * rgb[..., 1] + Y709[2] * rgb[..., 2]


def texel_dir(r, c, h, w):
    th = math.pi * (r + 0.5) / h
    ph = 2 * math.pi * (c + 0.5) / w
    return np.array([math.sin(th) * math.cos(ph), math.cos(th), math.sin(th) * math.sin(ph)]), th


def pairwise_gini(x):
    """sum_ij |x_i - x_j| / (2 k sum_i x_i), O(k^2)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    k = x.size
    total = 0.0
    for i in range(k):
        total += np.abs(x[i] - x).sum()
    return total / (2 * k * x.sum())


def env_gini(radiance):
    h = radiance.shape[0]
    sin = np.array([math.sin(math.pi * (r + 0.5) / h) for r in range(h)])
    return pairwise_gini(lum(radiance) * sin[:, None])


def convolve_texel(radiance, n, omega):
    """One output direction of the normalised clamped-cosine blur, by explicit loops."""
    h, w, _ = radiance.shape
    num = np.zeros(3)
    den = 0.0
    for r in range(h):
        for c in range(w):
            d, th = texel_dir(r, c, h, w)
            cg = float(np.dot(omega, d))
            if cg <= 0:
                continue
            k = cg ** n * math.sin(th)
            num += k * radiance[r, c]
            den += k
    return num / den


def ray_cylinder_exit(p, d, radius, lo=0.0, hi=100.0, iters=200):
    """Distance along ``p + s d`` at which the ray leaves ``x^2 + z^2 = radius^2`` (bisection)."""
    def inside(s):
        q = p + s * d
        return q[0] ** 2 + q[2] ** 2 < radius ** 2

    if not inside(lo) or inside(hi):
        return None
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if inside(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ray_sphere(origin, d):
    """Nearest hit of a ray with the unit sphere, or None."""
    b = float(np.dot(origin, d))
    c = float(np.dot(origin, origin)) - 1.0
    disc = b * b - c
    if disc < 0:
        return None
    s = -b - math.sqrt(disc)
    return origin + s * d if s > 0 else None


def ray_rectangle(p, d, center, normal, up, half_w, half_h):
    """True if the ray ``p + s d`` (s > 0) crosses the rectangle."""
    normal = np.asarray(normal, float)
    denom = float(np.dot(d, normal))
    if abs(denom) < 1e-12:
        return False
    s = float(np.dot(np.asarray(center) - p, normal)) / denom
    if s <= 0:
        return False
    q = p + s * d - np.asarray(center)
    u = np.asarray(up, float)
    v = np.cross(normal, u)
    return abs(np.dot(q, v)) <= half_w and abs(np.dot(q, u)) <= half_h


def gaussian_kernel1d(sigma, radius):
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()
