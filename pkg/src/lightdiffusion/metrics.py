"""Image-quality metrics restricted to the subject matte."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ValidationError

SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
_Y = np.array([0.2126, 0.7152, 0.0722])


def _gaussian(x):
    # truncate so the support is exactly the 11x11 window
    return ndimage.gaussian_filter(x, SSIM_SIGMA, truncate=(SSIM_WINDOW // 2) / SSIM_SIGMA, mode="reflect")


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM of two single-channel images in [0, 1]."""
    mx, my = _gaussian(x), _gaussian(y)
    sxx = _gaussian(x * x) - mx * mx
    syy = _gaussian(y * y) - my * my
    sxy = _gaussian(x * y) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def _as_rgb(img) -> np.ndarray:
    rgb = getattr(img, "rgb", img)
    return np.asarray(rgb, dtype=np.float64)


def metrics(pred, gt, alpha) -> dict:
    """MAE, MSE (over RGB) and luminance SSIM over pixels with ``alpha > 0``."""
    p, g = _as_rgb(pred), _as_rgb(gt)
    a = np.asarray(alpha)
    if p.shape != g.shape or a.shape != p.shape[:2]:
        raise ValidationError(f"misaligned buffers: {p.shape}, {g.shape}, alpha {a.shape}")
    fg = a > 0
    if not fg.any():
        raise ValidationError("no foreground pixels")
    diff = (p - g)[fg]
    yp = np.clip(p @ _Y if p.ndim == 3 else p, 0, 1)
    yg = np.clip(g @ _Y if g.ndim == 3 else g, 0, 1)
    return {
        "mae": float(np.abs(diff).mean()),
        "mse": float((diff ** 2).mean()),
        "ssim": float(np.clip(ssim_map(yp, yg)[fg].mean(), -1.0, 1.0)),
    }


@dataclass
class MetricsReport:
    """Per-example rows ``(id, mae, mse, ssim)`` plus their means."""

    rows: list = field(default_factory=list)

    def add(self, example_id: str, values: dict) -> None:
        self.rows.append((example_id, values["mae"], values["mse"], values["ssim"]))

    def mean(self) -> dict:
        if not self.rows:
            raise ValidationError("empty report")
        arr = np.array([r[1:] for r in self.rows], dtype=np.float64)
        m = arr.mean(axis=0)
        return {"mae": float(m[0]), "mse": float(m[1]), "ssim": float(m[2])}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "mae", "mse", "ssim"])
        for r in self.rows:
            w.writerow([r[0], f"{r[1]:.8f}", f"{r[2]:.8f}", f"{r[3]:.8f}"])
        m = self.mean()
        w.writerow(["mean", f"{m['mae']:.8f}", f"{m['mse']:.8f}", f"{m['ssim']:.8f}"])
        return buf.getvalue()


def format_table(named: dict) -> str:
    """Fixed-width summary with one row per model name."""
    lines = [f"{'Model':<24} {'MAE':>10} {'MSE':>10} {'SSIM':>8}"]
    for name, m in named.items():
        lines.append(f"{name:<24} {m['mae']:>10.4f} {m['mse']:>10.4f} {m['ssim']:>8.4f}")
    return "\n".join(lines)
