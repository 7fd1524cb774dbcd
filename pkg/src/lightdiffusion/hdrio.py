"""Readers and writers for PFM, Radiance RGBE (.hdr) and 8-bit PNG previews."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError


def write_pfm(path, data) -> None:
    """Write an (H, W) or (H, W, 3) array as little-endian PFM (scale -1.0).

    Rows are stored bottom-to-top as the format requires.
    """
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValidationError(f"PFM holds 1 or 3 channels, got shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into float32, row 0 at the top."""
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag == b"PF":
            channels = 3
        elif tag == b"Pf":
            channels = 1
        else:
            raise ValidationError(f"{path}: not a PFM file")
        dims = f.readline()
        while dims.startswith(b"#"):
            dims = f.readline()
        w, h = map(int, dims.split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        buf = f.read(w * h * channels * 4)
    if len(buf) != w * h * channels * 4:
        raise ValidationError(f"{path}: truncated PFM data")
    arr = np.frombuffer(buf, dtype=dtype).reshape((h, w, channels) if channels == 3 else (h, w))
    return arr[::-1].astype(np.float32)


def _float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    v = rgb.max(axis=-1)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    nz = v > 1e-32
    mant, expo = np.frexp(v[nz])
    scale = mant * 256.0 / v[nz]
    out[nz, :3] = np.clip(np.floor(rgb[nz] * scale[:, None]), 0, 255).astype(np.uint8)
    out[nz, 3] = (expo + 128).astype(np.uint8)
    return out


def _rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    e = rgbe[..., 3].astype(np.int32)
    f = np.where(e > 0, np.ldexp(1.0, e - 136), 0.0)
    return ((rgbe[..., :3].astype(np.float64) + 0.5) * f[..., None]).astype(np.float32) * (e > 0)[..., None]


def write_hdr(path, rgb) -> None:
    """Write (H, W, 3) linear radiance as run-length encoded Radiance RGBE."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError("HDR images need shape (H, W, 3)")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValidationError("HDR radiance must be finite and non-negative")
    h, w = arr.shape[:2]
    rgbe = _float_to_rgbe(arr)
    with open(path, "wb") as f:
        f.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
        f.write(f"-Y {h} +X {w}\n".encode())
        if not 8 <= w < 0x8000:
            f.write(rgbe.tobytes())
            return
        for row in rgbe:
            f.write(bytes([2, 2, w >> 8, w & 0xFF]))
            for c in range(4):
                chan = row[:, c]
                for s in range(0, w, 128):
                    chunk = chan[s:s + 128]
                    f.write(bytes([len(chunk)]))
                    f.write(chunk.tobytes())


def read_hdr(path) -> np.ndarray:
    """Read a Radiance RGBE file (flat or new-style RLE) into float32 (H, W, 3)."""
    data = Path(path).read_bytes()
    pos = 0
    header_lines = []
    while True:
        end = data.index(b"\n", pos)
        line = data[pos:end]
        pos = end + 1
        if line == b"":
            break
        header_lines.append(line)
    if not header_lines or not header_lines[0].startswith(b"#?"):
        raise ValidationError(f"{path}: not a Radiance file")
    if any(l.startswith(b"FORMAT=") and l != b"FORMAT=32-bit_rle_rgbe" for l in header_lines):
        raise ValidationError(f"{path}: unsupported pixel format")
    end = data.index(b"\n", pos)
    m = re.fullmatch(rb"-Y (\d+) \+X (\d+)", data[pos:end].strip())
    if m is None:
        raise ValidationError(f"{path}: unsupported orientation {data[pos:end]!r}")
    pos = end + 1
    h, w = int(m.group(1)), int(m.group(2))
    out = np.zeros((h, w, 4), dtype=np.uint8)
    buf = np.frombuffer(data, dtype=np.uint8)
    for y in range(h):
        if 8 <= w < 0x8000 and buf[pos] == 2 and buf[pos + 1] == 2 and not buf[pos + 2] & 0x80:
            if (int(buf[pos + 2]) << 8 | int(buf[pos + 3])) != w:
                raise ValidationError(f"{path}: scanline width mismatch")
            pos += 4
            for c in range(4):
                x = 0
                while x < w:
                    count = int(buf[pos])
                    pos += 1
                    if count > 128:
                        count -= 128
                        out[y, x:x + count, c] = buf[pos]
                        pos += 1
                    else:
                        out[y, x:x + count, c] = buf[pos:pos + count]
                        pos += count
                    x += count
        else:
            out[y] = buf[pos:pos + 4 * w].reshape(w, 4)
            pos += 4 * w
    return _rgbe_to_float(out)


def linear_to_srgb8(x) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    s = np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)
    return np.round(s * 255.0).astype(np.uint8)


def write_png(path, image, srgb: bool = True) -> None:
    """8-bit PNG of a linear image (sRGB-encoded) or a mask (``srgb=False``)."""
    arr = np.asarray(image)
    if arr.dtype == bool:
        arr8 = arr.astype(np.uint8) * 255
    elif srgb:
        arr8 = linear_to_srgb8(arr)
    else:
        arr8 = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr8).save(path, format="PNG", optimize=False)


def read_png(path) -> np.ndarray:
    return np.asarray(Image.open(path))


def save_env(path, env) -> None:
    """Save an EnvironmentMap as .pfm or .hdr by extension."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        write_pfm(path, env.radiance)
    elif suffix == ".hdr":
        write_hdr(path, env.radiance)
    else:
        raise ValidationError(f"unknown environment map extension {suffix!r}")


def load_env(path):
    from .envmap import EnvironmentMap

    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        arr = read_pfm(path)
    elif suffix == ".hdr":
        arr = read_hdr(path)
    else:
        raise ValidationError(f"unknown environment map extension {suffix!r}")
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    return EnvironmentMap(arr.astype(np.float64))
