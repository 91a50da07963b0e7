"""Float image I/O (PFM) and 8-bit sRGB previews (PNG).

Image arrays use row 0 = top.  PFM stores scanlines bottom-to-top, so the
rows are flipped on the way in and out.  Textures (row 0 = v = 0, the
bottom) go through :func:`write_texture`/:func:`read_texture`, which store
them upright, i.e. the file's top row is v = 1.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage


def write_pfm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        header = "Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError(f"PFM supports 1 or 3 channels, got shape {img.shape}")
    h, w = img.shape[:2]
    data = np.flipud(img).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    """Returns ``(H, W, C)`` float64, row 0 = top."""
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        dims = fh.readline().split()
        while not dims:
            dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        channels = 3 if header == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != w * h * channels:
        raise ValueError(f"{path}: truncated PFM payload")
    img = data.reshape(h, w, channels)
    return np.flipud(img).astype(np.float64)


def write_texture(path, tex: np.ndarray) -> None:
    write_pfm(path, np.flipud(tex))


def read_texture(path) -> np.ndarray:
    return np.ascontiguousarray(np.flipud(read_pfm(path)))


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    x = np.clip(linear, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def write_png(path, image: np.ndarray) -> None:
    """Clamp to [0, 1], sRGB-encode and write 8 bits per channel."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    q = np.round(srgb_encode(img) * 255.0).astype(np.uint8)
    PILImage.fromarray(q).save(Path(path))


def write_texture_png(path, tex: np.ndarray) -> None:
    write_png(path, np.flipud(tex))

