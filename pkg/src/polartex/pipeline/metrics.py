"""Image and texture quality metrics."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

PSNR_CAP = 99.0


def psnr(estimate, reference, mask=None, peak: float = 1.0) -> float:
    """PSNR over masked pixels (all channels); identical inputs give the
    cap of 99 dB."""
    a = np.asarray(estimate, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = (a - b) ** 2
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
    if diff.size == 0:
        raise ValueError("empty mask")
    mse = float(diff.mean())
    if mse <= 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse)))


def ssim(estimate, reference, mask=None, sigma: float = 1.5, data_range: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window, per channel then averaged,
    restricted to masked pixels."""
    a = np.asarray(estimate, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    # truncate so the kernel radius is 5, i.e. an 11-tap window
    trunc = 5.0 / sigma

    def blur(x):
        return ndimage.gaussian_filter(x, sigma, truncate=trunc, mode="reflect")

    sel = np.ones(a.shape[:2], bool) if mask is None else np.asarray(mask, dtype=bool)
    if not sel.any():
        raise ValueError("empty mask")
    scores = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx, my = blur(x), blur(y)
        vx = blur(x * x) - mx * mx
        vy = blur(y * y) - my * my
        cov = blur(x * y) - mx * my
        smap = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        scores.append(smap[sel].mean())
    return float(np.mean(scores))


def texture_psnr(estimate, reference, texel_mask=None) -> float:
    return psnr(estimate, reference, texel_mask)


def angular_error_deg(estimate, reference, texel_mask=None) -> float:
    """Mean angle between normal-map vectors, in degrees."""
    a = np.asarray(estimate, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    ang = np.degrees(np.arccos(np.clip(np.sum(a * b, -1), -1.0, 1.0)))
    if texel_mask is not None:
        ang = ang[np.asarray(texel_mask, dtype=bool)]
    return float(ang.mean())


def score_textures(estimate, reference, texel_mask=None) -> dict:
    """Recovered-vs-true texture metrics used for synthetic round trips."""
    return {
        "kd_psnr": psnr(estimate.kd, reference.kd, texel_mask),
        "ks_psnr": psnr(estimate.ks, reference.ks, texel_mask),
        "alpha_error": abs(float(estimate.alpha) - float(reference.alpha)),
        "normal_error_deg": angular_error_deg(estimate.normal, reference.normal, texel_mask),
        "diffuse_scale_error": float(np.max(np.abs(
            np.asarray(estimate.diffuse_scale) - np.asarray(reference.diffuse_scale)))),
    }
