"""Texture addressing, bilinear sampling and its adjoint, mip chains.

Textures are ``(R, R, C)`` float arrays.  Row ``j`` holds texels whose
centers sit at ``v = (j + 0.5) / R`` and column ``i`` those at
``u = (i + 0.5) / R``, so row 0 is the bottom of the uv square.  Lookups
outside the texel-center grid use clamp-to-edge addressing.
"""

from __future__ import annotations

import numpy as np


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def check_texture(tex: np.ndarray, name: str = "texture") -> np.ndarray:
    tex = np.asarray(tex, dtype=np.float64)
    if tex.ndim == 2:
        tex = tex[..., None]
    if tex.ndim != 3 or tex.shape[0] != tex.shape[1]:
        raise ValueError(f"{name}: expected a square (R, R, C) array, got {tex.shape}")
    if not is_power_of_two(tex.shape[0]):
        raise ValueError(f"{name}: resolution {tex.shape[0]} is not a power of two")
    if tex.shape[2] not in (1, 3):
        raise ValueError(f"{name}: channel count must be 1 or 3, got {tex.shape[2]}")
    if not np.all(np.isfinite(tex)):
        raise ValueError(f"{name}: non-finite texel values")
    return tex


def bilinear_taps(uv: np.ndarray, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat texel indices and weights of the four bilinear taps.

    Returns ``(index, weight)``, both shaped ``(N, 4)``; ``index`` addresses
    a texture reshaped to ``(R * R, C)``.  Weights always sum to one.
    """
    uv = np.clip(np.asarray(uv, dtype=np.float64).reshape(-1, 2), 0.0, 1.0)
    R = resolution
    x = uv[:, 0] * R - 0.5
    y = uv[:, 1] * R - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xa = np.clip(x0, 0, R - 1)
    xb = np.clip(x0 + 1, 0, R - 1)
    ya = np.clip(y0, 0, R - 1)
    yb = np.clip(y0 + 1, 0, R - 1)
    index = np.stack([ya * R + xa, ya * R + xb, yb * R + xa, yb * R + xb], axis=1)
    weight = np.stack(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1
    )
    return index, weight


def gather(tex: np.ndarray, index: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Apply precomputed taps to ``tex``; returns ``(N, C)``."""
    flat = tex.reshape(-1, tex.shape[-1])
    return np.einsum("nk,nkc->nc", weight, flat[index])


def scatter(
    resolution: int, index: np.ndarray, weight: np.ndarray, values: np.ndarray
) -> np.ndarray:
    """Adjoint of :func:`gather`: accumulate ``values`` (N, C) into a new
    ``(R, R, C)`` buffer.  Summation order is fixed by ``np.bincount``."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    C = values.shape[1]
    n_texels = resolution * resolution
    contrib = weight[:, :, None] * values[:, None, :]  # (N, 4, C)
    flat_index = (index[:, :, None] * C + np.arange(C)).ravel()
    out = np.bincount(flat_index, weights=contrib.ravel(), minlength=n_texels * C)
    return out.reshape(resolution, resolution, C)


def bilinear_sample(tex: np.ndarray, uv) -> np.ndarray:
    """Sample ``tex`` at one uv pair or an ``(N, 2)`` array of them."""
    tex = np.asarray(tex, dtype=np.float64)
    if tex.ndim == 2:
        tex = tex[..., None]
    uv = np.asarray(uv, dtype=np.float64)
    single = uv.ndim == 1
    index, weight = bilinear_taps(uv, tex.shape[0])
    out = gather(tex, index, weight)
    return out[0] if single else out


def bilinear_splat(grad: np.ndarray, uv, value) -> np.ndarray:
    """Accumulate ``value`` into ``grad`` in place with the same weights
    :func:`bilinear_sample` would use at ``uv``.  Returns ``grad``."""
    R = grad.shape[0]
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    value = np.asarray(value, dtype=np.float64).reshape(uv.shape[0], -1)
    index, weight = bilinear_taps(uv, R)
    view = grad if grad.ndim == 3 else grad[..., None]
    view += scatter(R, index, weight, np.broadcast_to(value, (uv.shape[0], view.shape[2])))
    return grad


def downsample_box(tex: np.ndarray) -> np.ndarray:
    R = tex.shape[0]
    if R == 1:
        raise ValueError("cannot downsample a 1x1 texture")
    return tex.reshape(R // 2, 2, R // 2, 2, -1).mean(axis=(1, 3))


def build_mip_chain(tex: np.ndarray) -> list[np.ndarray]:
    tex = check_texture(tex)
    chain = [tex]
    while chain[-1].shape[0] > 1:
        chain.append(downsample_box(chain[-1]))
    return chain


def upsample2x(tex: np.ndarray) -> np.ndarray:
    """Double the resolution by bilinear lookup at the finer texel centers."""
    tex = np.asarray(tex, dtype=np.float64)
    R = tex.shape[0]
    centers = (np.arange(2 * R) + 0.5) / (2 * R)
    u, v = np.meshgrid(centers, centers)
    uv = np.stack([u.ravel(), v.ravel()], axis=1)
    out = bilinear_sample(tex, uv)
    return out.reshape(2 * R, 2 * R, tex.shape[-1])


def texel_centers(resolution: int) -> np.ndarray:
    """``(R, R, 2)`` uv coordinates of texel centers."""
    c = (np.arange(resolution) + 0.5) / resolution
    u, v = np.meshgrid(c, c)
    return np.stack([u, v], axis=-1)
