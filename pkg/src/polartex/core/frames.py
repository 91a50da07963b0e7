"""Sharpness-based frame selection for video captures."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import ndimage

LUMA = np.array([0.2126, 0.7152, 0.0722])
LAPLACIAN = np.array([[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]])


def luminance(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[..., 0]
    return img[..., :3] @ LUMA


def sharpness(image: np.ndarray) -> float:
    """Variance of the 3x3 Laplacian response with replicated borders."""
    gray = luminance(image)
    if gray.shape[0] < 3 or gray.shape[1] < 3:
        raise ValueError(f"image {gray.shape} is smaller than 3x3")
    response = ndimage.correlate(gray, LAPLACIAN, mode="nearest")
    return float(response.var())


def select_sharpest(frames: Sequence, window: int = 10, scores: Sequence[float] | None = None) -> list[int]:
    """Index of the sharpest frame in each consecutive ``window``.

    ``scores`` may be passed to skip recomputing sharpness.  Ties go to the
    lowest index; a trailing partial window still yields one selection.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(frames) == 0:
        raise ValueError("no frames to select from")
    if scores is None:
        scores = [sharpness(f) for f in frames]
    scores = np.asarray(scores, dtype=np.float64)
    picks = []
    for start in range(0, len(scores), window):
        chunk = scores[start:start + window]
        picks.append(start + int(np.argmax(chunk)))
    return picks
