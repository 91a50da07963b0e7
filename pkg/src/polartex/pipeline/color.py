"""Affine color correction fitted from color-checker patches."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class RankDeficientError(ValueError):
    """Patch colors do not span RGB, so the affine map is undetermined."""


@dataclass
class ColorAffine:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64).reshape(3, 3)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("color affine must be finite")

    @classmethod
    def identity(cls) -> "ColorAffine":
        return cls(np.eye(3), np.zeros(3))

    def to_json(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "ColorAffine":
        return cls(doc["A"], doc["b"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "ColorAffine":
        return cls.from_json(json.loads(Path(path).read_text()))


def fit_color_affine(measured, reference, rcond: float = 1e-10) -> ColorAffine:
    """Least-squares ``A, b`` with ``A @ m + b ~ r`` via the normal equations.

    ``measured`` and ``reference`` are ``(N, 3)`` mean patch colors, N >= 4.
    """
    m = np.asarray(measured, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if m.shape != r.shape or m.ndim != 2 or m.shape[1] != 3:
        raise ValueError(f"expected matching (N, 3) patch arrays, got {m.shape} and {r.shape}")
    if len(m) < 4:
        raise RankDeficientError(f"need at least 4 patches, got {len(m)}")
    X = np.hstack([m, np.ones((len(m), 1))])
    gram = X.T @ X
    s = np.linalg.svd(gram, compute_uv=False)
    if s[-1] <= rcond * s[0]:
        raise RankDeficientError(
            "patch colors are rank deficient (e.g. grayscale only); cannot fit a full affine map"
        )
    theta = np.linalg.solve(gram, X.T @ r)  # (4, 3)
    return ColorAffine(theta[:3].T, theta[3])


def apply_color_correction(image, affine: ColorAffine) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.shape[-1] != 3:
        raise ValueError(f"color correction needs 3 channels, got {img.shape[-1]}")
    out = img @ affine.A.T + affine.b
    return np.maximum(out, 0.0)


def read_patches(path) -> np.ndarray:
    """Whitespace- or comma-separated RGB triples, one per line; ``#``
    starts a comment."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].replace(",", " ").strip()
        if not line:
            continue
        vals = line.split()
        if len(vals) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 values, got {len(vals)}")
        rows.append([float(v) for v in vals])
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)
