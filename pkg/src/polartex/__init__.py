"""Reflectance texture fitting from cross- and parallel-polarized flash
captures of a known mesh."""

from .core.types import Camera, CaptureView, PointLight, TextureSet, TriMesh

__version__ = "0.1.0"

__all__ = ["Camera", "CaptureView", "PointLight", "TextureSet", "TriMesh", "__version__"]
