"""Scene manifests: a JSON file tying a mesh to its captured views.

Layout (paths relative to the manifest's directory)::

    {
      "mesh": "mesh.obj",
      "attenuation": "attenuation.pfm",        # optional, default all ones
      "color_affine": "color.json",             # optional; or {"cross": ..., "parallel": ...}
      "light_intensity": 10.0,                  # optional
      "views": [
        {"name": "cross_000", "image": "images/cross_000.pfm",
         "cam_to_world": [[...], [...], [...], [...]],
         "intrinsics": {"fx": ..., "fy": ..., "cx": ..., "cy": ..., "width": ..., "height": ...},
         "polarization": "cross", "role": "train"}
      ]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core.imageio import read_pfm
from ..core.mesh import load_obj
from ..core.types import DEFAULT_INTENSITY, Camera, CaptureView, TriMesh
from .color import ColorAffine, apply_color_correction


class ManifestError(ValueError):
    """Missing or malformed manifest content."""


@dataclass
class Scene:
    mesh: TriMesh
    views: list[CaptureView]
    attenuation: np.ndarray
    light_intensity: float = DEFAULT_INTENSITY
    root: Path = field(default_factory=Path)

    def select(self, polarization: str | None = None, role: str | None = None) -> list[CaptureView]:
        return [
            v for v in self.views
            if (polarization is None or v.polarization == polarization)
            and (role is None or v.role == role)
        ]

    def view(self, name: str) -> CaptureView:
        for v in self.views:
            if v.name == name:
                return v
        raise KeyError(f"no view named {name!r}")


def camera_to_json(cam: Camera) -> dict:
    return {
        "cam_to_world": cam.cam_to_world_matrix().tolist(),
        "intrinsics": {
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
        },
    }


def camera_from_json(entry: dict) -> Camera:
    try:
        k = entry["intrinsics"]
        cam = Camera.from_cam_to_world(
            entry["cam_to_world"], k["fx"], k["fy"], k["cx"], k["cy"], k["width"], k["height"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"bad camera entry: {exc}") from exc
    cam.validate()
    return cam


def _resolve(root: Path, rel) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else root / p


def _load_affines(root: Path, entry) -> dict:
    if entry is None:
        return {}
    if isinstance(entry, str):
        aff = ColorAffine.load(_resolve(root, entry))
        return {"cross": aff, "parallel": aff}
    if isinstance(entry, dict):
        unknown = set(entry) - {"cross", "parallel"}
        if unknown:
            raise ManifestError(f"color_affine keys must be cross/parallel, got {sorted(unknown)}")
        return {k: ColorAffine.load(_resolve(root, v)) for k, v in entry.items()}
    raise ManifestError("color_affine must be a path or a {polarization: path} mapping")


def load_scene(path, normalize_mesh: bool = True) -> Scene:
    """Read a manifest, its mesh, images and calibration files.

    Images are color-corrected on load.  When the mesh is rescaled to unit
    size the camera positions are scaled by the same factor.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("mesh", "views"):
        if key not in doc:
            raise ManifestError(f"{path}: missing key {key!r}")

    mesh = load_obj(_resolve(root, doc["mesh"]), normalize=normalize_mesh)
    affines = _load_affines(root, doc.get("color_affine"))
    intensity = float(doc.get("light_intensity", DEFAULT_INTENSITY))

    views = []
    att_path = doc.get("attenuation")
    attenuation = None
    for i, entry in enumerate(doc["views"]):
        cam = camera_from_json(entry)
        cam.translation = cam.translation * mesh.scale
        if attenuation is None:
            if att_path is not None:
                attenuation = read_pfm(_resolve(root, att_path))
            else:
                attenuation = np.ones(cam.shape + (1,))
        if "image" not in entry or "polarization" not in entry:
            raise ManifestError(f"view {i}: 'image' and 'polarization' are required")
        image = read_pfm(_resolve(root, entry["image"]))
        pol = entry["polarization"]
        if pol in affines:
            image = apply_color_correction(image, affines[pol])
        try:
            views.append(CaptureView(
                image, cam, pol, attenuation,
                role=entry.get("role", "train"), name=entry.get("name", f"view_{i:03d}"),
            ))
        except ValueError as exc:
            raise ManifestError(str(exc)) from exc
    if attenuation is None:
        attenuation = np.ones((1, 1, 1))
    return Scene(mesh, views, attenuation, intensity, root)


def write_manifest(path, mesh_path, views: list[dict], attenuation_path=None,
                   color_affine=None, light_intensity: float = DEFAULT_INTENSITY) -> None:
    """``views`` entries: name, image (relative path), camera, polarization, role."""
    path = Path(path)
    doc = {"mesh": str(mesh_path)}
    if attenuation_path is not None:
        doc["attenuation"] = str(attenuation_path)
    if color_affine is not None:
        doc["color_affine"] = color_affine
    doc["light_intensity"] = light_intensity
    doc["views"] = [
        {
            "name": v["name"],
            "image": str(v["image"]),
            **camera_to_json(v["camera"]),
            "polarization": v["polarization"],
            "role": v.get("role", "train"),
        }
        for v in views
    ]
    path.write_text(json.dumps(doc, indent=1))
