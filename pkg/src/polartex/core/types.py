"""Shared data types: cameras, lights, meshes, texture sets and views."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .texture import check_texture

Polarization = Literal["cross", "parallel"]
Role = Literal["train", "holdout"]

F0 = 0.04
DEFAULT_INTENSITY = 10.0


@dataclass
class Camera:
    """Pinhole camera, OpenCV axes (x right, y down, z forward).

    ``rotation`` and ``translation`` map world points into camera space:
    ``x_cam = rotation @ x_world + translation``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)

    def validate(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"degenerate camera: fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError("camera image size must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"camera rotation is not orthonormal (error {err:.2e})")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def project(self, points: np.ndarray) -> np.ndarray:
        """World points -> ``(N, 3)`` array of (pixel x, pixel y, depth z)."""
        pc = self.world_to_camera(np.asarray(points, dtype=np.float64))
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            px = self.fx * pc[:, 0] / z + self.cx
            py = self.fy * pc[:, 1] / z + self.cy
        return np.stack([px, py, z], axis=1)

    def pixel_rays(self) -> np.ndarray:
        """Unnormalized world-space ray directions through pixel centers,
        shaped ``(H, W, 3)``."""
        xs = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        ys = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        gx, gy = np.meshgrid(xs, ys)
        d_cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
        return d_cam @ self.rotation

    def cam_to_world_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.T
        m[:3, 3] = self.center
        return m

    @classmethod
    def from_cam_to_world(cls, matrix, fx, fy, cx, cy, width, height) -> "Camera":
        m = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
        rot = m[:3, :3].T
        return cls(fx, fy, cx, cy, width, height, rot, -rot @ m[:3, 3])

    @classmethod
    def look_at(cls, eye, target, width, height, fov_deg=40.0, up=(0.0, 1.0, 0.0)) -> "Camera":
        """Camera at ``eye`` looking at ``target``; ``fov_deg`` is the
        horizontal field of view."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        if abs(np.dot(fwd, up)) > 0.999:
            up = np.array([1.0, 0.0, 0.0]) if abs(fwd[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
        # image y points down, so the camera's y axis is -up
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height, rot, -rot @ eye)


@dataclass
class PointLight:
    position: np.ndarray
    intensity: np.ndarray = field(default_factory=lambda: np.full(3, DEFAULT_INTENSITY))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.intensity = np.broadcast_to(
            np.asarray(self.intensity, dtype=np.float64), (3,)
        ).copy()
        if np.any(self.intensity <= 0):
            raise ValueError("light intensity must be positive")

    @classmethod
    def at_camera(cls, camera: Camera, intensity=DEFAULT_INTENSITY) -> "PointLight":
        return cls(camera.center, intensity)


@dataclass
class TriMesh:
    """Triangle mesh with per-corner UVs and per-vertex tangent frames.

    ``uvs`` is ``(F, 3, 2)``; ``normals``, ``tangents`` and ``bitangents``
    are ``(V, 3)``.  ``scale`` records the factor applied by unit-scale
    normalization so callers can rescale camera poses to match.
    """

    positions: np.ndarray
    faces: np.ndarray
    uvs: np.ndarray
    normals: np.ndarray | None = None
    tangents: np.ndarray | None = None
    bitangents: np.ndarray | None = None
    scale: float = 1.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.uvs = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 3, 2)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.positions)):
            raise ValueError("face index out of range")
        if len(self.uvs) != len(self.faces):
            raise ValueError("need one uv triple per face")

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.positions.max(0) - self.positions.min(0)))

    def face_normals(self) -> np.ndarray:
        """Unnormalized face normals (length = twice the face area)."""
        p = self.positions[self.faces]
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    def copy(self) -> "TriMesh":
        def c(a):
            return None if a is None else a.copy()

        return replace(
            self,
            positions=self.positions.copy(),
            faces=self.faces.copy(),
            uvs=self.uvs.copy(),
            normals=c(self.normals),
            tangents=c(self.tangents),
            bitangents=c(self.bitangents),
        )


@dataclass
class TextureSet:
    """The optimization unknowns.

    ``normal`` stores tangent-space vectors directly (flat = (0, 0, 1));
    texels need not be unit length since shading renormalizes.
    """

    kd: np.ndarray
    ks: np.ndarray
    ka: np.ndarray
    normal: np.ndarray
    alpha: float = 0.5
    diffuse_scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    MAPS = ("kd", "ks", "ka", "normal")

    def __post_init__(self):
        self.kd = check_texture(self.kd, "kd")
        self.ks = check_texture(self.ks, "ks")
        self.ka = check_texture(self.ka, "ka")
        self.normal = check_texture(self.normal, "normal")
        self.alpha = float(self.alpha)
        self.diffuse_scale = np.asarray(self.diffuse_scale, dtype=np.float64).reshape(3).copy()
        res = {m.shape[0] for m in (self.kd, self.ks, self.ka, self.normal)}
        if len(res) != 1:
            raise ValueError(f"texture resolutions differ: {sorted(res)}")
        for name, ch in (("kd", 3), ("ks", 1), ("ka", 3), ("normal", 3)):
            if getattr(self, name).shape[2] != ch:
                raise ValueError(f"{name} must have {ch} channel(s)")

    @property
    def resolution(self) -> int:
        return self.kd.shape[0]

    @classmethod
    def initial(cls, resolution: int, kd=0.5, alpha=0.5) -> "TextureSet":
        R = resolution
        normal = np.zeros((R, R, 3))
        normal[..., 2] = 1.0
        return cls(
            kd=np.full((R, R, 3), kd, dtype=np.float64),
            ks=np.zeros((R, R, 1)),
            ka=np.zeros((R, R, 3)),
            normal=normal,
            alpha=alpha,
        )

    def copy(self) -> "TextureSet":
        return TextureSet(
            self.kd.copy(), self.ks.copy(), self.ka.copy(), self.normal.copy(),
            self.alpha, self.diffuse_scale.copy(),
        )

    def check_invariants(self, atol: float = 0.0) -> None:
        for name in ("kd", "ks", "ka"):
            if getattr(self, name).min() < -atol:
                raise ValueError(f"{name} has negative texels")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha {self.alpha} outside [0, 1]")
        if np.any(self.diffuse_scale <= 0):
            raise ValueError("diffuse_scale must be positive")
        if np.any(np.linalg.norm(self.normal, axis=-1) == 0):
            raise ValueError("zero-length normal texel")


@dataclass
class CaptureView:
    image: np.ndarray
    camera: Camera
    polarization: Polarization
    attenuation: np.ndarray
    role: Role = "train"
    name: str = ""

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim == 2:
            self.image = self.image[..., None]
        att = np.asarray(self.attenuation, dtype=np.float64)
        if att.ndim == 2:
            att = att[..., None]
        self.attenuation = att
        if self.polarization not in ("cross", "parallel"):
            raise ValueError(f"unknown polarization {self.polarization!r}")
        if self.role not in ("train", "holdout"):
            raise ValueError(f"unknown role {self.role!r}")
        shape = self.camera.shape
        if self.image.shape[:2] != shape or self.attenuation.shape[:2] != shape:
            raise ValueError(
                f"view {self.name!r}: image {self.image.shape[:2]}, camera {shape} and "
                f"attenuation {self.attenuation.shape[:2]} dimensions disagree"
            )
