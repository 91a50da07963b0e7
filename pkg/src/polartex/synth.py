"""Synthetic ground-truth scenes: the recovery oracle.

Everything here is seeded and deterministic.  The default geometry is a
UV sphere with poles on the y axis and the texture seam at the back
(u = 0 / 1 faces -z), so the front of the sphere (+z) sits at u = 0.5.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core.mesh import compute_tangent_frames, compute_vertex_normals, normalize_unit_scale
from .core.types import Camera, CaptureView, PointLight, TextureSet, TriMesh

log = logging.getLogger(__name__)

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def _sphere_point(theta, phi):
    return np.stack(
        [np.sin(theta) * np.sin(phi), np.cos(theta), np.sin(theta) * np.cos(phi)], axis=-1
    )


def make_sphere(subdivisions: int = 32, displace: float = 0.0, seed: int = 0) -> TriMesh:
    """UV sphere with ``subdivisions + 1`` latitude bands and twice as many
    longitude segments, scaled to unit bounding-box diagonal.

    Pole vertices are duplicated per longitude segment (one copy per pole
    triangle, uv at the segment midpoint) so every pole triangle has a
    non-degenerate uv layout and a usable tangent.  The seam column is
    duplicated too; welding positions recovers a closed genus-0 surface.

    ``displace > 0`` gives a "blob": radius modulated by smooth noise, with
    normals recomputed from the faces.
    """
    if subdivisions < 1:
        raise ValueError("subdivisions must be >= 1")
    n_lat = subdivisions + 1
    n_lon = 2 * n_lat
    positions, uvs_v = [], []
    ring_index = []

    # north pole copies
    ring = []
    for k in range(n_lon):
        ring.append(len(positions))
        positions.append((0.0, 1.0, 0.0))
        uvs_v.append(((k + 0.5) / n_lon, 1.0))
    ring_index.append(ring)
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        ring = []
        for j in range(n_lon + 1):
            u = j / n_lon
            phi = 2 * np.pi * (u - 0.5)
            ring.append(len(positions))
            positions.append(tuple(_sphere_point(theta, phi)))
            uvs_v.append((u, 1.0 - i / n_lat))
        ring_index.append(ring)
    ring = []
    for k in range(n_lon):
        ring.append(len(positions))
        positions.append((0.0, -1.0, 0.0))
        uvs_v.append(((k + 0.5) / n_lon, 0.0))
    ring_index.append(ring)

    faces = []
    for k in range(n_lon):
        faces.append((ring_index[0][k], ring_index[1][k], ring_index[1][k + 1]))
    for i in range(1, n_lat - 1):
        top, bot = ring_index[i], ring_index[i + 1]
        for j in range(n_lon):
            a, b, c, d = top[j], top[j + 1], bot[j], bot[j + 1]
            faces.append((a, c, d))
            faces.append((a, d, b))
    last = ring_index[n_lat - 1]
    for k in range(n_lon):
        faces.append((last[k], ring_index[n_lat][k], last[k + 1]))

    P = np.asarray(positions, dtype=np.float64)
    F = np.asarray(faces, dtype=np.int64)
    UVv = np.asarray(uvs_v, dtype=np.float64)
    mesh = TriMesh(P, F, UVv[F])
    if displace > 0:
        rng = np.random.default_rng(seed)
        dirs = P / np.linalg.norm(P, axis=1, keepdims=True)
        freqs = rng.normal(size=(6, 3)) * 2.0
        phases = rng.uniform(0, 2 * np.pi, 6)
        bump = np.sin(dirs @ freqs.T + phases).mean(axis=1)
        mesh.positions = dirs * (1.0 + displace * bump)[:, None]
        mesh.normals = compute_vertex_normals(_welded_normals_mesh(mesh))
    else:
        mesh.normals = P / np.linalg.norm(P, axis=1, keepdims=True)
    normalize_unit_scale(mesh)
    mesh.scale = 1.0
    return compute_tangent_frames(mesh)


def _welded_normals_mesh(mesh: TriMesh) -> TriMesh:
    """Same mesh with seam/pole duplicates sharing indices, so area-weighted
    normals do not crease at the seam.  Vertex count is unchanged."""
    key = np.round(mesh.positions * 1e9).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    rep = first[inverse.ravel()]
    return TriMesh(mesh.positions, rep[mesh.faces], mesh.uvs)


def make_plane(size: float = 1.0, segments: int = 8) -> TriMesh:
    """Square in the z = 0 plane facing +z, uv = identity map of the square."""
    n = segments
    g = np.linspace(0.0, 1.0, n + 1)
    u, v = np.meshgrid(g, g)
    P = np.stack([(u - 0.5) * size, (v - 0.5) * size, np.zeros_like(u)], -1).reshape(-1, 3)
    UVv = np.stack([u, v], -1).reshape(-1, 2)
    faces = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 1, a + n + 2
            faces.append((a, b, d))
            faces.append((a, d, c))
    F = np.asarray(faces)
    mesh = TriMesh(P, F, UVv[F])
    mesh.normals = np.tile([0.0, 0.0, 1.0], (len(P), 1))
    return compute_tangent_frames(mesh)


def _smooth_noise(rng, resolution: int, cells: int) -> np.ndarray:
    grid = rng.uniform(0.0, 1.0, size=(cells, cells))
    out = ndimage.zoom(grid, resolution / cells, order=3, mode="grid-mirror", grid_mode=True)
    return out[:resolution, :resolution]


def make_gt_textures(
    resolution: int,
    seed: int = 0,
    diffuse_scale=(0.9, 1.0, 1.1),
    specular: bool = True,
    bumps: bool = True,
) -> TextureSet:
    """Procedural ground truth: value-noise albedo in [0.1, 0.9], sparse
    specular blobs in [0, 0.5], a gentle bump normal map, zero ambient."""
    R = resolution
    rng = np.random.default_rng(seed)
    kd = np.empty((R, R, 3))
    for c in range(3):
        n = 0.7 * _smooth_noise(rng, R, 6) + 0.3 * _smooth_noise(rng, R, 14)
        n = (n - n.min()) / max(n.max() - n.min(), 1e-12)
        kd[..., c] = 0.1 + 0.8 * n

    ks = np.zeros((R, R))
    uvc = (np.arange(R) + 0.5) / R
    U, V = np.meshgrid(uvc, uvc)
    n_blobs = 14
    centers = rng.uniform(0.1, 0.9, size=(n_blobs, 2))
    radii = rng.uniform(0.03, 0.08, size=n_blobs)
    amps = rng.uniform(0.2, 0.5, size=n_blobs)
    for (cu, cv), r, a in zip(centers, radii, amps):
        ks += a * np.exp(-((U - cu) ** 2 + (V - cv) ** 2) / (2 * r * r))
    ks = np.clip(ks, 0.0, 0.5)
    if not specular:
        ks[:] = 0.0

    height = _smooth_noise(rng, R, 10)
    gy, gx = np.gradient(height)
    xy = np.stack([-gx, -gy], -1)
    peak = np.abs(xy).max()
    xy *= 0.3 / peak if peak > 0 else 0.0
    normal = np.concatenate([xy, np.ones((R, R, 1))], -1)
    if not bumps:
        normal[..., :2] = 0.0
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)

    alpha = float(rng.uniform(0.2, 0.8))
    return TextureSet(
        kd=kd, ks=ks[..., None], ka=np.zeros((R, R, 3)), normal=normal,
        alpha=alpha, diffuse_scale=np.asarray(diffuse_scale, dtype=np.float64),
    )


def orbit_directions(n_views: int, cap_deg: float = 180.0, jitter_deg: float = 0.0, seed: int = 0) -> np.ndarray:
    """Fibonacci spiral on a spherical cap around +z; the first direction
    is the +z axis itself (before jitter)."""
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    i = np.arange(n_views)
    cap = np.radians(cap_deg)
    if n_views == 1:
        z = np.ones(1)
    else:
        z = 1.0 - (1.0 - np.cos(cap)) * i / (n_views - 1)
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * GOLDEN_ANGLE
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], 1)
    if jitter_deg > 0:
        rng = np.random.default_rng(seed)
        dirs = dirs + rng.normal(scale=np.radians(jitter_deg), size=dirs.shape)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs


def make_orbit(
    n_views: int,
    radius: float = 1.5,
    jitter_seed: int | None = 0,
    *,
    width: int = 512,
    height: int = 512,
    fov_deg: float = 40.0,
    cap_deg: float = 180.0,
    jitter_deg: float = 3.0,
) -> list[Camera]:
    """Cameras looking at the origin from a jittered spherical cap.

    ``jitter_seed=None`` disables jitter.  The co-located light of each view
    is ``PointLight.at_camera(camera)``.
    """
    if radius <= 0.5:
        raise ValueError("orbit radius must exceed the unit-scale object radius")
    jit = 0.0 if jitter_seed is None else jitter_deg
    dirs = orbit_directions(n_views, cap_deg, jit, 0 if jitter_seed is None else jitter_seed)
    return [
        Camera.look_at(radius * d, np.zeros(3), width, height, fov_deg=fov_deg)
        for d in dirs
    ]


def vignette(camera: Camera, power: float = 4.0) -> np.ndarray:
    """cos^power of each pixel ray's angle to the optical axis, (H, W, 1)."""
    xs = (np.arange(camera.width) + 0.5 - camera.cx) / camera.fx
    ys = (np.arange(camera.height) + 0.5 - camera.cy) / camera.fy
    gx, gy = np.meshgrid(xs, ys)
    cos = 1.0 / np.sqrt(1.0 + gx * gx + gy * gy)
    return (cos ** power)[..., None]


@dataclass
class SynthScene:
    mesh: TriMesh
    textures: TextureSet
    cameras: list[Camera]
    attenuation: np.ndarray
    sigma: float = 0.002
    seed: int = 0
    light_intensity: float = 10.0
    holdout_per_polarization: int = 1
    name: str = "sphere"


def make_scene(
    n_views: int = 48,
    image_size: int = 512,
    texture_res: int = 256,
    seed: int = 0,
    sigma: float = 0.002,
    vignette_power: float | None = 4.0,
    specular: bool = True,
    bumps: bool = True,
    diffuse_scale=(0.9, 1.0, 1.1),
    alpha: float | None = None,
    radius: float = 1.5,
    fov_deg: float = 40.0,
    cap_deg: float = 180.0,
    subdivisions: int = 32,
    displace: float = 0.0,
) -> SynthScene:
    """Sphere (or blob) scene with procedural ground truth.  ``alpha=None``
    keeps the seeded random draw."""
    mesh = make_sphere(subdivisions, displace=displace, seed=seed)
    tex = make_gt_textures(texture_res, seed, diffuse_scale, specular, bumps)
    if alpha is not None:
        tex.alpha = float(alpha)
    cams = make_orbit(n_views, radius, seed, width=image_size, height=image_size,
                      fov_deg=fov_deg, cap_deg=cap_deg)
    att = vignette(cams[0], vignette_power) if vignette_power else np.ones((image_size, image_size, 1))
    return SynthScene(mesh, tex, cams, att, sigma, seed)


def make_plane_scene(
    n_views: int = 24,
    image_size: int = 256,
    texture_res: int = 128,
    seed: int = 0,
    sigma: float = 0.002,
    vignette_power: float | None = 4.0,
    distance: float = 1.0,
    cap_deg: float = 30.0,
    size: float = 2.0,
) -> SynthScene:
    """Textured plane filling the frame of cameras on a cap in front of it,
    the data an attenuation calibration needs."""
    mesh = make_plane(size, 8)
    tex = make_gt_textures(texture_res, seed, (1.0, 1.0, 1.0), specular=False, bumps=False)
    cams = make_orbit(n_views, distance, seed, width=image_size, height=image_size,
                      cap_deg=cap_deg)
    att = vignette(cams[0], vignette_power) if vignette_power else np.ones((image_size, image_size, 1))
    return SynthScene(mesh, tex, cams, att, sigma, seed, name="plane")


def render_views(scene: SynthScene, modes=("cross", "parallel")) -> list[CaptureView]:
    """Render every camera in every mode, add seeded Gaussian noise and clamp
    at 0.  Pixel values are rounded to float32, the on-disk precision.  The
    highest-index views of each polarization are held out."""
    from .raster import shade, rasterize

    rng = np.random.default_rng(scene.seed + 1)
    n = len(scene.cameras)
    views = []
    for mode in modes:
        for i, cam in enumerate(scene.cameras):
            gbuf = rasterize(scene.mesh, cam)
            light = PointLight.at_camera(cam, scene.light_intensity)
            img = shade(gbuf, scene.textures, light, scene.attenuation, mode)
            if scene.sigma > 0:
                img = np.maximum(img + rng.normal(scale=scene.sigma, size=img.shape), 0.0)
            img = img.astype(np.float32).astype(np.float64)
            role = "holdout" if i >= n - scene.holdout_per_polarization else "train"
            views.append(CaptureView(img, cam, mode, scene.attenuation, role, f"{mode}_{i:03d}"))
    return views


def write_textures(tex: TextureSet, out_dir, previews: bool = True) -> None:
    """Maps as PFM (+ PNG previews) and the scalars in ``params.json``."""
    import json

    from .core.imageio import write_texture, write_texture_png

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in TextureSet.MAPS:
        data = getattr(tex, name)
        write_texture(out / f"{name}.pfm", data)
        if previews:
            prev = 0.5 * (data + 1.0) if name == "normal" else data
            write_texture_png(out / f"{name}.png", prev)
    (out / "params.json").write_text(json.dumps(
        {"alpha": tex.alpha, "diffuse_scale": tex.diffuse_scale.tolist()}, indent=1))


def read_textures(in_dir) -> TextureSet:
    import json

    from .core.imageio import read_texture

    d = Path(in_dir)
    params = json.loads((d / "params.json").read_text())
    maps = {name: read_texture(d / f"{name}.pfm") for name in TextureSet.MAPS}
    return TextureSet(**maps, alpha=params["alpha"], diffuse_scale=params["diffuse_scale"])


def render_dataset(scene: SynthScene, out_dir, modes=("cross", "parallel")) -> Path:
    """Write mesh, images, attenuation map, ground truth and a manifest.
    Returns the manifest path."""
    from .core.imageio import write_pfm
    from .core.mesh import save_obj
    from .pipeline.scene import write_manifest

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    save_obj(scene.mesh, out / "mesh.obj")
    write_pfm(out / "attenuation.pfm", scene.attenuation)
    write_textures(scene.textures, out / "gt")
    entries = []
    for v in render_views(scene, modes):
        rel = Path("images") / f"{v.name}.pfm"
        write_pfm(out / rel, v.image)
        entries.append({"name": v.name, "image": rel, "camera": v.camera,
                        "polarization": v.polarization, "role": v.role})
    manifest = out / "manifest.json"
    write_manifest(manifest, "mesh.obj", entries, "attenuation.pfm",
                   light_intensity=scene.light_intensity)
    log.info("wrote %d views to %s", len(entries), out)
    return manifest
