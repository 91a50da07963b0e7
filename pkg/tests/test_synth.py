import numpy as np
import pytest

from polartex.core.types import PointLight
from polartex.pipeline import observed_texels, prepare_views
from polartex.raster import rasterize, shade
from polartex.synth import (
    make_gt_textures,
    make_orbit,
    make_plane_scene,
    make_scene,
    make_sphere,
    read_textures,
    render_dataset,
    render_views,
    vignette,
    write_textures,
)


def _euler(mesh):
    key = np.round(mesh.positions * 1e9).astype(np.int64)
    _, inv = np.unique(key, axis=0, return_inverse=True)
    F = inv.ravel()[mesh.faces]
    F = F[(F[:, 0] != F[:, 1]) & (F[:, 1] != F[:, 2]) & (F[:, 0] != F[:, 2])]
    V = len(np.unique(F))
    edges = np.sort(np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return V - len(uniq) + len(F), counts


def test_sphere_topology():
    chi, edge_use = _euler(make_sphere(2))
    assert chi == 2
    assert np.all(edge_use == 2)  # closed 2-manifold


def test_sphere_normals_and_area():
    s = make_sphere(32)
    r = np.linalg.norm(s.positions, axis=1)
    np.testing.assert_allclose(s.normals, s.positions / r[:, None], atol=1e-6)
    a, b, c = (s.positions[s.faces[:, k]] for k in range(3))
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1).sum()
    radius = r.mean()
    assert abs(area / (4 * np.pi * radius ** 2) - 1) < 0.05
    with pytest.raises(ValueError):
        make_sphere(0)


def test_blob_displaced():
    b = make_sphere(16, displace=0.1, seed=2)
    r = np.linalg.norm(b.positions, axis=1)
    assert r.std() > 0


def test_textures_deterministic_and_valid():
    a = make_gt_textures(32, seed=5)
    b = make_gt_textures(32, seed=5)
    np.testing.assert_array_equal(a.kd, b.kd)
    np.testing.assert_array_equal(a.normal, b.normal)
    assert a.alpha == b.alpha
    a.check_invariants()
    assert a.kd.min() >= 0.1 - 1e-12 and a.kd.max() <= 0.9 + 1e-12
    assert a.ks.min() >= 0 and a.ks.max() <= 0.5
    assert np.all(a.ka == 0)
    assert 0.2 <= a.alpha <= 0.8
    c = make_gt_textures(32, seed=6)
    assert np.abs(a.kd - c.kd).max() > 0.05


def test_orbit_examples():
    (cam,) = make_orbit(1, radius=2.0, jitter_seed=None)
    np.testing.assert_allclose(cam.center, [0, 0, 2.0], atol=1e-12)
    cams = make_orbit(48, jitter_seed=3)
    dirs = []
    for c in cams:
        # optical axis passes through the origin
        axis = c.rotation.T @ np.array([0, 0, 1.0])
        to_origin = -c.center / np.linalg.norm(c.center)
        np.testing.assert_allclose(axis, to_origin, atol=1e-6)
        dirs.append(to_origin)
    dirs = np.array(dirs)
    cosines = dirs @ dirs.T
    np.fill_diagonal(cosines, -1)
    assert cosines.max() < 1 - 1e-9
    with pytest.raises(ValueError):
        make_orbit(3, radius=0.1)


def test_vignette_center_and_edges():
    (cam,) = make_orbit(1, jitter_seed=None, width=64, height=64)
    v = vignette(cam, 4)
    assert v.shape == (64, 64, 1)
    assert v.max() <= 1 and v[32, 32, 0] > 0.999 and v[0, 0, 0] < v[32, 32, 0]


def test_noise_free_dataset_reproduced_by_shade():
    sc = make_scene(n_views=3, image_size=48, texture_res=32, subdivisions=12, sigma=0.0)
    views = render_views(sc)
    for v in views:
        g = rasterize(sc.mesh, v.camera)
        img = shade(g, sc.textures, PointLight.at_camera(v.camera), sc.attenuation, v.polarization)
        np.testing.assert_array_equal(img.astype(np.float32).astype(np.float64), v.image)


def test_parallel_minus_cross_nonnegative():
    sc = make_scene(n_views=3, image_size=48, texture_res=32, subdivisions=12, sigma=0.0,
                    diffuse_scale=(1.0, 1.0, 1.0))
    views = render_views(sc)
    n = len(sc.cameras)
    for c, p in zip(views[:n], views[n:]):
        assert np.all(p.image - c.image >= -1e-6)
        assert np.any(p.image - c.image > 1e-3)


def test_noise_seeded():
    sc = make_scene(n_views=2, image_size=32, texture_res=16, subdivisions=8, sigma=0.01, seed=3)
    a = render_views(sc)
    b = render_views(sc)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.image, y.image)
    assert np.all(a[0].image >= 0)


def test_roles_and_names():
    sc = make_scene(n_views=4, image_size=16, texture_res=16, subdivisions=4)
    views = render_views(sc)
    assert [v.name for v in views][:4] == ["cross_000", "cross_001", "cross_002", "cross_003"]
    assert [v.role for v in views] == ["train"] * 3 + ["holdout"] + ["train"] * 3 + ["holdout"]


def test_dataset_files(tmp_path):
    sc = make_scene(n_views=3, image_size=16, texture_res=16, subdivisions=4)
    manifest = render_dataset(sc, tmp_path)
    assert manifest.exists()
    assert len(list((tmp_path / "images").glob("*.pfm"))) == 6
    assert (tmp_path / "mesh.obj").exists() and (tmp_path / "attenuation.pfm").exists()
    gt = read_textures(tmp_path / "gt")
    np.testing.assert_allclose(gt.kd, sc.textures.kd, rtol=1e-6)
    assert gt.alpha == sc.textures.alpha


def test_texture_io_roundtrip(tmp_path):
    t = make_gt_textures(16, seed=1)
    write_textures(t, tmp_path)
    assert (tmp_path / "normal.png").exists()
    back = read_textures(tmp_path)
    for name in ("kd", "ks", "ka", "normal"):
        np.testing.assert_allclose(getattr(back, name), getattr(t, name), rtol=1e-6, atol=1e-7)
    np.testing.assert_array_equal(back.diffuse_scale, t.diffuse_scale)


def test_front_hemisphere_coverage():
    sc = make_scene(n_views=24, image_size=128, texture_res=64, subdivisions=16, sigma=0.0)
    train = [v for v in render_views(sc, ("cross",)) if v.role == "train"]
    seen = observed_texels(prepare_views(train, sc.mesh, "cross"), 64)
    # texel centres mapped to the sphere; the orbit cap (180 degrees) faces +z
    uv = (np.arange(64) + 0.5) / 64
    U, V = np.meshgrid(uv, uv)
    theta = np.pi * (1 - V)
    phi = 2 * np.pi * U
    z = np.sin(theta) * np.cos(phi)
    front = z > 0.1
    assert seen[front].mean() >= 0.95


def test_plane_scene_fills_frame():
    sc = make_plane_scene(n_views=3, image_size=32, texture_res=16)
    g = rasterize(sc.mesh, sc.cameras[0])
    assert g.count / (32 * 32) > 0.9
