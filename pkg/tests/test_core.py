import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polartex.core import frames, imageio, mesh as meshmod, texture
from polartex.core.types import Camera, CaptureView, PointLight, TextureSet, TriMesh
from polartex.synth import make_plane, make_sphere


# --- texture sampling ------------------------------------------------------


def test_sample_at_texel_center_returns_texel():
    rng = np.random.default_rng(0)
    tex = rng.uniform(size=(8, 8, 3))
    j, i = 5, 2
    uv = np.array([[(i + 0.5) / 8, (j + 0.5) / 8]])
    np.testing.assert_allclose(texture.bilinear_sample(tex, uv)[0], tex[j, i], atol=1e-15)


def test_sample_constant_texture():
    tex = np.full((4, 4, 1), 0.3)
    uv = np.random.default_rng(1).uniform(size=(50, 2))
    np.testing.assert_allclose(texture.bilinear_sample(tex, uv), 0.3, atol=1e-15)


def test_sample_2x2_center():
    tex = np.array([[0.0, 1.0], [0.0, 1.0]])[..., None]
    assert texture.bilinear_sample(tex, [[0.5, 0.5]])[0, 0] == pytest.approx(0.5)


def test_sample_clamps_outside_texel_grid():
    tex = np.arange(4.0).reshape(2, 2, 1)
    assert texture.bilinear_sample(tex, [[0.0, 0.0]])[0, 0] == tex[0, 0, 0]
    assert texture.bilinear_sample(tex, [[1.0, 1.0]])[0, 0] == tex[1, 1, 0]
    # out-of-range uv is clamped to [0, 1]
    assert texture.bilinear_sample(tex, [[-3.0, 7.0]])[0, 0] == tex[1, 0, 0]


def test_splat_at_texel_center():
    g = np.zeros((4, 4, 1))
    texture.bilinear_splat(g, [[(1 + 0.5) / 4, (2 + 0.5) / 4]], [1.0])
    expected = np.zeros((4, 4, 1))
    expected[2, 1] = 1.0
    np.testing.assert_array_equal(g, expected)


def test_splat_2x2_center_quarter_each():
    g = np.zeros((2, 2, 1))
    texture.bilinear_splat(g, [[0.5, 0.5]], [1.0])
    np.testing.assert_allclose(g, 0.25)


def test_adjoint_identity_100_random_cases():
    rng = np.random.default_rng(2)
    for _ in range(100):
        R = int(rng.choice([1, 2, 4, 8, 16]))
        C = int(rng.choice([1, 3]))
        tex = rng.normal(size=(R, R, C))
        uv = rng.uniform(-0.1, 1.1, size=(1, 2))
        g = rng.normal(size=(1, C))
        splat = texture.bilinear_splat(np.zeros((R, R, C)), uv, g)
        lhs = np.sum(splat * tex, axis=(0, 1))
        rhs = g[0] * texture.bilinear_sample(tex, uv)[0]
        np.testing.assert_allclose(lhs, rhs, atol=1e-12, rtol=0)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(0, 5),
    st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=20),
    st.integers(0, 2**31 - 1),
)
def test_gather_scatter_adjoint_property(log_r, uvs, seed):
    R = 2 ** log_r
    rng = np.random.default_rng(seed)
    idx, w = texture.bilinear_taps(np.asarray(uvs), R)
    tex = rng.normal(size=(R, R, 3))
    vals = rng.normal(size=(len(uvs), 3))
    lhs = np.sum(texture.scatter(R, idx, w, vals) * tex)
    rhs = np.sum(vals * texture.gather(tex, idx, w))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-15)


def test_mip_chain_examples():
    chain = texture.build_mip_chain(np.full((4, 4, 3), 0.7))
    assert len(chain) == 3
    for lvl in chain:
        np.testing.assert_allclose(lvl, 0.7)
    two = np.array([[0.0, 0.0], [1.0, 1.0]])[..., None]
    assert texture.build_mip_chain(two)[-1][0, 0, 0] == pytest.approx(0.5)
    assert len(texture.build_mip_chain(np.zeros((512, 512, 1)))) == 10


def test_mip_chain_preserves_mean():
    tex = np.random.default_rng(3).uniform(size=(64, 64, 3))
    for lvl in texture.build_mip_chain(tex):
        np.testing.assert_allclose(lvl.mean(axis=(0, 1)), tex.mean(axis=(0, 1)), atol=1e-6)


def test_upsample_constant_stays_constant():
    up = texture.upsample2x(np.full((8, 8, 3), 0.25))
    assert up.shape == (16, 16, 3)
    np.testing.assert_allclose(up, 0.25, atol=1e-15)


def test_check_texture_rejects_bad_input():
    with pytest.raises(ValueError):
        texture.check_texture(np.zeros((3, 3, 1)))
    with pytest.raises(ValueError):
        texture.check_texture(np.zeros((4, 2, 1)))
    with pytest.raises(ValueError):
        texture.check_texture(np.full((4, 4, 1), np.nan))


# --- types -------------------------------------------------------------------


def test_texture_set_invariants():
    ts = TextureSet.initial(16)
    ts.check_invariants()
    np.testing.assert_array_equal(ts.diffuse_scale, np.ones(3))
    with pytest.raises(ValueError):
        TextureSet(np.zeros((8, 8, 3)), np.zeros((4, 4, 1)), np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))
    bad = ts.copy()
    bad.alpha = 1.5
    with pytest.raises(ValueError):
        bad.check_invariants()


def test_camera_validation_and_projection():
    cam = Camera.look_at([0, 0, 3], [0, 0, 0], 64, 48, fov_deg=60)
    cam.validate()
    px, py, z = cam.project(np.zeros((1, 3)))[0]
    assert (px, py) == pytest.approx((32.0, 24.0))
    assert z == pytest.approx(3.0)
    np.testing.assert_allclose(cam.center, [0, 0, 3], atol=1e-12)
    m = cam.cam_to_world_matrix()
    back = Camera.from_cam_to_world(m, cam.fx, cam.fy, cam.cx, cam.cy, 64, 48)
    np.testing.assert_allclose(back.rotation, cam.rotation, atol=1e-12)
    np.testing.assert_allclose(back.translation, cam.translation, atol=1e-12)
    with pytest.raises(ValueError):
        Camera(0.0, 1.0, 0, 0, 4, 4).validate()
    with pytest.raises(ValueError):
        Camera(1.0, 1.0, 0, 0, 4, 4, rotation=np.diag([1.0, 1.0, 2.0])).validate()


def test_light_defaults_and_validation():
    light = PointLight(np.zeros(3))
    np.testing.assert_array_equal(light.intensity, [10.0, 10.0, 10.0])
    with pytest.raises(ValueError):
        PointLight(np.zeros(3), 0.0)


def test_capture_view_dimension_check():
    cam = Camera.look_at([0, 0, 3], [0, 0, 0], 8, 6)
    CaptureView(np.zeros((6, 8, 3)), cam, "cross", np.ones((6, 8)))
    with pytest.raises(ValueError):
        CaptureView(np.zeros((6, 8, 3)), cam, "cross", np.ones((8, 6)))
    with pytest.raises(ValueError):
        CaptureView(np.zeros((6, 8, 3)), cam, "diagonal", np.ones((6, 8)))


# --- meshes ------------------------------------------------------------------


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_single_triangle(tmp_path):
    p = _write(tmp_path, "tri.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n")
    m = meshmod.load_obj(p)
    assert m.n_faces == 1 and m.n_vertices == 3
    np.testing.assert_allclose(m.normals, np.tile([0, 0, 1.0], (3, 1)), atol=1e-12)
    assert m.bbox_diagonal() == pytest.approx(1.0)


def _cube_obj(scale):
    v = [(x, y, z) for x in (0, scale) for y in (0, scale) for z in (0, scale)]
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    lines = [f"v {x} {y} {z}" for x, y, z in v]
    lines += ["vt 0 0", "vt 1 0", "vt 1 1", "vt 0 1"]
    for a, b, c, d in quads:
        lines.append(f"f {a+1}/1 {b+1}/2 {c+1}/3")
        lines.append(f"f {a+1}/1 {c+1}/3 {d+1}/4")
    return "\n".join(lines) + "\n"


def test_cube_scaled_to_unit_diagonal(tmp_path):
    m = meshmod.load_obj(_write(tmp_path, "cube.obj", _cube_obj(5.0)))
    assert m.bbox_diagonal() == pytest.approx(1.0)
    assert m.scale == pytest.approx(1.0 / (5.0 * np.sqrt(3)))


def test_obj_errors(tmp_path):
    quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf 1/1 2/2 3/3 4/4\n"
    with pytest.raises(meshmod.ObjError):
        meshmod.load_obj(_write(tmp_path, "quad.obj", quad))
    with pytest.raises(meshmod.ObjError):
        meshmod.load_obj(_write(tmp_path, "nouv.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
    with pytest.raises(meshmod.ObjError):
        meshmod.load_obj(_write(tmp_path, "bad.obj", "v 0 zero 0\n"))


def test_sphere_save_load_round_trip(tmp_path):
    s = make_sphere(8)
    meshmod.save_obj(s, tmp_path / "s.obj")
    m = meshmod.load_obj(tmp_path / "s.obj")
    np.testing.assert_array_equal(m.faces, s.faces)
    np.testing.assert_allclose(m.positions, s.positions, atol=1e-9)
    np.testing.assert_allclose(m.uvs, s.uvs, atol=1e-15)
    np.testing.assert_allclose(m.normals, s.normals, atol=1e-12)


def test_unit_normalization_idempotent(tmp_path):
    s = make_sphere(6)
    meshmod.save_obj(s, tmp_path / "s.obj")
    m = meshmod.load_obj(tmp_path / "s.obj")
    again = meshmod.normalize_unit_scale(m.copy())
    assert np.abs(again.positions - m.positions).max() < 1e-9


def test_tangents_identity_quad():
    q = make_plane(1.0, 1)
    np.testing.assert_allclose(q.tangents, np.tile([1.0, 0, 0], (4, 1)), atol=1e-6)
    np.testing.assert_allclose(q.bitangents, np.tile([0, 1.0, 0], (4, 1)), atol=1e-6)


def test_tangents_swapped_uv_quad():
    q = make_plane(1.0, 1)
    swapped = TriMesh(q.positions, q.faces, q.uvs[..., ::-1].copy())
    swapped.normals = q.normals
    meshmod.compute_tangent_frames(swapped)
    np.testing.assert_allclose(swapped.tangents, np.tile([0, 1.0, 0], (4, 1)), atol=1e-6)


def test_degenerate_uv_fallback_is_logged(caplog):
    q = make_plane(1.0, 1)
    flat = TriMesh(q.positions, q.faces, np.zeros_like(q.uvs))
    flat.normals = q.normals
    with caplog.at_level(logging.WARNING):
        meshmod.compute_tangent_frames(flat)
    assert "tangent" in caplog.text
    np.testing.assert_allclose(np.linalg.norm(flat.tangents, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.sum(flat.tangents * flat.normals, 1), 0.0, atol=1e-12)


@pytest.mark.parametrize("sub", [1, 2, 8, 32])
def test_sphere_frames_orthonormal(sub):
    s = make_sphere(sub)
    for v in (s.normals, s.tangents, s.bitangents):
        np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-6)
    assert np.abs(np.sum(s.tangents * s.normals, 1)).max() < 1e-6
    assert np.abs(np.sum(s.bitangents * s.normals, 1)).max() < 1e-6
    assert np.abs(np.sum(s.bitangents * s.tangents, 1)).max() < 1e-6


# --- image io ----------------------------------------------------------------


def test_pfm_round_trip(tmp_path):
    img = np.random.default_rng(4).uniform(size=(5, 7, 3)).astype(np.float32).astype(np.float64)
    imageio.write_pfm(tmp_path / "a.pfm", img)
    np.testing.assert_array_equal(imageio.read_pfm(tmp_path / "a.pfm"), img)
    gray = img[..., :1]
    imageio.write_pfm(tmp_path / "g.pfm", gray)
    np.testing.assert_array_equal(imageio.read_pfm(tmp_path / "g.pfm"), gray)
    header = (tmp_path / "a.pfm").read_bytes()[:12]
    assert header.startswith(b"PF\n7 5\n-1.0")


def test_pfm_stores_bottom_row_first(tmp_path):
    img = np.zeros((2, 1, 1))
    img[0] = 1.0  # top row
    imageio.write_pfm(tmp_path / "t.pfm", img)
    payload = np.frombuffer((tmp_path / "t.pfm").read_bytes()[-8:], "<f4")
    np.testing.assert_array_equal(payload, [0.0, 1.0])


def test_texture_round_trip(tmp_path):
    tex = np.random.default_rng(5).uniform(size=(4, 4, 3)).astype(np.float32).astype(np.float64)
    imageio.write_texture(tmp_path / "t.pfm", tex)
    np.testing.assert_array_equal(imageio.read_texture(tmp_path / "t.pfm"), tex)


def test_png_preview(tmp_path):
    from PIL import Image

    img = np.array([[[0.0, 0.5, 2.0]]])
    imageio.write_png(tmp_path / "p.png", img)
    px = np.asarray(Image.open(tmp_path / "p.png"))[0, 0]
    assert px[0] == 0 and px[2] == 255
    assert px[1] == round(255 * (1.055 * 0.5 ** (1 / 2.4) - 0.055))


# --- frames ------------------------------------------------------------------


def test_sharpness_constant_is_zero():
    assert frames.sharpness(np.full((8, 8, 3), 0.4)) == 0.0


def test_sharpness_checkerboard_vs_blur():
    from scipy import ndimage

    y, x = np.mgrid[:32, :32]
    board = ((x // 2 + y // 2) % 2).astype(float)
    blurred = ndimage.uniform_filter(board, 5, mode="nearest")
    assert frames.sharpness(board) > frames.sharpness(blurred)


def test_sharpness_single_pixel_by_hand():
    img = np.zeros((5, 5))
    img[2, 2] = 1.0
    resp = np.zeros((5, 5))
    for y in range(5):
        for x in range(5):
            def at(yy, xx):
                return img[min(max(yy, 0), 4), min(max(xx, 0), 4)]
            resp[y, x] = 4 * at(y, x) - at(y - 1, x) - at(y + 1, x) - at(y, x - 1) - at(y, x + 1)
    assert frames.sharpness(img) == pytest.approx(resp.var())
    # responses: 4 at the pixel, -1 at its four neighbours, mean 0
    assert frames.sharpness(img) == pytest.approx((16 + 4) / 25)


def test_sharpness_too_small():
    with pytest.raises(ValueError):
        frames.sharpness(np.zeros((2, 5)))


def test_select_sharpest_examples():
    same = [np.zeros((4, 4))] * 10
    assert frames.select_sharpest(same) == [0]
    assert frames.select_sharpest(list(range(20)), scores=list(range(20))) == [9, 19]
    assert len(frames.select_sharpest(list(range(13)), scores=np.ones(13))) == 2
    with pytest.raises(ValueError):
        frames.select_sharpest([])


def test_luminance_weights():
    assert frames.luminance(np.array([[[1.0, 1.0, 1.0]]]))[0, 0] == pytest.approx(1.0)
    assert frames.luminance(np.array([[[0.0, 1.0, 0.0]]]))[0, 0] == pytest.approx(0.7152)
