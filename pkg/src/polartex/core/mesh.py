"""Wavefront OBJ I/O and tangent-frame construction."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .types import TriMesh

log = logging.getLogger(__name__)


class ObjError(ValueError):
    pass


def _normalize(v: np.ndarray, eps: float = 1e-20) -> tuple[np.ndarray, np.ndarray]:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    ok = n[..., 0] > eps
    return np.where(n > eps, v / np.maximum(n, eps), 0.0), ok


def _any_orthogonal(n: np.ndarray) -> np.ndarray:
    helper = np.where(np.abs(n[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    t = np.cross(n, helper)
    return t / np.linalg.norm(t, axis=1, keepdims=True)


def compute_vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted average of incident face normals."""
    fn = mesh.face_normals()
    acc = np.zeros_like(mesh.positions)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], fn)
    normals, ok = _normalize(acc)
    if not ok.all():
        log.warning("%d isolated or degenerate vertices get +z normals", (~ok).sum())
        normals[~ok] = [0.0, 0.0, 1.0]
    return normals


def compute_tangent_frames(mesh: TriMesh) -> TriMesh:
    """Fill ``tangents``/``bitangents`` from per-face UV derivatives.

    Faces with degenerate UVs contribute nothing.  The result is an
    orthonormal frame per vertex: t is Gram-Schmidt orthogonalized against n,
    b against n and t, keeping the sign the UV layout implies.
    """
    if mesh.normals is None:
        mesh.normals = compute_vertex_normals(mesh)
    p = mesh.positions[mesh.faces]
    uv = mesh.uvs
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    d1 = uv[:, 1] - uv[:, 0]
    d2 = uv[:, 2] - uv[:, 0]
    det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
    good = np.abs(det) > 1e-14
    inv = np.where(good, 1.0 / np.where(good, det, 1.0), 0.0)[:, None]
    T = (e1 * d2[:, 1:2] - e2 * d1[:, 1:2]) * inv
    B = (e2 * d1[:, 0:1] - e1 * d2[:, 0:1]) * inv

    tacc = np.zeros_like(mesh.positions)
    bacc = np.zeros_like(mesh.positions)
    for k in range(3):
        np.add.at(tacc, mesh.faces[:, k], T)
        np.add.at(bacc, mesh.faces[:, k], B)

    n = mesh.normals
    t = tacc - n * np.sum(n * tacc, axis=1, keepdims=True)
    t, ok = _normalize(t, eps=1e-12)
    if not ok.all():
        log.warning(
            "%d vertices without usable UV derivatives; using an arbitrary tangent",
            int((~ok).sum()),
        )
        t[~ok] = _any_orthogonal(n[~ok])
    b = bacc - n * np.sum(n * bacc, axis=1, keepdims=True)
    b = b - t * np.sum(t * b, axis=1, keepdims=True)
    b, okb = _normalize(b, eps=1e-12)
    fallback = np.cross(n, t)
    sign = np.where(np.sum(bacc * fallback, axis=1) < 0, -1.0, 1.0)[:, None]
    b[~okb] = (sign * fallback)[~okb]
    mesh.tangents = t
    mesh.bitangents = b
    return mesh


def normalize_unit_scale(mesh: TriMesh) -> TriMesh:
    """Scale positions about the origin so the bbox diagonal is 1."""
    diag = mesh.bbox_diagonal()
    if diag <= 0:
        raise ObjError("mesh has zero extent")
    s = 1.0 / diag
    if abs(s - 1.0) > 1e-12:
        mesh.positions = mesh.positions * s
    mesh.scale = mesh.scale * s
    return mesh


def load_obj(path, normalize: bool = True) -> TriMesh:
    """Read the triangle subset of OBJ (``v``, ``vt``, ``vn``, ``f``).

    Vertex normals come from ``vn`` where faces reference them, otherwise
    from area-weighted face normals.
    """
    path = Path(path)
    positions, texcoords, vnormals = [], [], []
    faces, face_uv, face_vn = [], [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            tag = tokens[0]
            try:
                if tag == "v":
                    positions.append([float(x) for x in tokens[1:4]])
                elif tag == "vt":
                    texcoords.append([float(x) for x in tokens[1:3]])
                elif tag == "vn":
                    vnormals.append([float(x) for x in tokens[1:4]])
                elif tag == "f":
                    corners = tokens[1:]
                    if len(corners) != 3:
                        raise ObjError(
                            f"{path}:{lineno}: non-triangle face with {len(corners)} corners"
                        )
                    vi, ti, ni = [], [], []
                    for c in corners:
                        parts = c.split("/")
                        vi.append(int(parts[0]))
                        ti.append(int(parts[1]) if len(parts) > 1 and parts[1] else 0)
                        ni.append(int(parts[2]) if len(parts) > 2 and parts[2] else 0)
                    faces.append(vi)
                    face_uv.append(ti)
                    face_vn.append(ni)
            except ValueError as exc:
                if isinstance(exc, ObjError):
                    raise
                raise ObjError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from exc

    if not positions or not faces:
        raise ObjError(f"{path}: no vertices or faces")

    def resolve(idx, count, what):
        idx = np.asarray(idx, dtype=np.int64)
        idx = np.where(idx < 0, count + idx, idx - 1)
        if idx.min() < 0 or idx.max() >= count:
            raise ObjError(f"{path}: {what} index out of range")
        return idx

    P = np.asarray(positions, dtype=np.float64)
    F = resolve(faces, len(P), "vertex")
    if any(t == 0 for row in face_uv for t in row) or not texcoords:
        raise ObjError(f"{path}: faces without texture coordinates")
    T = np.asarray(texcoords, dtype=np.float64)
    UV = T[resolve(face_uv, len(T), "texcoord")]

    mesh = TriMesh(P, F, UV)
    has_vn = vnormals and all(n != 0 for row in face_vn for n in row)
    if has_vn:
        N = np.asarray(vnormals, dtype=np.float64)
        corner_n = N[resolve(face_vn, len(N), "normal")]
        acc = np.zeros_like(P)
        for k in range(3):
            np.add.at(acc, F[:, k], corner_n[:, k])
        normals, ok = _normalize(acc)
        if not ok.all():
            normals[~ok] = compute_vertex_normals(mesh)[~ok]
        mesh.normals = normals
    else:
        mesh.normals = compute_vertex_normals(mesh)
    if normalize:
        normalize_unit_scale(mesh)
    return compute_tangent_frames(mesh)


def save_obj(mesh: TriMesh, path) -> None:
    """Write positions, per-corner UVs and vertex normals (``f v/vt/vn``)."""
    path = Path(path)
    lines = ["# polartex mesh"]
    lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.positions]
    uv = mesh.uvs.reshape(-1, 2)
    lines += [f"vt {u:.17g} {v:.17g}" for u, v in uv]
    if mesh.normals is not None:
        lines += [f"vn {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.normals]
    for fi, (a, b, c) in enumerate(mesh.faces):
        t = 3 * fi + 1
        if mesh.normals is not None:
            lines.append(f"f {a+1}/{t}/{a+1} {b+1}/{t+1}/{b+1} {c+1}/{t+2}/{c+1}")
        else:
            lines.append(f"f {a+1}/{t} {b+1}/{t+1} {c+1}/{t+2}")
    path.write_text("\n".join(lines) + "\n")


def euler_characteristic(mesh: TriMesh, weld_tol: float = 1e-9) -> int:
    """V - E + F after welding coincident positions."""
    key = np.round(mesh.positions / weld_tol).astype(np.int64)
    _, remap = np.unique(key, axis=0, return_inverse=True)
    remap = remap.ravel()
    faces = remap[mesh.faces]
    faces = faces[(faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])]
    edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    n_edges = len(np.unique(edges, axis=0))
    n_verts = len(np.unique(faces))
    return n_verts - n_edges + len(faces)


def is_closed_manifold(mesh: TriMesh, weld_tol: float = 1e-9) -> bool:
    key = np.round(mesh.positions / weld_tol).astype(np.int64)
    _, remap = np.unique(key, axis=0, return_inverse=True)
    faces = remap.ravel()[mesh.faces]
    edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(np.all(counts == 2))
