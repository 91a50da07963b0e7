"""Deterministic software rasterizer and texture-space shading.

Geometry stays fixed while textures are optimized, so a view is rasterized
once into a :class:`GBuffer` and reused.  For speed the per-iteration
shading works on :class:`Fragments`, a compact per-pixel record bound to one
texture resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .brdf import ShadingInputs, radiance
from .core.texture import bilinear_taps, gather
from .core.types import Camera, PointLight, TextureSet, TriMesh

# candidate (pixel, triangle) pairs processed per chunk
_EDGE_EPS = 1e-9
_CHUNK = 2_000_000


@dataclass
class GBuffer:
    """Rasterization output.  Per-pixel arrays hold covered pixels only, in
    row-major pixel order; ``pixel`` gives their flat index into the
    ``height x width`` image.  The tangent frame ``(tangent, bitangent,
    normal)`` is orthonormal."""

    height: int
    width: int
    pixel: np.ndarray
    tri_id: np.ndarray
    uv: np.ndarray
    position: np.ndarray
    normal_geo: np.ndarray
    tangent: np.ndarray
    bitangent: np.ndarray
    normal: np.ndarray
    view_dir: np.ndarray
    cosv_geo: np.ndarray
    dist: np.ndarray
    uv_dx: np.ndarray
    uv_dy: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def count(self) -> int:
        return len(self.pixel)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.height * self.width, dtype=bool)
        m[self.pixel] = True
        return m.reshape(self.height, self.width)

    def to_image(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        values = np.asarray(values)
        trailing = values.shape[1:]
        out = np.full((self.height * self.width,) + trailing, fill, dtype=values.dtype)
        out[self.pixel] = values
        return out.reshape((self.height, self.width) + trailing)

    def from_image(self, image: np.ndarray) -> np.ndarray:
        """Pick covered pixels out of an ``(H, W, ...)`` array."""
        image = np.asarray(image)
        return image.reshape((self.height * self.width,) + image.shape[2:])[self.pixel]

    def tri_image(self) -> np.ndarray:
        return self.to_image(self.tri_id, fill=-1)

    def footprint(self) -> np.ndarray:
        """Larger of the two uv-space pixel footprint lengths."""
        return np.maximum(np.linalg.norm(self.uv_dx, axis=1), np.linalg.norm(self.uv_dy, axis=1))


def _unit(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    ok = n[:, 0] > 1e-20
    return v / np.where(n > 1e-20, n, 1.0), ok


def _cross2(ax, ay, bx, by):
    return ax * by - ay * bx


def rasterize(mesh: TriMesh, camera: Camera, near: float = 1e-6) -> GBuffer:
    """Z-buffered, back-face culled, perspective-correct rasterization with
    one sample at each pixel center."""
    camera.validate()
    if mesh.tangents is None or mesh.normals is None:
        raise ValueError("mesh needs normals and tangent frames")
    H, W = camera.shape
    F = mesh.faces
    proj = camera.project(mesh.positions)
    fn = mesh.face_normals()
    to_tri = mesh.positions[F[:, 0]] - camera.center
    facing = np.einsum("ij,ij->i", to_tri, fn) < 0
    zs = proj[F, 2]
    tri = np.nonzero(facing & (zs > near).all(axis=1))[0]

    sx = proj[F[tri], 0]
    sy = proj[F[tri], 1]
    area = _cross2(sx[:, 1] - sx[:, 0], sy[:, 1] - sy[:, 0], sx[:, 2] - sx[:, 0], sy[:, 2] - sy[:, 0])
    x0 = np.clip(np.ceil(sx.min(1) - 0.5), 0, W).astype(np.int64)
    x1 = np.clip(np.floor(sx.max(1) - 0.5), -1, W - 1).astype(np.int64)
    y0 = np.clip(np.ceil(sy.min(1) - 0.5), 0, H).astype(np.int64)
    y1 = np.clip(np.floor(sy.max(1) - 0.5), -1, H - 1).astype(np.int64)
    keep = (np.abs(area) > 1e-12) & (x1 >= x0) & (y1 >= y0)
    tri, sx, sy, area = tri[keep], sx[keep], sy[keep], area[keep]
    x0, x1, y0, y1 = x0[keep], x1[keep], y0[keep], y1[keep]
    bw = x1 - x0 + 1
    counts = bw * (y1 - y0 + 1)

    # enumerate (triangle, pixel) candidates chunk by chunk
    frag_pix, frag_depth, frag_tri, frag_l0, frag_l1 = [], [], [], [], []
    start = 0
    cum = np.cumsum(counts)
    while start < len(tri):
        base = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, base + _CHUNK, side="right"))
        stop = max(stop, start + 1)
        sel = np.arange(start, stop)
        c = counts[sel]
        local = np.repeat(sel, c)
        offs = np.arange(c.sum()) - np.repeat(np.cumsum(c) - c, c)
        px = x0[local] + offs % bw[local]
        py = y0[local] + offs // bw[local]
        cx = px + 0.5
        cy = py + 0.5
        ax, ay = sx[local, 0], sy[local, 0]
        bx, by = sx[local, 1], sy[local, 1]
        qx, qy = sx[local, 2], sy[local, 2]
        ar = area[local]
        l0 = _cross2(bx - cx, by - cy, qx - cx, qy - cy) / ar
        l1 = _cross2(qx - cx, qy - cy, ax - cx, ay - cy) / ar
        l2 = 1.0 - l0 - l1
        # small tolerance so pixel centres on a shared edge are never dropped
        # by roundoff on both sides; the depth test resolves the duplicate
        inside = (l0 >= -_EDGE_EPS) & (l1 >= -_EDGE_EPS) & (l2 >= -_EDGE_EPS)
        local, px, py = local[inside], px[inside], py[inside]
        l0, l1, l2 = l0[inside], l1[inside], l2[inside]
        z = zs[tri[local]]
        inv_depth = l0 / z[:, 0] + l1 / z[:, 1] + l2 / z[:, 2]
        frag_pix.append(py * W + px)
        frag_depth.append(1.0 / inv_depth)
        frag_tri.append(tri[local])
        frag_l0.append(l0)
        frag_l1.append(l1)
        start = stop

    if frag_pix:
        pix = np.concatenate(frag_pix)
        depth = np.concatenate(frag_depth)
        tri_f = np.concatenate(frag_tri)
        lam0 = np.concatenate(frag_l0)
        lam1 = np.concatenate(frag_l1)
    else:
        pix = np.zeros(0, np.int64)
        depth = lam0 = lam1 = np.zeros(0)
        tri_f = np.zeros(0, np.int64)

    # nearest surface per pixel; ties go to the lower triangle id
    order = np.lexsort((tri_f, depth, pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]
    pix, tri_f, lam0, lam1 = pix[win], tri_f[win], lam0[win], lam1[win]
    lam = np.stack([lam0, lam1, 1.0 - lam0 - lam1], axis=1)
    return _interpolate(mesh, camera, pix, tri_f, lam)


def _interpolate(mesh: TriMesh, camera: Camera, pix, tri_f, lam) -> GBuffer:
    H, W = camera.shape
    F = mesh.faces[tri_f]
    proj = camera.project(mesh.positions)
    sx = proj[F, 0]
    sy = proj[F, 1]
    z = proj[F, 2]
    area = _cross2(sx[:, 1] - sx[:, 0], sy[:, 1] - sy[:, 0], sx[:, 2] - sx[:, 0], sy[:, 2] - sy[:, 0])

    # screen-space barycentric gradients (constant per triangle)
    dldx = np.stack([sy[:, 1] - sy[:, 2], sy[:, 2] - sy[:, 0], sy[:, 0] - sy[:, 1]], 1) / area[:, None]
    dldy = np.stack([sx[:, 2] - sx[:, 1], sx[:, 0] - sx[:, 2], sx[:, 1] - sx[:, 0]], 1) / area[:, None]

    q = lam / z
    S = q.sum(1, keepdims=True)
    bary = q / S
    dqx = dldx / z
    dqy = dldy / z
    dbx = (dqx - bary * dqx.sum(1, keepdims=True)) / S
    dby = (dqy - bary * dqy.sum(1, keepdims=True)) / S

    uvs = mesh.uvs[tri_f]  # (N, 3, 2)
    uv = np.einsum("nk,nkc->nc", bary, uvs)
    uv_dx = np.einsum("nk,nkc->nc", dbx, uvs)
    uv_dy = np.einsum("nk,nkc->nc", dby, uvs)

    def interp(attr):
        return np.einsum("nk,nkc->nc", bary, attr[F])

    position = interp(mesh.positions)
    n, ok = _unit(interp(mesh.normals))
    fn, _ = _unit(mesh.face_normals()[tri_f])
    n[~ok] = fn[~ok]
    t = interp(mesh.tangents)
    t = t - n * np.sum(n * t, 1, keepdims=True)
    t, okt = _unit(t)
    if not okt.all():
        helper = np.where(np.abs(n[:, :1]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
        alt, _ = _unit(np.cross(n, helper))
        t[~okt] = alt[~okt]
    b_raw = interp(mesh.bitangents)
    b = b_raw - n * np.sum(n * b_raw, 1, keepdims=True) - t * np.sum(t * b_raw, 1, keepdims=True)
    b, okb = _unit(b)
    if not okb.all():
        alt = np.cross(n, t)
        b[~okb] = alt[~okb]

    to_cam = camera.center - position
    dist = np.linalg.norm(to_cam, axis=1)
    view_dir = to_cam / dist[:, None]
    cosv = np.sum(n * view_dir, 1)
    return GBuffer(
        height=H,
        width=W,
        pixel=pix,
        tri_id=tri_f,
        uv=uv,
        position=position,
        normal_geo=fn,
        tangent=t,
        bitangent=b,
        normal=n,
        view_dir=view_dir,
        cosv_geo=cosv,
        dist=dist,
        uv_dx=uv_dx,
        uv_dy=uv_dy,
    )


def apply_normal_map(gbuf: GBuffer, normal_texture: np.ndarray) -> np.ndarray:
    """World-space shading normals from a tangent-space normal map."""
    m = gather(normal_texture, *bilinear_taps(gbuf.uv, normal_texture.shape[0]))
    v = m[:, :1] * gbuf.tangent + m[:, 1:2] * gbuf.bitangent + m[:, 2:3] * gbuf.normal
    out, ok = _unit(v)
    out[~ok] = gbuf.normal[~ok]
    return out


def mip_level(footprint, resolution: int) -> np.ndarray:
    """Mip level a forward renderer would pick for a pixel whose largest
    uv-derivative length is ``footprint``; clamped below at 0."""
    fp = np.asarray(footprint, dtype=np.float64) * resolution
    with np.errstate(divide="ignore"):
        lev = np.log2(fp)
    return np.maximum(lev, 0.0)


def pixel_weight(cosv, level) -> np.ndarray:
    cosv = np.clip(np.asarray(cosv, dtype=np.float64), 0.0, 1.0)
    level = np.asarray(level, dtype=np.float64)
    return np.where(level < 1.0, cosv * (1.0 - level), 0.0)


@dataclass
class ViewGeometry:
    """Resolution-independent per-pixel data of one view.

    Compact enough to keep for every view during a fit; ``fragments``
    prepares it for a given texture resolution.
    """

    shape: tuple[int, int]
    pixel: np.ndarray
    uv: np.ndarray
    view_tangent: np.ndarray
    falloff: np.ndarray
    footprint: np.ndarray
    atten: np.ndarray

    @property
    def count(self) -> int:
        return len(self.pixel)

    @classmethod
    def from_gbuffer(
        cls, gbuf: GBuffer, light: PointLight, attenuation: np.ndarray | None = None
    ) -> "ViewGeometry":
        view_tangent = np.stack(
            [
                np.sum(gbuf.tangent * gbuf.view_dir, 1),
                np.sum(gbuf.bitangent * gbuf.view_dir, 1),
                np.sum(gbuf.normal * gbuf.view_dir, 1),
            ],
            axis=1,
        )
        d = np.linalg.norm(gbuf.position - light.position, axis=1)
        if np.any(d <= 0):
            raise ValueError("surface point coincides with the light")
        falloff = light.intensity[None, :] / (d * d)[:, None]
        if attenuation is None:
            atten = np.ones((gbuf.count, 1))
        else:
            attenuation = np.asarray(attenuation, dtype=np.float64)
            if attenuation.ndim == 2:
                attenuation = attenuation[..., None]
            if attenuation.shape[:2] != gbuf.shape:
                raise ValueError(
                    f"attenuation map {attenuation.shape[:2]} does not match image {gbuf.shape}"
                )
            atten = gbuf.from_image(attenuation)
        return cls(gbuf.shape, gbuf.pixel, gbuf.uv, view_tangent, falloff, gbuf.footprint(), atten)

    def from_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image)
        H, W = self.shape
        return image.reshape((H * W,) + image.shape[2:])[self.pixel]

    def fragments(
        self, resolution: int, drop_unweighted: bool = False, mip_weighting: bool = True
    ) -> "Fragments":
        """``drop_unweighted`` discards pixels at mip level >= 1, which carry
        zero loss weight; only meaningful with ``mip_weighting``.  Without
        ``mip_weighting`` every pixel gets level 0, i.e. the weight is the shading cosine."""
        if mip_weighting:
            level = mip_level(self.footprint, resolution)
        else:
            level = np.zeros(self.count)
        if drop_unweighted and mip_weighting:
            keep = np.flatnonzero(level < 1.0)
            source = keep
        else:
            keep, source = slice(None), None
        uv = self.uv[keep]
        idx, w = bilinear_taps(uv, resolution)
        return Fragments(
            self.shape, self.pixel[keep], idx, w, self.view_tangent[keep], self.falloff[keep],
            level[keep], self.atten[keep], resolution, uv, source,
        )


@dataclass
class Fragments:
    """Covered pixels of one view, prepared for a texture resolution.

    ``view_tangent`` is the view direction in each pixel's tangent frame, so a
    tangent-space normal texel ``m`` gives ``cosv = m . view_tangent / |m|``.
    """

    shape: tuple[int, int]
    pixel: np.ndarray
    tap_index: np.ndarray
    tap_weight: np.ndarray
    view_tangent: np.ndarray
    falloff: np.ndarray
    level: np.ndarray
    atten: np.ndarray
    resolution: int
    uv: np.ndarray
    source: np.ndarray | None = None  # rows of the ViewGeometry kept, None = all
    _taps: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def count(self) -> int:
        return len(self.pixel)

    @classmethod
    def build(
        cls,
        gbuf: GBuffer,
        resolution: int,
        light: PointLight,
        attenuation: np.ndarray | None = None,
        drop_unweighted: bool = False,
        mip_weighting: bool = True,
    ) -> "Fragments":
        geom = ViewGeometry.from_gbuffer(gbuf, light, attenuation)
        return geom.fragments(resolution, drop_unweighted, mip_weighting)

    def taps_for(self, resolution: int) -> tuple[np.ndarray, np.ndarray]:
        """Bilinear taps into a texture of another resolution (cached)."""
        if resolution == self.resolution:
            return self.tap_index, self.tap_weight
        if resolution not in self._taps:
            self._taps[resolution] = bilinear_taps(self.uv, resolution)
        return self._taps[resolution]

    def _operators(self, resolution: int):
        # sparse (N, R*R) sampling matrix and its transpose, built once;
        # both products sum in a fixed order, so results are deterministic
        key = ("op", resolution)
        if key not in self._taps:
            idx, w = self.taps_for(resolution)
            n = len(idx)
            G = sparse.csr_matrix(
                (w.ravel(), idx.ravel(), np.arange(0, 4 * n + 1, 4)),
                shape=(n, resolution * resolution),
            )
            self._taps[key] = (G, G.T.tocsr())
        return self._taps[key]

    def sampling_matrix(self, resolution: int | None = None) -> sparse.csr_matrix:
        """Sparse ``(N, R*R)`` bilinear gather matrix (``resolution`` defaults
        to the fragments' own)."""
        return self._operators(resolution or self.resolution)[0]

    def sample(self, texture: np.ndarray) -> np.ndarray:
        """Bilinear lookup of an ``(R, R, C)`` texture at every fragment."""
        R = texture.shape[0]
        G, _ = self._operators(R)
        return G @ texture.reshape(R * R, -1)

    def splat(self, values: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`sample` at this resolution: ``(N, C)`` values
        into an ``(R, R, C)`` buffer."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        _, S = self._operators(self.resolution)
        R = self.resolution
        return (S @ values).reshape(R, R, values.shape[1])

    def to_image(self, values: np.ndarray) -> np.ndarray:
        H, W = self.shape
        values = np.asarray(values)
        out = np.zeros((H * W,) + values.shape[1:], dtype=values.dtype)
        out[self.pixel] = values
        return out.reshape((H, W) + values.shape[1:])


@dataclass
class Evaluation:
    """Forward-pass intermediates kept for the backward pass."""

    kd: np.ndarray
    ks: np.ndarray
    ka: np.ndarray
    m: np.ndarray
    m_len: np.ndarray
    cos_raw: np.ndarray
    inputs: ShadingInputs
    radiance: np.ndarray
    rendered: np.ndarray
    weight: np.ndarray


def evaluate(
    frags: Fragments, tex: TextureSet, mode: str, fixed_kd: np.ndarray | None = None
) -> Evaluation:
    """Forward shading.  ``fixed_kd`` replaces ``tex.kd`` with a texture of
    any resolution (a frozen albedo during coarse-to-fine refits)."""
    if tex.resolution != frags.resolution:
        raise ValueError(
            f"fragments prepared for {frags.resolution}^2 textures, got {tex.resolution}^2"
        )
    # one gather over the stacked maps: kd 0:3, ks 3, ka 4:7, normal 7:10
    stacked = frags.sample(np.concatenate([tex.kd, tex.ks, tex.ka, tex.normal], axis=-1))
    if fixed_kd is None:
        kd = stacked[:, 0:3]
    else:
        kd = frags.sample(fixed_kd)
    ks = stacked[:, 3]
    ka = stacked[:, 4:7]
    m = stacked[:, 7:10]
    m_len = np.linalg.norm(m, axis=1)
    m_len = np.where(m_len > 1e-12, m_len, 1e-12)
    cos_raw = np.einsum("nc,nc->n", m, frags.view_tangent) / m_len
    kd_eff = kd * tex.diffuse_scale if mode == "parallel" else kd
    inp = ShadingInputs(
        cosv=cos_raw, dist=np.ones(len(cos_raw)), kd=kd_eff, ks=ks, ka=ka,
        alpha=tex.alpha, intensity=frags.falloff,
    )
    rad = radiance(inp, mode)
    rendered = frags.atten * rad
    weight = pixel_weight(inp.cosv, frags.level)
    return Evaluation(kd, ks, ka, m, m_len, cos_raw, inp, rad, rendered, weight)


def shade(
    gbuf: GBuffer,
    tex: TextureSet,
    light: PointLight,
    attenuation: np.ndarray | None,
    mode: str,
) -> np.ndarray:
    """Render ``M * L_o``; uncovered pixels are 0."""
    frags = Fragments.build(gbuf, tex.resolution, light, attenuation)
    ev = evaluate(frags, tex, mode)
    return frags.to_image(ev.rendered)


def weight_image(gbuf: GBuffer, tex: TextureSet) -> np.ndarray:
    """Per-pixel loss weight W under the current normal map."""
    ns = apply_normal_map(gbuf, tex.normal)
    cos = np.sum(ns * gbuf.view_dir, axis=1)
    level = mip_level(gbuf.footprint(), tex.resolution)
    return gbuf.to_image(pixel_weight(cos, level))
