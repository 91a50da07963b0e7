"""The two photometric fitting stages and held-out evaluation.

Stage 1 fits albedo, normals and the ambient map to cross-polarized views
with the specular term switched off.  Stage 2 freezes the albedo and fits
specular gain, lobe blend, normals and per-channel diffuse scales to the
parallel-polarized views.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from ..core.texture import scatter
from ..core.types import PointLight, TextureSet, TriMesh, CaptureView
from ..grad import TextureGradients, fragment_backward
from ..optim import LevelLog, ScheduleConfig, coarse_to_fine, resample_textures
from ..raster import Fragments, ViewGeometry, evaluate, rasterize
from .metrics import psnr, ssim

log = logging.getLogger(__name__)

_KS_SMOOTHING = 1e-3


@dataclass
class FitConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    mip_weighting: bool = True
    workers: int = 1
    light_intensity: float = 10.0


@dataclass
class PreparedView:
    geometry: ViewGeometry
    target: np.ndarray  # (N, 3) covered-pixel observations
    mode: str
    name: str = ""


@dataclass
class StageResult:
    textures: TextureSet
    logs: list[LevelLog]

    @property
    def seconds(self) -> list[float]:
        return [lg.seconds for lg in self.logs]


def prepare_view(view: CaptureView, mesh: TriMesh, mode: str | None = None,
                 light_intensity: float = 10.0, attenuation=None) -> PreparedView:
    """Rasterize once and keep only what shading needs at any resolution.
    ``attenuation`` overrides the view's own map."""
    gbuf = rasterize(mesh, view.camera)
    light = PointLight.at_camera(view.camera, light_intensity)
    att = view.attenuation if attenuation is None else attenuation
    geom = ViewGeometry.from_gbuffer(gbuf, light, att)
    target = geom.from_image(view.image)
    if target.shape[1] == 1:
        target = np.repeat(target, 3, axis=1)
    return PreparedView(geom, target, mode or view.polarization, view.name)


def prepare_views(views, mesh, mode=None, light_intensity=10.0, workers=1, attenuation=None):
    def one(v):
        return prepare_view(v, mesh, mode, light_intensity, attenuation)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, views))
    return [one(v) for v in views]


class PhotometricObjective:
    """Weighted L1 photometric loss over a batch of prepared views.

    Per-view work may run on a thread pool; gradients are summed in batch
    order so the result does not depend on the worker count.
    """

    def __init__(self, views: list[PreparedView], params, mip_weighting: bool = True,
                 fixed_kd: np.ndarray | None = None, workers: int = 1):
        if not views:
            raise ValueError("no views to fit")
        self.views = views
        self.params = tuple(params)
        self.n_views = len(views)
        self.mip_weighting = mip_weighting
        self.fixed_kd = fixed_kd
        self.workers = workers
        self.frags: list[Fragments] = []
        self.targets: list[np.ndarray] = []
        self.resolution = None

    def prepare(self, resolution: int) -> None:
        self.resolution = resolution
        self.frags, self.targets = [], []
        for v in self.views:
            f = v.geometry.fragments(resolution, drop_unweighted=self.mip_weighting,
                                     mip_weighting=self.mip_weighting)
            self.frags.append(f)
            self.targets.append(v.target if f.source is None else v.target[f.source])
        if sum(f.count for f in self.frags) == 0:
            raise ValueError(f"no covered texels at resolution {resolution}")

    def _one(self, i, tex, norm):
        return fragment_backward(
            self.frags[i], tex, self.views[i].mode, self.targets[i], None, norm,
            wrt=self.params, fixed_kd=self.fixed_kd,
        )

    def loss_and_grad(self, tex: TextureSet, batch) -> tuple[float, TextureGradients]:
        batch = [int(i) for i in batch]
        norm = max(sum(self.views[i].geometry.count for i in batch), 1)
        if self.workers > 1 and len(batch) > 1:
            with ThreadPoolExecutor(min(self.workers, len(batch))) as pool:
                parts = list(pool.map(lambda i: self._one(i, tex, norm), batch))
        else:
            parts = [self._one(i, tex, norm) for i in batch]
        total = TextureGradients.zeros(tex.resolution)
        loss = 0.0
        for l, g in parts:
            loss += l
            total.add(g)
        return loss, total

    def full_loss(self, tex: TextureSet) -> float:
        if self.resolution != tex.resolution:
            self.prepare(tex.resolution)
        return self.loss_and_grad(tex, range(self.n_views))[0]


def backproject_kd(views: list[PreparedView], resolution: int, mip_weighting: bool = True) -> np.ndarray:
    """Albedo estimate: weighted per-texel average of observation divided by
    the render of a white, flat, non-specular surface.  Unobserved texels
    get the mean of the observed ones."""
    white = TextureSet.initial(resolution, kd=1.0)
    num = np.zeros((resolution * resolution, 3))
    den = np.zeros(resolution * resolution)
    for v in views:
        f = v.geometry.fragments(resolution, drop_unweighted=mip_weighting, mip_weighting=mip_weighting)
        tgt = v.target if f.source is None else v.target[f.source]
        ev = evaluate(f, white, "cross")
        base = ev.rendered
        ok = np.all(base > 1e-6, axis=1) & (ev.weight > 0)
        if not ok.any():
            continue
        est = tgt[ok] / base[ok]
        w = ev.weight[ok]
        idx, tw = f.tap_index[ok], f.tap_weight[ok]
        num += scatter(resolution, idx, tw * w[:, None], est).reshape(-1, 3)
        den += scatter(resolution, idx, tw * w[:, None], np.ones(len(w))).reshape(-1)
    seen = den > 1e-12
    if not seen.any():
        raise ValueError("no texel is observed by any view")
    kd = np.empty_like(num)
    kd[seen] = num[seen] / den[seen, None]
    kd[~seen] = kd[seen].mean(axis=0)
    return np.clip(kd, 0.0, None).reshape(resolution, resolution, 3)


def observed_texels(views: list[PreparedView], resolution: int, normal=None) -> np.ndarray:
    """Texels receiving bilinear weight from at least one pixel with positive
    loss weight, (R, R) bool."""
    tex = TextureSet.initial(resolution)
    if normal is not None:
        tex.normal = np.asarray(normal, dtype=np.float64)
    hits = np.zeros(resolution * resolution)
    for v in views:
        f = v.geometry.fragments(resolution, drop_unweighted=True)
        ev = evaluate(f, tex, "cross")
        pos = ev.weight > 0
        hits += scatter(resolution, f.tap_index[pos], f.tap_weight[pos], np.ones(pos.sum())).reshape(-1)
    return (hits > 0).reshape(resolution, resolution)


def _grid_laplacian(R: int) -> sparse.csr_matrix:
    """Graph Laplacian of the 4-connected R x R texel grid."""
    path = sparse.diags([np.ones(R - 1), np.ones(R - 1)], [-1, 1])
    adj = sparse.kron(sparse.identity(R), path) + sparse.kron(path, sparse.identity(R))
    return (sparse.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj).tocsr()


def init_specular(views: list[PreparedView], kd: np.ndarray, tex: TextureSet,
                  mip_weighting: bool = True, sweeps: int = 3,
                  alphas=None) -> TextureSet:
    """Stage-2 starting point for ks, alpha and diffuse_scale.

    A parallel render is ``diffuse_scale * diffuse + ks * spec(alpha) + ambient``
    with ``spec`` linear in alpha, so for each alpha on a grid ks (per texel)
    and diffuse_scale (per channel) are solved by alternating weighted least
    squares, and the alpha with the lowest weighted L1 residual is kept
    (a 0.05 grid refined to 0.01 unless ``alphas`` is given).
    Starting Adam from ks = 0 instead drags alpha towards the narrow lobe and
    leaves ks and alpha in a slowly converging compensating valley.
    """
    R = tex.resolution
    n = R * R
    diffuse_only = tex.copy()
    diffuse_only.ks[:] = 0.0
    diffuse_only.ka[:] = 0.0
    diffuse_only.diffuse_scale = np.ones(3)
    ambient_only = tex.copy()
    ambient_only.ks[:] = 0.0
    no_kd = np.zeros_like(kd)
    spec_only = tex.copy()
    spec_only.ks[:] = 1.0
    spec_only.ka[:] = 0.0

    # normal equations split by lobe: the ks system is quadratic in alpha,
    # the right-hand side is linear in alpha and diffuse_scale
    gram = {k: sparse.csr_matrix((n, n)) for k in ("ww", "wn", "nn")}
    rhs = {k: np.zeros((n, 3)) for k in ("w_res", "n_res", "w_dif", "n_dif")}
    dif_res = np.zeros(3)
    dif_dif = np.zeros(3)
    parts = []
    for v in views:
        f = v.geometry.fragments(R, drop_unweighted=mip_weighting, mip_weighting=mip_weighting)
        if f.count == 0:
            continue
        tgt = v.target if f.source is None else v.target[f.source]
        ev = evaluate(f, diffuse_only, "parallel", fixed_kd=kd)
        dif, w = ev.rendered, ev.weight
        res = tgt - evaluate(f, ambient_only, "parallel", fixed_kd=no_kd).rendered
        spec_only.alpha = 1.0
        wide = evaluate(f, spec_only, "parallel", fixed_kd=no_kd).rendered
        spec_only.alpha = 0.0
        narrow = evaluate(f, spec_only, "parallel", fixed_kd=no_kd).rendered
        G = f.sampling_matrix()
        for key, x, y in (("ww", wide, wide), ("wn", wide, narrow), ("nn", narrow, narrow)):
            gram[key] = gram[key] + G.T @ sparse.diags(w * np.sum(x * y, axis=1)) @ G
        rhs["w_res"] += G.T @ (w[:, None] * wide * res)
        rhs["n_res"] += G.T @ (w[:, None] * narrow * res)
        rhs["w_dif"] += G.T @ (w[:, None] * wide * dif)
        rhs["n_dif"] += G.T @ (w[:, None] * narrow * dif)
        dif_res += np.sum(w[:, None] * dif * res, axis=0)
        dif_dif += np.sum(w[:, None] * dif * dif, axis=0)
        parts.append((G, res, dif, wide, narrow, w))
    if not parts:
        raise ValueError(f"no covered texels at resolution {R}")
    diag = gram["ww"].diagonal() + gram["nn"].diagonal()
    # light smoothing tames texels the lobes barely see; a plain ridge would
    # shrink ks and push alpha towards the wide lobe
    ridge = _KS_SMOOTHING * diag.mean() * _grid_laplacian(R)
    ridge = ridge + sparse.diags(np.where(diag > 0, 1e-9 * diag.max(), 1.0))
    dif_dif = np.where(dif_dif > 0, dif_dif, 1.0)

    def solve(alpha):
        a, b = alpha, 1.0 - alpha
        H = (a * a * gram["ww"] + 2 * a * b * gram["wn"] + b * b * gram["nn"] + ridge).tocsc()
        scale = np.ones(3)
        for _ in range(sweeps):
            y = a * (rhs["w_res"] - scale * rhs["w_dif"]) + b * (rhs["n_res"] - scale * rhs["n_dif"])
            ks = np.clip(splinalg.spsolve(H, y.sum(axis=1)), 0.0, None)
            cross = a * rhs["w_dif"] + b * rhs["n_dif"]
            scale = np.clip((dif_res - ks @ cross) / dif_dif, 1e-6, None)
        err = 0.0
        for G, res, dif, wide, narrow, w in parts:
            pred = scale * dif + (G @ ks)[:, None] * (a * wide + b * narrow)
            err += np.sum(w[:, None] * np.abs(pred - res))
        return err, ks, scale, alpha

    def search(grid):
        return min((solve(float(x)) for x in grid), key=lambda t: t[0])

    if alphas is None:
        best = search(np.linspace(0.0, 1.0, 21))
        best = min(best, search(np.clip(best[3] + np.linspace(-0.04, 0.04, 9), 0.0, 1.0)),
                   key=lambda t: t[0])
    else:
        best = search(np.atleast_1d(alphas))
    out = tex.copy()
    out.ks = best[1].reshape(R, R, 1)
    out.diffuse_scale = best[2]
    out.alpha = best[3]
    return out


def _train_views(views, polarization, check_polarization):
    train = [v for v in views if v.role == "train"]
    if check_polarization:
        wrong = [v.name for v in train if v.polarization != polarization]
        if wrong:
            raise ValueError(f"expected {polarization}-polarized views, got others: {wrong[:3]}")
    return train


def stage1_fit(cross_views: list[CaptureView], mesh: TriMesh, config: FitConfig | None = None,
               check_polarization: bool = True, prepared: list[PreparedView] | None = None,
               logs: list | None = None) -> StageResult:
    """Fit kd, normal and ka in cross mode.  ``check_polarization=False``
    allows deliberately feeding parallel views (a leak experiment)."""
    config = config or FitConfig()
    if prepared is None:
        train = _train_views(cross_views, "cross", check_polarization)
        if len(train) < 4:
            raise ValueError(f"stage 1 needs at least 4 train views, got {len(train)}")
        prepared = prepare_views(train, mesh, "cross", config.light_intensity, config.workers)
    else:
        prepared = [PreparedView(p.geometry, p.target, "cross", p.name) for p in prepared]
    R0 = config.schedule.levels[0]
    init = TextureSet.initial(R0)
    init.kd = backproject_kd(prepared, R0, config.mip_weighting)
    objective = PhotometricObjective(prepared, ("kd", "normal", "ka"), config.mip_weighting,
                                     workers=config.workers)
    level_logs = [] if logs is None else logs
    tex = coarse_to_fine(config.schedule, objective, init, level_logs)
    tex.check_invariants()
    return StageResult(tex, level_logs)


def stage2_fit(parallel_views: list[CaptureView], mesh: TriMesh, stage1: StageResult,
               config: FitConfig | None = None, prepared: list[PreparedView] | None = None,
               logs: list | None = None) -> StageResult:
    """Fit ks, alpha, normal and diffuse_scale in parallel mode with kd
    frozen at its stage-1 value (sampled at its own resolution)."""
    config = config or FitConfig()
    if prepared is None:
        train = _train_views(parallel_views, "parallel", True)
        if not train:
            raise ValueError("stage 2 needs at least one parallel train view")
        prepared = prepare_views(train, mesh, "parallel", config.light_intensity, config.workers)
    else:
        prepared = [PreparedView(p.geometry, p.target, "parallel", p.name) for p in prepared]
    kd = stage1.textures.kd.copy()
    init = resample_textures(stage1.textures, config.schedule.levels[0])
    init = init_specular(prepared, kd, init, config.mip_weighting)
    objective = PhotometricObjective(prepared, ("ks", "alpha", "normal", "diffuse_scale"),
                                     config.mip_weighting, fixed_kd=kd, workers=config.workers)
    level_logs = [] if logs is None else logs
    tex = coarse_to_fine(config.schedule, objective, init, level_logs)
    if tex.resolution != kd.shape[0]:
        tex = resample_textures(tex, kd.shape[0])
    tex.kd = kd
    tex.check_invariants()
    return StageResult(tex, level_logs)


def render_view(tex: TextureSet, view: CaptureView, mesh: TriMesh, mode: str | None = None,
                light_intensity: float = 10.0, attenuation=None):
    """Render a view with the attenuation map applied; returns (image, coverage mask)."""
    gbuf = rasterize(mesh, view.camera)
    light = PointLight.at_camera(view.camera, light_intensity)
    att = view.attenuation if attenuation is None else attenuation
    geom = ViewGeometry.from_gbuffer(gbuf, light, att)
    frags = geom.fragments(tex.resolution)
    ev = evaluate(frags, tex, mode or view.polarization)
    return frags.to_image(ev.rendered), gbuf.mask


def evaluate_holdout(tex: TextureSet, holdout_views: list[CaptureView], mesh: TriMesh,
                     light_intensity: float = 10.0, attenuation=None) -> dict:
    """PSNR/SSIM of renders against held-out views, over covered pixels."""
    if not holdout_views:
        raise ValueError("no holdout views")
    per_view = {}
    for v in holdout_views:
        img, mask = render_view(tex, v, mesh, None, light_intensity, attenuation)
        target = v.image if v.image.shape[2] == 3 else np.repeat(v.image, 3, axis=2)
        per_view[v.name] = {
            "polarization": v.polarization,
            "psnr": psnr(img, target, mask),
            "ssim": ssim(img, target, mask),
        }
    vals = list(per_view.values())
    return {
        "psnr": float(np.mean([m["psnr"] for m in vals])),
        "ssim": float(np.mean([m["ssim"] for m in vals])),
        "views": per_view,
    }
