"""Reverse-mode gradients of the weighted L1 photometric loss.

The chain runs: loss -> rendered pixel -> radiance (analytic BRDF partials)
-> sampled texel values -> texels (bilinear splat).  Normal texels also go
through the shading-cosine dependence ``cosv = m . view_tangent / |m|``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .brdf import radiance_derivatives
from .core.types import PointLight, TextureSet
from .raster import Evaluation, Fragments, GBuffer, evaluate

ALL_PARAMS = frozenset({"kd", "ks", "ka", "normal", "alpha", "diffuse_scale"})

# cosines where the reflectance model has a kink: the back-facing clamp and
# the geometry-term switch min(1, 2 c^2)
KINKS = (0.0, 1.0 / np.sqrt(2.0))


@dataclass
class TextureGradients:
    kd: np.ndarray
    ks: np.ndarray
    ka: np.ndarray
    normal: np.ndarray
    alpha: float = 0.0
    diffuse_scale: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def zeros(cls, resolution: int) -> "TextureGradients":
        R = resolution
        return cls(
            np.zeros((R, R, 3)), np.zeros((R, R, 1)), np.zeros((R, R, 3)), np.zeros((R, R, 3))
        )

    def add(self, other: "TextureGradients") -> "TextureGradients":
        self.kd += other.kd
        self.ks += other.ks
        self.ka += other.ka
        self.normal += other.normal
        self.alpha += other.alpha
        self.diffuse_scale = self.diffuse_scale + other.diffuse_scale
        return self

    def as_dict(self) -> dict:
        return {
            "kd": self.kd, "ks": self.ks, "ka": self.ka, "normal": self.normal,
            "alpha": self.alpha, "diffuse_scale": self.diffuse_scale,
        }

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.as_dict().values())


def loss_forward(rendered, target, weights, mask=None) -> float:
    """sum(W * |rendered - target|) over covered pixels and channels, divided
    by the number of covered pixels (``mask``; all pixels when omitted)."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"shape mismatch: {rendered.shape} vs {target.shape}")
    weights = np.asarray(weights, dtype=np.float64)
    if rendered.ndim == weights.ndim + 1:
        weights = weights[..., None]
    if mask is None:
        count = int(np.prod(rendered.shape[:2]))
        mask = 1.0
    else:
        mask = np.asarray(mask, dtype=bool)
        count = int(mask.sum())
        mask = mask[..., None] if rendered.ndim == mask.ndim + 1 else mask
    if count == 0:
        return 0.0
    return float(np.sum(mask * weights * np.abs(rendered - target)) / count)


def fragment_loss(frags: Fragments, tex: TextureSet, mode: str, target, weight, norm: float) -> float:
    ev = evaluate(frags, tex, mode)
    return float(np.sum(weight[:, None] * np.abs(ev.rendered - target)) / norm)


def fragment_backward(
    frags: Fragments,
    tex: TextureSet,
    mode: str,
    target: np.ndarray,
    weight: np.ndarray | None,
    norm: float,
    wrt=ALL_PARAMS,
    ev: Evaluation | None = None,
    fixed_kd: np.ndarray | None = None,
) -> tuple[float, TextureGradients]:
    """Loss and gradients for one view's fragments.

    ``weight=None`` uses the mip/cosine weight of the current state as a
    constant (no derivative is taken through W).  ``norm`` is the pixel
    count the loss is divided by.  With ``fixed_kd`` the albedo comes from
    that texture and receives no gradient.
    """
    if ev is None:
        ev = evaluate(frags, tex, mode, fixed_kd)
    w = ev.weight if weight is None else weight
    resid = ev.rendered - target
    loss = float(np.sum(w[:, None] * np.abs(resid)) / norm)

    R = frags.resolution
    grads = TextureGradients.zeros(R)
    g_L = (w / norm)[:, None] * np.sign(resid) * frags.atten  # dLoss/dL_o
    der = radiance_derivatives(ev.inputs, mode)
    parallel = mode == "parallel"

    # texel-map gradients are splatted together in one pass
    columns, slots = [], []
    if "kd" in wrt or "diffuse_scale" in wrt:
        g_kd_eff = g_L * der.dkd
        if "kd" in wrt and fixed_kd is None:
            columns.append(g_kd_eff * tex.diffuse_scale if parallel else g_kd_eff)
            slots.append("kd")
        if "diffuse_scale" in wrt and parallel:
            grads.diffuse_scale = np.sum(g_kd_eff * ev.kd, axis=0)
    if "ks" in wrt and parallel:
        columns.append(np.sum(g_L * der.dks, axis=1, keepdims=True))
        slots.append("ks")
    if "ka" in wrt:
        columns.append(g_L * der.dka)
        slots.append("ka")
    if "alpha" in wrt and parallel:
        grads.alpha = float(np.sum(g_L * der.dalpha))
    if "normal" in wrt:
        g_cos = np.sum(g_L * der.dcosv, axis=1) * (ev.cos_raw > 0)
        m_hat = ev.m / ev.m_len[:, None]
        dcos_dm = (frags.view_tangent - ev.cos_raw[:, None] * m_hat) / ev.m_len[:, None]
        columns.append(g_cos[:, None] * dcos_dm)
        slots.append("normal")
    if columns:
        splat = frags.splat(np.concatenate(columns, axis=1))
        start = 0
        for name, col in zip(slots, columns):
            setattr(grads, name, splat[..., start:start + col.shape[1]])
            start += col.shape[1]
    return loss, grads


def backward(
    gbuf: GBuffer,
    tex: TextureSet,
    light: PointLight,
    attenuation,
    mode: str,
    target: np.ndarray,
    weights: np.ndarray | None = None,
    wrt=ALL_PARAMS,
) -> tuple[float, TextureGradients]:
    """Image-level loss and texture gradients for one view.

    ``weights`` is an ``(H, W)`` image of loss weights held constant; when
    omitted the mip/cosine weight of the current textures is used.
    """
    frags = Fragments.build(gbuf, tex.resolution, light, attenuation)
    tgt = gbuf.from_image(np.asarray(target, dtype=np.float64))
    if tgt.ndim == 1:
        tgt = tgt[:, None]
    w = None if weights is None else gbuf.from_image(np.asarray(weights, dtype=np.float64))
    return fragment_backward(frags, tex, mode, tgt, w, max(gbuf.count, 1), wrt)


# --------------------------------------------------------------------------
# finite-difference verification


@dataclass
class CheckView:
    frags: Fragments
    mode: str
    target: np.ndarray
    weight: np.ndarray
    norm: float


@dataclass
class CheckScene:
    views: list[CheckView]
    textures: TextureSet

    @property
    def resolution(self) -> int:
        return self.textures.resolution


def scene_loss(scene: CheckScene, tex: TextureSet) -> float:
    return sum(fragment_loss(v.frags, tex, v.mode, v.target, v.weight, v.norm) for v in scene.views)


def scene_gradients(scene: CheckScene, tex: TextureSet) -> TextureGradients:
    total = TextureGradients.zeros(tex.resolution)
    for v in scene.views:
        _, g = fragment_backward(v.frags, tex, v.mode, v.target, v.weight, v.norm)
        total.add(g)
    return total


def make_check_scene(
    texture_res: int = 32,
    image_res: int = 64,
    modes=("cross", "parallel"),
    seed: int = 0,
    margin: float = 0.02,
) -> CheckScene:
    """Small sphere scene for gradient checks.

    The target is the current render plus a random-sign offset of at least
    ``margin`` per channel, keeping every residual away from the L1 kink.
    Loss weights are frozen from the initial state.
    """
    from .raster import rasterize
    from .synth import make_gt_textures, make_orbit, make_sphere, vignette

    rng = np.random.default_rng(seed)
    mesh = make_sphere(12)
    tex = make_gt_textures(texture_res, seed=seed)
    tex.ka = rng.uniform(0.0, 0.2, tex.ka.shape)
    tex.ks = np.clip(tex.ks + rng.uniform(0.05, 0.2, tex.ks.shape), 0, None)
    tex.alpha = 0.4
    cams = make_orbit(len(modes), radius=1.4, jitter_seed=seed, width=image_res, height=image_res, cap_deg=60.0)
    views = []
    for cam, mode in zip(cams, modes):
        gbuf = rasterize(mesh, cam)
        frags = Fragments.build(gbuf, texture_res, PointLight.at_camera(cam), vignette(cam))
        ev = evaluate(frags, tex, mode)
        offset = rng.choice([-1.0, 1.0], size=ev.rendered.shape) * rng.uniform(margin, 5 * margin, size=ev.rendered.shape)
        target = ev.rendered + offset
        views.append(CheckView(frags, mode, target, ev.weight.copy(), float(gbuf.count)))
    return CheckScene(views, tex)


@dataclass
class GradCheckReport:
    threshold: float
    classes: dict
    passed: bool

    def to_json(self) -> str:
        return json.dumps(
            {"threshold": self.threshold, "passed": self.passed, "classes": self.classes}, indent=2
        )

    def lines(self) -> list[str]:
        out = []
        for name, c in self.classes.items():
            out.append(
                f"{name:14s} n={c['n']:4d} skipped={c['skipped']:3d} "
                f"max_rel={c['max_rel']:.3e} mean_rel={c['mean_rel']:.3e} "
                f"{'ok' if c['max_rel'] < self.threshold else 'FAIL'}"
            )
        return out


def relative_error(a, b, floor: float = 1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))


def _near_kink(scene: CheckScene, tex: TextureSet, margin: float) -> np.ndarray:
    """Texels whose bilinear footprint includes a pixel with cosv within
    ``margin`` of a kink of the reflectance model."""
    R = scene.resolution
    flagged = np.zeros(R * R, dtype=bool)
    for v in scene.views:
        ev = evaluate(v.frags, tex, v.mode)
        close = np.zeros(v.frags.count, dtype=bool)
        kinks = KINKS if v.mode == "parallel" else KINKS[:1]
        for k in kinks:
            close |= np.abs(ev.cos_raw - k) < margin
        hit = v.frags.tap_index[close][v.frags.tap_weight[close] > 0]
        flagged[hit] = True
    return flagged


def _observed_texels(scene: CheckScene) -> np.ndarray:
    R = scene.resolution
    seen = np.zeros(R * R, dtype=bool)
    for v in scene.views:
        live = v.weight > 0
        idx = v.frags.tap_index[live][v.frags.tap_weight[live] > 0]
        seen[idx] = True
    return seen


def finite_diff_check(
    scene: CheckScene,
    texture_set: TextureSet | None = None,
    samples: int = 100,
    *,
    h_texel: float = 1e-4,
    h_scalar: float = 1e-5,
    threshold: float = 1e-3,
    seed: int = 0,
    corrupt: dict | None = None,
    kink_margin: float = 5e-4,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``samples`` texels are drawn per map among texels that some weighted
    pixel touches.  Normal texels whose footprint sits within
    ``kink_margin`` of a non-differentiable shading cosine are excluded (the
    difference quotient is meaningless there) and counted as ``skipped``.
    ``corrupt`` scales analytic gradient classes, e.g. ``{"ks": 1.01}``, to
    exercise the harness itself.
    """
    tex = (texture_set or scene.textures).copy()
    rng = np.random.default_rng(seed)
    analytic = scene_gradients(scene, tex)
    if corrupt:
        for name, factor in corrupt.items():
            val = getattr(analytic, name)
            setattr(analytic, name, val * factor)

    R = scene.resolution
    observed = _observed_texels(scene)
    kinky = _near_kink(scene, tex, kink_margin)
    classes = {}
    for name in ("kd", "ks", "ka", "normal"):
        arr = getattr(tex, name)
        C = arr.shape[2]
        pool = np.nonzero(observed & ~kinky)[0] if name == "normal" else np.nonzero(observed)[0]
        skipped = int((observed & kinky).sum()) if name == "normal" else 0
        pick = rng.choice(pool, size=min(samples, len(pool)), replace=False)
        chans = rng.integers(0, C, size=len(pick))
        errs = []
        for t, c in zip(pick, chans):
            j, i = divmod(int(t), R)
            orig = arr[j, i, c]
            arr[j, i, c] = orig + h_texel
            fp = scene_loss(scene, tex)
            arr[j, i, c] = orig - h_texel
            fm = scene_loss(scene, tex)
            arr[j, i, c] = orig
            fd = (fp - fm) / (2 * h_texel)
            errs.append(relative_error(getattr(analytic, name)[j, i, c], fd))
        classes[name] = _summary(errs, skipped)

    for name in ("alpha", "diffuse_scale"):
        errs = []
        n = 1 if name == "alpha" else 3
        for c in range(n):
            if name == "alpha":
                orig = tex.alpha
                tex.alpha = orig + h_scalar
                fp = scene_loss(scene, tex)
                tex.alpha = orig - h_scalar
                fm = scene_loss(scene, tex)
                tex.alpha = orig
                a = analytic.alpha
            else:
                orig = tex.diffuse_scale[c]
                tex.diffuse_scale[c] = orig + h_scalar
                fp = scene_loss(scene, tex)
                tex.diffuse_scale[c] = orig - h_scalar
                fm = scene_loss(scene, tex)
                tex.diffuse_scale[c] = orig
                a = analytic.diffuse_scale[c]
            errs.append(relative_error(a, (fp - fm) / (2 * h_scalar)))
        classes[name] = _summary(errs, 0)

    passed = all(c["max_rel"] < threshold for c in classes.values())
    return GradCheckReport(threshold, classes, passed)


def _summary(errs, skipped) -> dict:
    errs = np.asarray(errs, dtype=np.float64)
    return {
        "n": int(errs.size),
        "skipped": int(skipped),
        "max_rel": float(errs.max()) if errs.size else 0.0,
        "mean_rel": float(errs.mean()) if errs.size else 0.0,
    }
