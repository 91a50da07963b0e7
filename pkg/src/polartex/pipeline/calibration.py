"""Light attenuation calibration from views of a textured plane.

A per-camera-pixel gain and the plane's albedo are fitted jointly.  Scaling
the gain up and the albedo down by the same factor leaves every render
unchanged, so after each step the gain is renormalized to mean 1 over a
central window and the albedo absorbs the factor.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from ..core.types import CaptureView, TextureSet, TriMesh
from ..grad import fragment_backward
from ..optim import (
    AdamState,
    BatchSampler,
    LevelLog,
    NumericalError,
    ScheduleConfig,
    adam_step,
    lr_at,
    resample_textures,
)
from ..raster import evaluate
from .stages import FitConfig, backproject_kd, prepare_views

log = logging.getLogger(__name__)


@dataclass
class AttenuationResult:
    attenuation: np.ndarray  # (H, W, C)
    textures: TextureSet
    observations: np.ndarray  # (H, W) number of views with a weighted pixel there
    logs: list[LevelLog]


# a vignette needs per-pixel gain moves of several tenths, out of reach of
# the texture rate before the schedule decays it
CALIBRATION_LR0 = 1e-2


def calibration_config(**schedule) -> FitConfig:
    """Default calibration setup: two levels of 1000 steps at CALIBRATION_LR0."""
    kw = {"levels": (64, 128), "iterations": 1000, "lr0": CALIBRATION_LR0, **schedule}
    return FitConfig(ScheduleConfig(**kw))


def center_window(shape, area_fraction: float = 0.1) -> tuple[slice, slice]:
    """Centered box covering ``area_fraction`` of an (H, W) image."""
    H, W = shape
    side = np.sqrt(area_fraction)
    h = max(1, int(round(H * side)))
    w = max(1, int(round(W * side)))
    y0, x0 = (H - h) // 2, (W - w) // 2
    return slice(y0, y0 + h), slice(x0, x0 + w)


def calibrate_attenuation(
    plane_views: list[CaptureView],
    plane_mesh: TriMesh,
    config: FitConfig | None = None,
    channels: int = 1,
    center_fraction: float = 0.1,
    min_coverage: float = 0.5,
) -> AttenuationResult:
    """Fit the attenuation gain (shared by all views, initialized to 1)
    jointly with the plane albedo over the coarse-to-fine schedule of
    ``config``, by default :func:`calibration_config`."""
    config = config or calibration_config()
    sched = config.schedule
    if not plane_views:
        raise ValueError("no plane views")
    shape = plane_views[0].camera.shape
    if any(v.camera.shape != shape for v in plane_views):
        raise ValueError("all calibration views must share one image size")
    H, W = shape
    ones = np.ones(shape + (1,))
    prepared = prepare_views(plane_views, plane_mesh, "cross", config.light_intensity,
                             config.workers, attenuation=ones)
    for p in prepared:
        cov = p.geometry.count / (H * W)
        if cov < min_coverage:
            log.warning("view %s: plane covers only %.0f%% of the image", p.name, 100 * cov)

    win = center_window(shape, center_fraction)
    gain = np.ones((H * W, channels))
    tex = TextureSet.initial(sched.levels[0])
    tex.kd = backproject_kd(prepared, sched.levels[0], config.mip_weighting)
    sampler = BatchSampler(len(prepared), sched.batch_size, sched.seed)
    logs: list[LevelLog] = []

    for li, (R, iters) in enumerate(zip(sched.levels, sched.iterations)):
        if li > 0:
            tex = resample_textures(tex, R)
        t0 = time.perf_counter()
        frags, targets = [], []
        for p in prepared:
            f = p.geometry.fragments(R, drop_unweighted=config.mip_weighting,
                                     mip_weighting=config.mip_weighting)
            frags.append(f)
            targets.append(p.target if f.source is None else p.target[f.source])
        state = AdamState(lr0=sched.lr0)
        losses, lrs = [], []
        for t in range(iters):
            lr = lr_at(t, sched.lr0, sched.lr_decay)
            batch = sampler.next()
            norm = max(sum(prepared[i].geometry.count for i in batch), 1)
            g_kd = np.zeros_like(tex.kd)
            g_gain = np.zeros_like(gain)
            loss = 0.0
            for i in batch:
                f = dataclasses.replace(frags[i], atten=gain[frags[i].pixel], _taps={})
                ev = evaluate(f, tex, "cross")
                l, g = fragment_backward(f, tex, "cross", targets[i], None, norm,
                                         wrt=("kd",), ev=ev)
                loss += l
                g_kd += g.kd
                per = (ev.weight / norm)[:, None] * np.sign(ev.rendered - targets[i]) * ev.radiance
                if channels == 1:
                    per = per.sum(axis=1, keepdims=True)
                for c in range(channels):
                    g_gain[:, c] += np.bincount(f.pixel, weights=per[:, c], minlength=H * W)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite calibration loss at level {R}, iteration {t}")
            new = adam_step(state, {"kd": tex.kd, "gain": gain}, {"kd": g_kd, "gain": g_gain}, lr,
                            bounds={"kd": (0.0, None), "gain": (1e-6, None)})
            gain = new["gain"]
            scale = gain.reshape(H, W, channels)[win].mean()
            gain = gain / scale
            tex.kd = new["kd"] * scale
            losses.append(loss)
            lrs.append(lr)
        seconds = time.perf_counter() - t0
        logs.append(LevelLog(R, np.asarray(losses), np.zeros(len(losses)), np.asarray(lrs), seconds))
        if iters:
            log.info("calibration level %d (%d^2): loss %.6g -> %.6g, %.1fs",
                     li, R, losses[0], losses[-1], seconds)

    counts = np.zeros(H * W)
    for f, p in zip(frags, prepared):
        ev = evaluate(f, tex, "cross")
        counts += np.bincount(f.pixel, weights=(ev.weight > 0).astype(float), minlength=H * W)
    return AttenuationResult(gain.reshape(H, W, channels), tex, counts.reshape(H, W), logs)
