"""Adam with projection, the decaying learning rate, batch sampling, the
ambient-map regularizer, and the coarse-to-fine level controller."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .core.texture import downsample_box, is_power_of_two, upsample2x
from .core.types import TextureSet
from .grad import TextureGradients

log = logging.getLogger(__name__)

TEXTURE_PARAMS = ("kd", "ks", "ka", "normal")
SCALAR_PARAMS = ("alpha", "diffuse_scale")


class NumericalError(RuntimeError):
    """Non-finite loss or gradient during optimization."""


def lr_at(t: int, lr0: float = 1e-3, decay: float = 1e-3) -> float:
    """lr0 * 10^(-decay * t); ``t`` counts iterations since the last level
    change."""
    if t < 0:
        raise ValueError("iteration index must be >= 0")
    return lr0 * 10.0 ** (-decay * t)


@dataclass
class AdamState:
    lr0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


# lower/upper bounds applied after every step
BOUNDS = {
    "kd": (0.0, None),
    "ks": (0.0, None),
    "ka": (0.0, None),
    "alpha": (0.0, 1.0),
    "diffuse_scale": (1e-6, None),
}


def project(name: str, value: np.ndarray, bounds=None) -> np.ndarray:
    bounds = BOUNDS if bounds is None else bounds
    if name in bounds:
        lo, hi = bounds[name]
        value = np.clip(value, lo, hi)
    if name == "normal":
        # a texel collapsing to zero length has no direction; reset it to flat
        dead = np.linalg.norm(value, axis=-1) < 1e-8
        if dead.any():
            value = value.copy()
            value[dead] = (0.0, 0.0, 1.0)
    return value


def adam_step(
    state: AdamState, params: dict, grads: dict, lr: float, bounds=None
) -> dict:
    """One bias-corrected Adam update followed by projection onto the box
    constraints.  Returns new parameter arrays; inputs are not modified."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NumericalError(f"non-finite gradient for {name!r} ({bad} entries)")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for name, p in params.items():
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = project(name, p - step, bounds)
    return out


def regularizer(ka: np.ndarray, lambda_tv: float = 1e-2, lambda_zero: float = 1e-3):
    """Anisotropic total variation (forward differences, no wrap) plus an L1
    pull towards zero.  Returns (value, gradient)."""
    ka = np.asarray(ka, dtype=np.float64)
    du = ka[:, 1:] - ka[:, :-1]
    dv = ka[1:, :] - ka[:-1, :]
    value = lambda_tv * (np.abs(du).sum() + np.abs(dv).sum()) + lambda_zero * np.abs(ka).sum()
    grad = lambda_zero * np.sign(ka)
    su, sv = np.sign(du), np.sign(dv)
    grad[:, 1:] += lambda_tv * su
    grad[:, :-1] -= lambda_tv * su
    grad[1:, :] += lambda_tv * sv
    grad[:-1, :] -= lambda_tv * sv
    return float(value), grad


def sample_batch(n_views: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """One batch of distinct view indices, uniformly at random."""
    if n_views < 1:
        raise ValueError("no views to sample from")
    return rng.choice(n_views, size=min(batch_size, n_views), replace=False)


class BatchSampler:
    """Batches drawn from a stream of random permutations, so every view is
    used once per epoch.  A batch straddling two epochs avoids repeating a
    view when it can."""

    def __init__(self, n_views: int, batch_size: int, seed: int = 0):
        if n_views < 1:
            raise ValueError("no views to sample from")
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        self.n = n_views
        self.batch_size = min(batch_size, n_views)
        self.rng = np.random.default_rng(seed)
        self._queue: list[int] = []

    def next(self) -> np.ndarray:
        batch: list[int] = []
        while len(batch) < self.batch_size:
            if not self._queue:
                self._queue = list(self.rng.permutation(self.n))
            pick = next((i for i, v in enumerate(self._queue) if v not in batch), 0)
            batch.append(int(self._queue.pop(pick)))
        return np.asarray(batch)


@dataclass
class ScheduleConfig:
    levels: tuple = (64, 128, 256, 512)
    iterations: int | tuple = 2000
    batch_size: int = 4
    lr0: float = 1e-3
    lr_decay: float = 1e-3
    lambda_tv: float = 1e-2
    lambda_zero: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        self.levels = tuple(int(r) for r in self.levels)
        if not self.levels:
            raise ValueError("at least one level is required")
        if not all(is_power_of_two(r) for r in self.levels):
            raise ValueError(f"levels must be powers of two: {self.levels}")
        if any(b != 2 * a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError(f"levels must double: {self.levels}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if isinstance(self.iterations, int):
            self.iterations = (self.iterations,) * len(self.levels)
        self.iterations = tuple(int(i) for i in self.iterations)
        if len(self.iterations) != len(self.levels):
            raise ValueError("one iteration budget per level is required")
        if any(i < 0 for i in self.iterations):
            raise ValueError("iteration budgets must be >= 0")


class StageObjective(Protocol):
    params: tuple
    n_views: int

    def prepare(self, resolution: int) -> None: ...

    def loss_and_grad(self, tex: TextureSet, batch: np.ndarray) -> tuple[float, TextureGradients]: ...


@dataclass
class LevelLog:
    resolution: int
    loss: np.ndarray
    reg: np.ndarray
    lr: np.ndarray
    seconds: float


def resample_textures(tex: TextureSet, resolution: int) -> TextureSet:
    """Box-downsample or bilinearly upsample every map by powers of two."""
    out = tex.copy()
    while out.resolution > resolution:
        out = _map_all(out, downsample_box)
    while out.resolution < resolution:
        out = _map_all(out, upsample2x)
    return out


def _map_all(tex: TextureSet, fn) -> TextureSet:
    return TextureSet(
        fn(tex.kd), fn(tex.ks), fn(tex.ka), fn(tex.normal), tex.alpha, tex.diffuse_scale.copy()
    )


def _get(tex: TextureSet, name: str) -> np.ndarray:
    return np.asarray(getattr(tex, name), dtype=np.float64)


def _set(tex: TextureSet, name: str, value: np.ndarray) -> None:
    setattr(tex, name, float(value) if name == "alpha" else value)


def coarse_to_fine(
    config: ScheduleConfig,
    objective: StageObjective,
    init: TextureSet,
    logs: list | None = None,
    callback: Callable | None = None,
) -> TextureSet:
    """Run Adam level by level.  The learning rate and the Adam moments are
    reset at every level; textures are upsampled x2 between levels.  The
    objective's ``prepare`` recomputes per-level data such as loss weights.

    ``callback(level, t, tex, loss)`` is invoked after every step.
    """
    tex = resample_textures(init, config.levels[0])
    sampler = BatchSampler(objective.n_views, config.batch_size, config.seed)
    names = tuple(objective.params)
    for li, (R, iters) in enumerate(zip(config.levels, config.iterations)):
        if li > 0:
            tex = resample_textures(tex, R)
        t0 = time.perf_counter()
        objective.prepare(R)
        state = AdamState(lr0=config.lr0)
        losses, regs, lrs = [], [], []
        for t in range(iters):
            lr = lr_at(t, config.lr0, config.lr_decay)
            loss, g = objective.loss_and_grad(tex, sampler.next())
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at level {R}, iteration {t}")
            grads = {n: np.asarray(getattr(g, n), dtype=np.float64) for n in names}
            reg = 0.0
            if "ka" in names and (config.lambda_tv > 0 or config.lambda_zero > 0):
                reg, g_reg = regularizer(tex.ka, config.lambda_tv, config.lambda_zero)
                grads["ka"] = grads["ka"] + g_reg
            new = adam_step(state, {n: _get(tex, n) for n in names}, grads, lr)
            for n, val in new.items():
                _set(tex, n, val)
            losses.append(loss)
            regs.append(reg)
            lrs.append(lr)
            if callback is not None:
                callback(li, t, tex, loss)
        seconds = time.perf_counter() - t0
        if iters:
            log.info("level %d (%d^2): %d iterations, loss %.6g -> %.6g, %.1fs",
                     li, R, iters, losses[0], losses[-1], seconds)
        if logs is not None:
            logs.append(LevelLog(R, np.asarray(losses), np.asarray(regs), np.asarray(lrs), seconds))
    return tex


def write_loss_csv(path, logs: list, stage: str | None = None) -> None:
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["stage", "level", "resolution", "iteration", "lr", "loss", "regularizer"])
        for li, lg in enumerate(logs):
            for t in range(len(lg.loss)):
                w.writerow([stage or "", li, lg.resolution, t, repr(float(lg.lr[t])),
                            repr(float(lg.loss[t])), repr(float(lg.reg[t]))])
