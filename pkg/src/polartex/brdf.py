"""Skin reflectance under a co-located point light.

Every function broadcasts over numpy arrays.  ``cosv`` is the cosine
between the shading normal and the shared view/light direction; since the
light sits at the camera, the half vector equals the view vector and all
Cook-Torrance cosines collapse to ``cosv``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core.types import DEFAULT_INTENSITY, F0

LOBES = (12.0, 48.0)
DIFFUSE_NORM = 28.0 / (23.0 * np.pi)


@dataclass
class ShadingInputs:
    """Per-point shading state.  Arrays broadcast: ``cosv``/``dist``/``ks``
    are ``(N,)``, ``kd``/``ka``/``intensity`` are ``(N, 3)`` or ``(3,)``."""

    cosv: np.ndarray
    dist: np.ndarray
    kd: np.ndarray
    ks: np.ndarray
    ka: np.ndarray
    alpha: float
    intensity: np.ndarray = DEFAULT_INTENSITY
    f0: float = F0

    def __post_init__(self):
        self.cosv = np.clip(np.asarray(self.cosv, dtype=np.float64), 0.0, 1.0)
        self.dist = np.asarray(self.dist, dtype=np.float64)
        self.kd = np.asarray(self.kd, dtype=np.float64)
        self.ks = np.asarray(self.ks, dtype=np.float64)
        self.ka = np.asarray(self.ka, dtype=np.float64)
        self.intensity = np.asarray(self.intensity, dtype=np.float64)


@dataclass
class BrdfDerivatives:
    """Partials of outgoing radiance, one column per color channel.

    ``dkd`` and ``dka`` are the diagonal entries (channel c only depends on
    kd[c], ka[c])."""

    dkd: np.ndarray
    dks: np.ndarray
    dka: np.ndarray
    dalpha: np.ndarray
    dcosv: np.ndarray


def fresnel_schlick(cosv, f0: float = F0):
    return f0 + (1.0 - f0) * (1.0 - cosv) ** 5


def _fresnel_d(cosv, f0: float = F0):
    return -5.0 * (1.0 - f0) * (1.0 - cosv) ** 4


def blinn_phong_lobe(cosv, p: float):
    return (p + 2.0) / (2.0 * np.pi) * np.power(cosv, p)


def blinn_phong_D(cosv, alpha):
    """alpha * D12 + (1 - alpha) * D48 with normalized lobes; alpha -> 1 is
    the wider (rougher) lobe."""
    lo, hi = LOBES
    return alpha * blinn_phong_lobe(cosv, lo) + (1.0 - alpha) * blinn_phong_lobe(cosv, hi)


def _blinn_phong_D_d(cosv, alpha):
    lo, hi = LOBES
    d_lo = (lo + 2.0) / (2.0 * np.pi) * lo * np.power(cosv, lo - 1.0)
    d_hi = (hi + 2.0) / (2.0 * np.pi) * hi * np.power(cosv, hi - 1.0)
    return alpha * d_lo + (1.0 - alpha) * d_hi


def geometry_term(cosv):
    return np.minimum(1.0, 2.0 * np.square(cosv))


def _geometry_d(cosv):
    return np.where(2.0 * np.square(cosv) < 1.0, 4.0 * cosv, 0.0)


def _sss(cosv):
    # 1 - (1 - cosv/2)^5, shared by the diffuse and ambient terms
    return 1.0 - (1.0 - 0.5 * cosv) ** 5


def _sss_d(cosv):
    return 2.5 * (1.0 - 0.5 * cosv) ** 4


def f_specular(inp: ShadingInputs):
    c = inp.cosv
    safe = np.where(c > 0, c, 1.0)
    val = (
        inp.ks
        * blinn_phong_D(c, inp.alpha)
        * geometry_term(c)
        * fresnel_schlick(c, inp.f0)
        / (4.0 * safe * safe)
    )
    val = np.where(c > 0, val, 0.0)
    return np.repeat(np.asarray(val)[..., None], 3, axis=-1)


def f_diffuse(inp: ShadingInputs):
    q = _sss(inp.cosv)
    return DIFFUSE_NORM * inp.kd * (1.0 - inp.f0) * (q * q)[..., None]


def f_ambient(inp: ShadingInputs):
    q = _sss(inp.cosv)
    return inp.ka * (1.0 - (1.0 - inp.f0) * q * q)[..., None]


def _falloff(inp: ShadingInputs):
    if np.any(inp.dist <= 0):
        raise ValueError("light distance must be positive")
    return inp.intensity / (inp.dist * inp.dist)[..., None]


def radiance(inp: ShadingInputs, mode: str = "parallel"):
    """Outgoing radiance (..., 3).  Cross-polarized light carries no
    single-bounce specular, so ``mode='cross'`` drops f_s."""
    _check_mode(mode)
    f = f_diffuse(inp) + f_ambient(inp)
    if mode == "parallel":
        f = f + f_specular(inp)
    return f * inp.cosv[..., None] * _falloff(inp)


def radiance_derivatives(inp: ShadingInputs, mode: str = "parallel") -> BrdfDerivatives:
    _check_mode(mode)
    c = inp.cosv
    K = _falloff(inp)
    f0 = inp.f0
    q = _sss(c)
    dq = _sss_d(c)

    diff_mod = DIFFUSE_NORM * (1.0 - f0) * q * q
    amb_mod = 1.0 - (1.0 - f0) * q * q
    dkd = (diff_mod * c)[..., None] * K
    dka = (amb_mod * c)[..., None] * K

    # d/dc of c*f_d and c*f_a
    d_cfd = DIFFUSE_NORM * (1.0 - f0) * (q * q + 2.0 * c * q * dq)
    d_cfa = amb_mod - c * (1.0 - f0) * 2.0 * q * dq
    dcos = (inp.kd * d_cfd[..., None] + inp.ka * d_cfa[..., None]) * K

    shape = np.broadcast_shapes(dkd.shape, inp.kd.shape, K.shape)
    dkd = np.broadcast_to(dkd, shape)
    dka = np.broadcast_to(dka, shape)
    dcos = np.broadcast_to(dcos, shape)
    zeros = np.zeros(shape)
    if mode == "cross":
        return BrdfDerivatives(dkd, zeros, dka, zeros.copy(), dcos)

    # c * f_s = ks * D G F / (4 c)
    pos = c > 0
    safe = np.where(pos, c, 1.0)
    D = blinn_phong_D(c, inp.alpha)
    G = geometry_term(c)
    F = fresnel_schlick(c, f0)
    dD = _blinn_phong_D_d(c, inp.alpha)
    dG = _geometry_d(c)
    dF = _fresnel_d(c, f0)
    spec_unit = np.where(pos, D * G * F / (4.0 * safe), 0.0)
    dks = np.broadcast_to(spec_unit[..., None] * K, shape)
    lobe_diff = blinn_phong_lobe(c, LOBES[0]) - blinn_phong_lobe(c, LOBES[1])
    dalpha = np.broadcast_to(
        (inp.ks * np.where(pos, lobe_diff * G * F / (4.0 * safe), 0.0))[..., None] * K, shape
    )
    d_spec = np.where(
        pos,
        ((dD * G * F + D * dG * F + D * G * dF) / safe - D * G * F / (safe * safe)) / 4.0,
        0.0,
    )
    dcos = dcos + (inp.ks * d_spec)[..., None] * K
    return BrdfDerivatives(dkd, dks, dka, dalpha, dcos)


def _check_mode(mode: str) -> None:
    if mode not in ("cross", "parallel"):
        raise ValueError(f"mode must be 'cross' or 'parallel', got {mode!r}")
