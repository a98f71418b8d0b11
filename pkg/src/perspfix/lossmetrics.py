"""Training-loss formulas as plain value computations, and evaluation metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .errors import DegenerateGeometryError, EmptyForegroundError, InvalidInputError

BCE_EPS = 1e-7
LUMA = np.array([0.299, 0.587, 0.114])


class EmptyRegionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 0.5
    alpha3: float = 1.0
    mu: float = 1.0
    gamma: float = 0.0  # perceptual term needs a plugged-in network
    omega_all: float = 0.2
    omega_face: float = 1.0
    omega_missing: float = 5.0
    beta: float = 1.0
    rho: float = 20.0
    lam: float = 0.5

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (math.isfinite(value) and value >= 0):
                raise InvalidInputError(f"loss weight {name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class LossToggles:
    depth: bool = True
    photo: bool = True
    gan: bool = True
    mask: bool = True


# training schedule: (weight overrides, toggles) per stage
STAGES = {
    1: ({}, LossToggles(photo=False, gan=False, mask=False)),
    2: ({}, LossToggles(depth=False)),
    3: ({"omega_missing": 0.0, "beta": 0.0, "rho": 10.0}, LossToggles()),
    4: ({}, LossToggles(depth=False)),
}


def stage_config(stage: int, base: LossWeights | None = None) -> tuple[LossWeights, LossToggles]:
    if stage not in STAGES:
        raise InvalidInputError(f"unknown training stage {stage}")
    overrides, toggles = STAGES[stage]
    return replace(base or LossWeights(), **overrides), toggles


@dataclass
class DiscriminatorResponse:
    score_map: np.ndarray
    feature_map: np.ndarray = field(default_factory=lambda: np.zeros(1))


def _fg(mask) -> np.ndarray:
    return np.asarray(mask) >= 0.5


def _depth_inputs(d_pred, d_gt, mask):
    d_pred = np.asarray(getattr(d_pred, "values", d_pred), dtype=np.float64)
    d_gt = np.asarray(getattr(d_gt, "values", d_gt), dtype=np.float64)
    m = _fg(mask)
    if d_pred.shape != d_gt.shape or m.shape != d_pred.shape:
        raise InvalidInputError("depth maps and mask must share dimensions")
    if not m.any():
        raise EmptyForegroundError("depth loss needs a non-empty mask")
    return d_pred, d_gt, m


def multiscale_gradient_loss(d_pred, d_gt, mask, scales=(1, 2, 4, 8)) -> float:
    """Sum over subsampling factors of masked mean |dx| + |dy| of the depth residual.

    Differences are divided by the factor so they are slopes per source pixel.
    A difference counts only when both of its endpoints are in the mask.
    """
    d_pred, d_gt, m = _depth_inputs(d_pred, d_gt, mask)
    diff = np.where(m, d_pred - d_gt, 0.0)
    total = 0.0
    for s in scales:
        r, ms = diff[::s, ::s], m[::s, ::s]
        vx = ms[:, 1:] & ms[:, :-1]
        vy = ms[1:, :] & ms[:-1, :]
        if vx.any():
            total += np.abs(r[:, 1:] - r[:, :-1])[vx].mean() / s
        if vy.any():
            total += np.abs(r[1:, :] - r[:-1, :])[vy].mean() / s
    return float(total)


def depth_loss(d_pred, d_gt, mask, w: LossWeights = LossWeights()) -> float:
    """Masked L1 + L1-of-tanh + multi-scale gradient terms (tanh on raw meters)."""
    p, g, m = _depth_inputs(d_pred, d_gt, mask)
    l1 = np.abs(p[m] - g[m]).mean()
    ltanh = np.abs(np.tanh(p[m]) - np.tanh(g[m])).mean()
    lgrad = multiscale_gradient_loss(p, g, m) if w.alpha3 else 0.0
    return float(w.alpha1 * l1 + w.alpha2 * ltanh + w.alpha3 * lgrad)


PerceptualHook = Callable[[np.ndarray, np.ndarray, np.ndarray], float]


def photometric_loss(i_g, i_t, region_masks: dict, w: LossWeights = LossWeights(),
                     perceptual_hook: Optional[PerceptualHook] = None) -> float:
    """Weighted sum over regions ``all``/``face``/``missing`` of ``mu*L1 + gamma*perceptual``.

    ``region_masks`` may omit ``all`` (whole image). A region with no pixels
    contributes 0 and raises an :class:`EmptyRegionWarning`.
    """
    i_g = np.asarray(i_g, dtype=np.float64)
    i_t = np.asarray(i_t, dtype=np.float64)
    if i_g.shape != i_t.shape:
        raise InvalidInputError("images differ in size")
    absdiff = np.abs(i_g - i_t)
    if absdiff.ndim == 3:
        absdiff = absdiff.mean(axis=2)
    weights = {"all": w.omega_all, "face": w.omega_face, "missing": w.omega_missing}
    total = 0.0
    for name, omega in weights.items():
        region = region_masks.get(name)
        region = np.ones(absdiff.shape, dtype=bool) if region is None else _fg(region)
        if region.shape != absdiff.shape:
            raise InvalidInputError(f"region mask {name!r} has the wrong size")
        if not region.any():
            warnings.warn(f"region {name!r} is empty; it contributes 0", EmptyRegionWarning, stacklevel=2)
            continue
        term = w.mu * absdiff[region].mean()
        if perceptual_hook is not None and w.gamma:
            term += w.gamma * float(perceptual_hook(i_g, i_t, region))
        total += omega * term
    return float(total)


def generator_gan_loss(d_fake: DiscriminatorResponse, d_real: DiscriminatorResponse) -> float:
    ff = np.asarray(d_fake.feature_map, dtype=np.float64)
    fr = np.asarray(d_real.feature_map, dtype=np.float64)
    if ff.shape != fr.shape:
        raise InvalidInputError("discriminator feature maps differ in shape")
    return float(np.mean(ff - fr) - np.mean(np.asarray(d_fake.score_map, dtype=np.float64)))


def discriminator_hinge_loss(d_fake_scores, d_real_scores) -> float:
    fake = np.asarray(d_fake_scores, dtype=np.float64)
    real = np.asarray(d_real_scores, dtype=np.float64)
    # standard hinge: real scores are penalized below +1 and fake scores above -1
    return float(-np.mean(np.minimum(0.0, -1.0 - fake)) - np.mean(np.minimum(0.0, -1.0 + real)))


def mask_bce_loss(m_g, m_t) -> float:
    g = np.clip(np.asarray(m_g, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    t = np.asarray(m_t, dtype=np.float64)
    if g.shape != t.shape:
        raise InvalidInputError("masks differ in size")
    return float(-np.mean(t * np.log(g) + (1.0 - t) * np.log(1.0 - g)))


def overall_loss(parts: dict, w: LossWeights = LossWeights(), toggles: LossToggles = LossToggles()) -> float:
    """``depth + photo + beta*gan + rho*mask`` with disabled terms skipped; missing parts count as 0."""
    total = 0.0
    if toggles.depth:
        total += parts.get("depth", 0.0)
    if toggles.photo:
        total += parts.get("photo", 0.0)
    if toggles.gan:
        total += w.beta * parts.get("gan", 0.0)
    if toggles.mask:
        total += w.rho * parts.get("mask", 0.0)
    return float(total)


def psnr(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError("images differ in size")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * math.log10(1.0 / mse))


def masked_psnr(a, b, mask) -> float:
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyForegroundError("empty comparison mask")
    return psnr(np.asarray(a)[m], np.asarray(b)[m])


def to_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img[:, :, :3] @ LUMA


def _gauss_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def ssim(a, b, win: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully-inside Gaussian windows (luma for color input, range 1)."""
    x, y = to_gray(a), to_gray(b)
    if x.shape != y.shape:
        raise InvalidInputError("images differ in size")
    if min(x.shape) < win:
        raise InvalidInputError(f"image smaller than the {win}x{win} window")
    g = _gauss_window(win, sigma)

    def filt(z):
        z = ndimage.correlate1d(z, g, axis=0, mode="constant")
        return ndimage.correlate1d(z, g, axis=1, mode="constant")

    c1, c2 = k1 ** 2, k2 ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    p = win // 2
    return float(smap[p:-p, p:-p].mean())


def similarity_align(src, dst):
    """Least-squares scale, rotation and translation mapping ``src`` onto ``dst`` (2-D points)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise InvalidInputError("landmark sets must be equal-length (N, 2) arrays")
    if len(src) < 3:
        raise DegenerateGeometryError("need at least 3 landmarks")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = (xs ** 2).sum() / len(src)
    if np.linalg.matrix_rank(xs, tol=1e-9 * max(1.0, np.abs(xs).max())) < 2 or var_s == 0:
        raise DegenerateGeometryError("landmarks are collinear")
    cov = xd.T @ xs / len(src)
    u, d, vt = np.linalg.svd(cov)
    s = np.eye(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[1, 1] = -1
    rot = u @ s @ vt
    scale = (d * np.diag(s)).sum() / var_s
    trans = mu_d - scale * rot @ mu_s
    return scale, rot, trans


def landmark_error(lm_pred, lm_ref, image_size: float = 512) -> float:
    """Mean landmark distance after similarity alignment, divided by the image side length."""
    scale, rot, trans = similarity_align(lm_pred, lm_ref)
    aligned = scale * np.asarray(lm_pred, dtype=np.float64) @ rot.T + trans
    return float(np.linalg.norm(aligned - np.asarray(lm_ref, dtype=np.float64), axis=1).mean() / image_size)
