"""Post-processing: Laplacian blending, mask feathering, dilation, pull-push fill and compositing."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass
class ImagePyramid:
    levels: list
    kind: str  # "gaussian" or "laplacian"

    @property
    def shapes(self):
        return [lv.shape[:2] for lv in self.levels]


def max_levels(shape) -> int:
    """Deepest pyramid allowed for ``shape``; the coarsest level may shrink to one pixel."""
    return int(math.floor(math.log2(min(shape[:2])))) + 2


def _blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = ndimage.convolve1d(img, kernel, axis=0, mode="reflect")
    return ndimage.convolve1d(out, kernel, axis=1, mode="reflect")


def pyr_down(img: np.ndarray) -> np.ndarray:
    return _blur(img, BINOMIAL5)[::2, ::2]


def pyr_up(img: np.ndarray, shape) -> np.ndarray:
    """Zero-insert to ``shape`` (rows, cols) and interpolate with the doubled binomial kernel.

    Near the border the reflected zero rows/columns would bias the result, so it
    is divided by the same interpolation of a ones image (exactly 1 inside).
    """
    shape = tuple(shape[:2])
    up = np.zeros(shape + img.shape[2:])
    up[::2, ::2] = img
    ones = np.zeros(shape)
    ones[::2, ::2] = 1.0
    norm = _blur(ones, 2.0 * BINOMIAL5)
    out = _blur(up, 2.0 * BINOMIAL5)
    return out / (norm[:, :, None] if out.ndim == 3 else norm)


def _check_levels(img, n_levels):
    if n_levels < 1 or n_levels > max_levels(img.shape):
        raise InvalidInputError(f"n_levels={n_levels} outside [1, {max_levels(img.shape)}] for shape {img.shape[:2]}")


def gaussian_pyramid(img, n_levels: int) -> ImagePyramid:
    img = np.asarray(img, dtype=np.float64)
    _check_levels(img, n_levels)
    levels = [img]
    for _ in range(n_levels - 1):
        levels.append(pyr_down(levels[-1]))
    return ImagePyramid(levels, "gaussian")


def laplacian_pyramid(img, n_levels: int) -> ImagePyramid:
    g = gaussian_pyramid(img, n_levels).levels
    levels = [g[i] - pyr_up(g[i + 1], g[i].shape) for i in range(n_levels - 1)]
    levels.append(g[-1])
    return ImagePyramid(levels, "laplacian")


def reconstruct(pyr: ImagePyramid) -> np.ndarray:
    if pyr.kind != "laplacian":
        raise InvalidInputError("can only reconstruct a Laplacian pyramid")
    out = pyr.levels[-1]
    for lv in reversed(pyr.levels[:-1]):
        out = lv + pyr_up(out, lv.shape)
    return out


def blend(a, b, mask, n_levels: int = 4, clamp: bool = True) -> np.ndarray:
    """Multi-band blend: ``mask == 1`` selects ``a``, ``mask == 0`` selects ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if a.shape != b.shape or mask.shape != a.shape[:2]:
        raise InvalidInputError(f"blend inputs differ in size: {a.shape}, {b.shape}, mask {mask.shape}")
    _check_levels(a, n_levels)
    if np.all(mask == 1.0) or np.all(mask == 0.0):
        # every pyramid level would pick one input; skip the float round-trip
        out = a if mask.flat[0] == 1.0 else b
        return np.clip(out, 0.0, 1.0) if clamp else out.copy()
    la = laplacian_pyramid(a, n_levels).levels
    lb = laplacian_pyramid(b, n_levels).levels
    gm = gaussian_pyramid(mask, n_levels).levels
    mixed = []
    for xa, xb, m in zip(la, lb, gm):
        if xa.ndim == 3:
            m = m[:, :, None]
        mixed.append(m * xa + (1.0 - m) * xb)
    out = reconstruct(ImagePyramid(mixed, "laplacian"))
    return np.clip(out, 0.0, 1.0) if clamp else out


def smooth_mask(mask, sigma: float = 3.0) -> np.ndarray:
    if sigma < 0:
        raise InvalidInputError("sigma must be non-negative")
    mask = np.asarray(mask, dtype=np.float64)
    if sigma == 0:
        return mask.copy()
    return np.clip(ndimage.gaussian_filter(mask, sigma, mode="nearest"), 0.0, 1.0)


def disc(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= r * r


def dilate_mask(mask, radius: int = 5) -> np.ndarray:
    if radius < 0 or int(radius) != radius:
        raise InvalidInputError("dilation radius must be a non-negative integer")
    m = np.asarray(mask) >= 0.5
    if radius == 0:
        return m.astype(np.float64)
    return ndimage.binary_dilation(m, structure=disc(radius)).astype(np.float64)


def compose(fg_blended, bg_inpainted, mask_smoothed) -> np.ndarray:
    """``(1 - m) * bg + m * fg`` per pixel."""
    fg = np.asarray(fg_blended, dtype=np.float64)
    bg = np.asarray(bg_inpainted, dtype=np.float64)
    m = np.asarray(mask_smoothed, dtype=np.float64)
    if fg.shape != bg.shape or m.shape != fg.shape[:2]:
        raise InvalidInputError("composite inputs differ in size")
    if fg.ndim == 3:
        m = m[:, :, None]
    return (1.0 - m) * bg + m * fg


class FillResult(NamedTuple):
    image: np.ndarray
    filled: np.ndarray  # bool, pixels that were synthesized
    warning: bool  # nothing was known; every pixel got the global mean


def _pull(val: np.ndarray, wgt: np.ndarray):
    """2x2 box reduction of weighted values; odd sizes padded with zero weight."""
    h, w = wgt.shape
    ph, pw = h % 2, w % 2
    if ph or pw:
        val = np.pad(val, ((0, ph), (0, pw), (0, 0)))
        wgt = np.pad(wgt, ((0, ph), (0, pw)))
    ws = wgt[0::2, 0::2] + wgt[1::2, 0::2] + wgt[0::2, 1::2] + wgt[1::2, 1::2]
    vs = val[0::2, 0::2] + val[1::2, 0::2] + val[0::2, 1::2] + val[1::2, 1::2]
    return vs, ws


def pull_push(image, known) -> np.ndarray:
    """Fill unknown pixels from coarser averages of the known ones.

    Pull: repeated 2x2 weighted averaging until every coarse cell has data.
    Push: each level keeps its own average where it has weight and takes the
    upsampled coarser estimate elsewhere.
    """
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    wgt = np.asarray(known, dtype=np.float64)
    val = img * wgt[:, :, None]
    stack = [(val, wgt)]
    while stack[-1][1].shape != (1, 1) and not np.all(stack[-1][1] > 0):
        stack.append(_pull(*stack[-1]))
    val, wgt = stack[-1]
    est = np.where(wgt[:, :, None] > 0, val / np.where(wgt > 0, wgt, 1.0)[:, :, None], 0.0)
    for val, wgt in reversed(stack[:-1]):
        h, w = wgt.shape
        up = np.repeat(np.repeat(est, 2, axis=0), 2, axis=1)[:h, :w]
        have = wgt > 0
        est = np.where(have[:, :, None], val / np.where(have, wgt, 1.0)[:, :, None], up)
    return est[:, :, 0] if squeeze else est


def naive_fill(bundle, coverage_threshold: float = 0.5) -> FillResult:
    """Pull-push fill of pixels whose coverage is below ``coverage_threshold``.

    Stand-in for learned inpainting. Pixels at or above the threshold are
    returned untouched.
    """
    image = np.asarray(bundle.image, dtype=np.float64)
    coverage = np.asarray(bundle.coverage, dtype=np.float64)
    known = coverage >= coverage_threshold
    holes = ~known
    if not holes.any():
        return FillResult(image.copy(), holes, False)
    if not known.any():
        warnings.warn("no covered pixels: filling with the global mean", RuntimeWarning, stacklevel=2)
        mean = image.reshape(-1, image.shape[-1]).mean(axis=0) if image.ndim == 3 else image.mean()
        return FillResult(np.broadcast_to(mean, image.shape).copy(), holes, True)
    filled = pull_push(image, known)
    out = image.copy()
    out[holes] = filled[holes]
    return FillResult(out, holes, False)
