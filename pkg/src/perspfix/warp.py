"""Forward warping by point splatting with a tolerant z-buffer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _accel
from .camgeom import CameraIntrinsics, RigidTransform, project_points, unproject_grid
from .errors import InvalidInputError

SNAP_EPS = 1e-7  # projected coordinates this close to an integer are snapped onto it


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or valid.shape != values.shape:
            raise InvalidInputError("depth map must be a 2-D array with a matching validity mask")
        with np.errstate(invalid="ignore"):
            valid = valid & np.isfinite(values) & (values > 0)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, values) -> "DepthMap":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones(values.shape, dtype=bool))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class AttributedPointCloud:
    points: np.ndarray  # (N, 3)
    attributes: np.ndarray  # (N, C)
    source_pixel: np.ndarray  # (N, 2) as (u, v)

    def __post_init__(self):
        n = len(self.points)
        if len(self.attributes) != n or len(self.source_pixel) != n:
            raise InvalidInputError("points, attributes and source pixels must have equal length")

    def __len__(self):
        return len(self.points)


@dataclass
class SplatStats:
    n_points: int = 0
    behind_camera: int = 0
    outside_image: int = 0


@dataclass
class WarpedBundle:
    image: np.ndarray  # (H, W, C)
    coverage: np.ndarray  # (H, W) in [0, 1]
    zbuffer: np.ndarray  # (H, W), 0 where coverage == 0
    stats: SplatStats = field(default_factory=SplatStats)


def as_depth_map(depth) -> DepthMap:
    return depth if isinstance(depth, DepthMap) else DepthMap.from_array(depth)


def _as_hwc(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return image[:, :, None] if image.ndim == 2 else image


def build_point_cloud(image, depth, mask, k: CameraIntrinsics,
                      mask_threshold: float = 0.5) -> AttributedPointCloud:
    image = _as_hwc(image)
    depth = as_depth_map(depth)
    mask = np.asarray(mask, dtype=np.float64)
    if image.shape[:2] != depth.shape or mask.shape != depth.shape:
        raise InvalidInputError(
            f"dimension mismatch: image {image.shape[:2]}, depth {depth.shape}, mask {mask.shape}")
    sel = (mask >= mask_threshold) & depth.valid
    vs, us = np.nonzero(sel)
    pts = unproject_grid(us.astype(np.float64), vs.astype(np.float64), depth.values[vs, us], k)
    return AttributedPointCloud(pts.reshape(-1, 3), image[vs, us].reshape(len(us), image.shape[2]),
                                np.stack([us, vs], axis=1).astype(np.float64))


def _snap(x: np.ndarray) -> np.ndarray:
    r = np.round(x)
    return np.where(np.abs(x - r) < SNAP_EPS, r, x)


@_accel.njit
def _splat_numba(us, vs, zs, attrs, h, w, half, n1d, z_eps):
    n, c = attrs.shape
    zmin = np.full((h, w), np.inf)
    for i in range(n):
        u0 = math.floor(us[i] - half) + 1
        v0 = math.floor(vs[i] - half) + 1
        for b in range(n1d):
            y = v0 + b
            if y < 0 or y >= h:
                continue
            wy = 1.0 - abs(vs[i] - y) / half
            if wy <= 0.0:
                continue
            for a in range(n1d):
                x = u0 + a
                if x < 0 or x >= w:
                    continue
                wx = 1.0 - abs(us[i] - x) / half
                if wx <= 0.0:
                    continue
                if zs[i] < zmin[y, x]:
                    zmin[y, x] = zs[i]
    acc = np.zeros((h, w, c))
    wsum = np.zeros((h, w))
    wx_all = np.zeros(n1d)
    wy_all = np.zeros(n1d)
    for i in range(n):
        u0 = math.floor(us[i] - half) + 1
        v0 = math.floor(vs[i] - half) + 1
        sx = 0.0
        sy = 0.0
        for a in range(n1d):
            wx_all[a] = max(0.0, 1.0 - abs(us[i] - (u0 + a)) / half)
            sx += wx_all[a]
        for b in range(n1d):
            wy_all[b] = max(0.0, 1.0 - abs(vs[i] - (v0 + b)) / half)
            sy += wy_all[b]
        for b in range(n1d):
            y = v0 + b
            if y < 0 or y >= h or wy_all[b] <= 0.0:
                continue
            for a in range(n1d):
                x = u0 + a
                if x < 0 or x >= w or wx_all[a] <= 0.0:
                    continue
                if zs[i] > zmin[y, x] + z_eps:
                    continue
                wgt = (wx_all[a] / sx) * (wy_all[b] / sy)
                wsum[y, x] += wgt
                for ch in range(c):
                    acc[y, x, ch] += wgt * attrs[i, ch]
    return acc, wsum, zmin


def _splat_numpy(us, vs, zs, attrs, h, w, half, n1d, z_eps):
    n, c = attrs.shape
    offs = np.arange(n1d)
    u0 = np.floor(us - half).astype(np.int64) + 1
    v0 = np.floor(vs - half).astype(np.int64) + 1
    xs = u0[:, None] + offs[None, :]  # (N, n1d)
    ys = v0[:, None] + offs[None, :]
    wx = np.maximum(0.0, 1.0 - np.abs(us[:, None] - xs) / half)
    wy = np.maximum(0.0, 1.0 - np.abs(vs[:, None] - ys) / half)
    sx = np.zeros(n)
    sy = np.zeros(n)
    for a in range(n1d):  # sequential sums to match the compiled kernel bit-for-bit
        sx += wx[:, a]
        sy += wy[:, a]
    # contributions ordered point-major, then row, then column (kernel loop order)
    X = np.broadcast_to(xs[:, None, :], (n, n1d, n1d)).reshape(n, n1d * n1d)
    Y = np.broadcast_to(ys[:, :, None], (n, n1d, n1d)).reshape(n, n1d * n1d)
    WX = np.broadcast_to(wx[:, None, :], (n, n1d, n1d)).reshape(n, n1d * n1d)
    WY = np.broadcast_to(wy[:, :, None], (n, n1d, n1d)).reshape(n, n1d * n1d)
    ok = (X >= 0) & (X < w) & (Y >= 0) & (Y < h) & (WX > 0) & (WY > 0)
    pid = np.broadcast_to(np.arange(n)[:, None], ok.shape)[ok]
    flat = (Y * w + X)[ok]
    zmin = np.full(h * w, np.inf)
    np.minimum.at(zmin, flat, zs[pid])
    keep = zs[pid] <= zmin[flat] + z_eps
    pid, flat = pid[keep], flat[keep]
    wgt = ((WX / sx[:, None]) * (WY / sy[:, None]))[ok][keep]
    wsum = np.zeros(h * w)
    np.add.at(wsum, flat, wgt)
    acc = np.zeros((h * w, c))
    for ch in range(c):
        np.add.at(acc[:, ch], flat, wgt * attrs[pid, ch])
    return acc.reshape(h, w, c), wsum.reshape(h, w), zmin.reshape(h, w)


def splat(cloud: AttributedPointCloud, k2: CameraIntrinsics, m: RigidTransform, out_size,
          radius: float = 0.5, z_eps: float = 0.005) -> WarpedBundle:
    """Transform ``cloud`` by ``m``, project with ``k2`` and splat into an image.

    Each point deposits a separable tent footprint of half-width ``2 * radius``
    (bilinear weights for the default radius 0.5), normalized to unit mass.
    Per pixel, contributions more than ``z_eps`` behind the nearest one are
    dropped; survivors are weight-averaged. ``out_size`` is ``(width, height)``.
    """
    w, h = int(out_size[0]), int(out_size[1])
    if w <= 0 or h <= 0:
        raise InvalidInputError("out_size must be positive")
    if not radius >= 0.5:
        raise InvalidInputError("splat radius must be >= 0.5 px")
    c = cloud.attributes.shape[1] if cloud.attributes.ndim == 2 else 1
    stats = SplatStats(n_points=len(cloud))
    if len(cloud) == 0:
        return WarpedBundle(np.zeros((h, w, c)), np.zeros((h, w)), np.zeros((h, w)), stats)

    # canonical order so the accumulation does not depend on input point order
    src = cloud.source_pixel
    pts = np.asarray(cloud.points, dtype=np.float64)
    order = np.lexsort((pts[:, 1], pts[:, 0], pts[:, 2], src[:, 0], src[:, 1]))
    pts = m.apply(pts[order])
    attrs = np.ascontiguousarray(np.asarray(cloud.attributes, dtype=np.float64).reshape(len(cloud), c)[order])

    front = pts[:, 2] > 0
    stats.behind_camera = int((~front).sum())
    pts, attrs = pts[front], attrs[front]
    us, vs, zs = project_points(pts, k2)
    us, vs = _snap(us), _snap(vs)
    half = 2.0 * radius
    inside = (us > -half) & (us < w - 1 + half) & (vs > -half) & (vs < h - 1 + half)
    stats.outside_image = int((~inside).sum())
    us, vs, zs, attrs = us[inside], vs[inside], zs[inside], attrs[inside]
    n1d = int(math.ceil(2 * half))

    kernel = _splat_numba if _accel.use_numba() else _splat_numpy
    acc, wsum, zmin = kernel(np.ascontiguousarray(us), np.ascontiguousarray(vs),
                             np.ascontiguousarray(zs), np.ascontiguousarray(attrs), h, w, half, n1d, float(z_eps))
    covered = wsum > 0
    image = np.zeros((h, w, c))
    image[covered] = acc[covered] / wsum[covered][:, None]
    coverage = np.minimum(1.0, wsum)
    zbuffer = np.where(covered, zmin, 0.0)
    return WarpedBundle(image, coverage, zbuffer, stats)


@dataclass
class WarpResult:
    rgb: WarpedBundle
    features: Optional[WarpedBundle]
    mask: np.ndarray  # coverage mask shared by every output


def warp_frame(rgb, features, mask, depth, k1: CameraIntrinsics, k2: CameraIntrinsics, m: RigidTransform,
               radius: float = 0.5, z_eps: float = 0.005, mask_threshold: float = 0.5) -> WarpResult:
    """Warp RGB (and optional C-channel features) through one shared cloud and transform."""
    rgb = _as_hwc(rgb)
    n_rgb = rgb.shape[2]
    attrs = rgb
    if features is not None:
        features = _as_hwc(features)
        if features.shape[:2] != rgb.shape[:2]:
            raise InvalidInputError("feature map and image sizes differ")
        attrs = np.concatenate([rgb, features], axis=2)
    cloud = build_point_cloud(attrs, depth, mask, k1, mask_threshold)
    h, w = rgb.shape[:2]
    out = splat(cloud, k2, m, (w, h), radius, z_eps)
    rgb_b = WarpedBundle(out.image[:, :, :n_rgb], out.coverage, out.zbuffer, out.stats)
    feat_b = None
    if features is not None:
        feat_b = WarpedBundle(out.image[:, :, n_rgb:], out.coverage, out.zbuffer, out.stats)
    return WarpResult(rgb_b, feat_b, out.coverage)
