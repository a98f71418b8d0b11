"""Procedural RGB-D portrait scenes rendered by analytic ray casting.

A scene is a handful of ellipsoids (head, nose, torso) in front of a
textured background plane. World coordinates are the close camera's frame.
Rendered depth is the exact z-depth of the ray hit, and the mask is the exact
silhouette of the subject primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from . import _accel
from ._accel import prange
from .camgeom import CameraIntrinsics, RigidTransform, compose_camera_move, project_points, select_anchor_pixel
from .errors import FrustumError, InvalidInputError
from .warp import DepthMap, build_point_cloud, splat

LABEL_BG, LABEL_HEAD, LABEL_NOSE, LABEL_TORSO = 0, 1, 2, 3
SENSOR_WIDTH_MM = 36.0
CLOSE_FOCAL_MM = 26.0
REAR_OFFSET_M = 0.25
REAR_VIEWS = ("centre", "left", "right", "top")


def rot_ypr(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rotation (local to world) from yaw about Y, pitch about X, roll about Z, in radians."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return ry @ rx @ rz


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple
    axes: tuple
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))  # local -> world
    label: int = LABEL_HEAD
    albedo: tuple = (0.8, 0.6, 0.5)
    tex_freq: tuple = (1.5, 1.2)
    tex_phase: tuple = (0.0, 0.0)
    tex_amp: float = 0.2

    def world_to_unit(self) -> np.ndarray:
        """Matrix mapping ``x - center`` to unit-sphere coordinates."""
        return np.diag(1.0 / np.asarray(self.axes, dtype=np.float64)) @ np.asarray(self.rotation).T


@dataclass(frozen=True)
class ProceduralScene:
    primitives: tuple
    background_z: Optional[float] = 2.5
    background_albedo: tuple = (0.35, 0.45, 0.55)
    light: tuple = (0.3, -0.5, -0.8)  # direction the light travels
    yaw: float = 0.0
    seed: Optional[int] = None

    @property
    def head(self) -> Ellipsoid:
        return next(p for p in self.primitives if p.label == LABEL_HEAD)


@dataclass(frozen=True)
class SceneParams:
    head_x: tuple = (-0.04, 0.04)
    head_y: tuple = (-0.04, 0.02)
    head_z: tuple = (0.45, 0.75)
    yaw_deg: tuple = (-30.0, 30.0)
    pitch_deg: tuple = (-10.0, 10.0)
    roll_deg: tuple = (-8.0, 8.0)
    head_scale: tuple = (0.9, 1.1)
    background_gap: tuple = (1.2, 2.0)

    @classmethod
    def off_center(cls, side: str = "left") -> "SceneParams":
        """Head placed near one image edge of a 26 mm-equivalent close camera."""
        sign = -1.0 if side == "left" else 1.0
        lo, hi = sorted((sign * 0.17, sign * 0.21))
        return cls(head_x=(lo, hi), head_z=(0.50, 0.60), yaw_deg=(-15.0, 15.0))

    def validate(self):
        for name, (lo, hi) in self.__dict__.items():
            if not lo <= hi:
                raise InvalidInputError(f"range {name} is empty: ({lo}, {hi})")
        if self.head_z[0] <= 0.3:
            raise InvalidInputError("head must stay well in front of the camera")


def gen_scene(seed: int, params: SceneParams = SceneParams()) -> ProceduralScene:
    params.validate()
    rng = np.random.default_rng(seed)

    def uni(r):
        return float(rng.uniform(r[0], r[1]))

    hx, hy, hz = uni(params.head_x), uni(params.head_y), uni(params.head_z)
    yaw = math.radians(uni(params.yaw_deg))
    rot = rot_ypr(yaw, math.radians(uni(params.pitch_deg)), math.radians(uni(params.roll_deg)))
    s = uni(params.head_scale)
    axes = (0.075 * s, 0.10 * s, 0.09 * s)
    center = np.array([hx, hy, hz])
    skin = np.array([0.85, 0.62, 0.50]) * rng.uniform(0.85, 1.05)
    head = Ellipsoid(tuple(center), axes, rot, LABEL_HEAD, tuple(np.clip(skin, 0, 1)),
                     tex_freq=(uni((1.0, 1.8)), uni((0.8, 1.5))),
                     tex_phase=(uni((0, 2 * math.pi)), uni((0, 2 * math.pi))))
    nose_r = 0.022 * s
    nose_c = center + rot @ np.array([0.0, 0.012 * s, -(axes[2] - 0.3 * nose_r)])
    nose = Ellipsoid(tuple(nose_c), (nose_r, nose_r * 1.2, nose_r), rot, LABEL_NOSE,
                     tuple(np.clip(skin * np.array([1.05, 0.9, 0.88]), 0, 1)), tex_amp=0.05)
    torso_c = center + np.array([0.0, 0.24 * s, 0.07])
    torso = Ellipsoid(tuple(torso_c), (0.20 * s, 0.13 * s, 0.11 * s), np.eye(3), LABEL_TORSO,
                      tuple(rng.uniform(0.2, 0.8, 3)), tex_freq=(2.0, 0.5),
                      tex_phase=(uni((0, 2 * math.pi)), 0.0), tex_amp=0.25)
    light = np.array([uni((-0.5, 0.5)), uni((-0.7, -0.2)), -1.0])
    light /= np.linalg.norm(light)
    return ProceduralScene((head, nose, torso), hz + uni(params.background_gap),
                           tuple(rng.uniform(0.25, 0.6, 3)), tuple(light), yaw, seed)


def close_intrinsics(width: int, height: int) -> CameraIntrinsics:
    """26 mm 35mm-equivalent focal length mapped onto the image width."""
    return CameraIntrinsics(width * CLOSE_FOCAL_MM / SENSOR_WIDTH_MM, (width - 1) / 2.0, (height - 1) / 2.0)


# ---------------------------------------------------------------------------
# ray casting kernels


@_accel.njit(parallel=True)
def _cast_numba(h, w, f, cx, cy, r_cw, origin, mats, centers, plane_z):
    n = mats.shape[0]
    tmap = np.full((h, w), np.inf)
    hit = np.full((h, w), -1, dtype=np.int64)
    local = np.zeros((h, w, 3))
    for y in prange(h):
        for x in range(w):
            dc0 = (x - cx) / f
            dc1 = (y - cy) / f
            # world ray direction (camera z component is 1, so t is the z-depth)
            d0 = r_cw[0, 0] * dc0 + r_cw[0, 1] * dc1 + r_cw[0, 2]
            d1 = r_cw[1, 0] * dc0 + r_cw[1, 1] * dc1 + r_cw[1, 2]
            d2 = r_cw[2, 0] * dc0 + r_cw[2, 1] * dc1 + r_cw[2, 2]
            best = np.inf
            bi = -1
            for k in range(n):
                o0 = origin[0] - centers[k, 0]
                o1 = origin[1] - centers[k, 1]
                o2 = origin[2] - centers[k, 2]
                lo0 = mats[k, 0, 0] * o0 + mats[k, 0, 1] * o1 + mats[k, 0, 2] * o2
                lo1 = mats[k, 1, 0] * o0 + mats[k, 1, 1] * o1 + mats[k, 1, 2] * o2
                lo2 = mats[k, 2, 0] * o0 + mats[k, 2, 1] * o1 + mats[k, 2, 2] * o2
                ld0 = mats[k, 0, 0] * d0 + mats[k, 0, 1] * d1 + mats[k, 0, 2] * d2
                ld1 = mats[k, 1, 0] * d0 + mats[k, 1, 1] * d1 + mats[k, 1, 2] * d2
                ld2 = mats[k, 2, 0] * d0 + mats[k, 2, 1] * d1 + mats[k, 2, 2] * d2
                a = ld0 * ld0 + ld1 * ld1 + ld2 * ld2
                b = lo0 * ld0 + lo1 * ld1 + lo2 * ld2
                c = lo0 * lo0 + lo1 * lo1 + lo2 * lo2 - 1.0
                disc = b * b - a * c
                if disc < 0.0:
                    continue
                sq = math.sqrt(disc)
                t = (-b - sq) / a
                if t <= 0.0:
                    t = (-b + sq) / a
                if t > 0.0 and t < best:
                    best = t
                    bi = k
            if bi >= 0:
                tmap[y, x] = best
                hit[y, x] = bi
                o0 = origin[0] + best * d0 - centers[bi, 0]
                o1 = origin[1] + best * d1 - centers[bi, 1]
                o2 = origin[2] + best * d2 - centers[bi, 2]
                for r in range(3):
                    local[y, x, r] = mats[bi, r, 0] * o0 + mats[bi, r, 1] * o1 + mats[bi, r, 2] * o2
            elif d2 > 0.0 and not math.isnan(plane_z):
                t = (plane_z - origin[2]) / d2
                if t > 0.0:
                    tmap[y, x] = t
    return tmap, hit, local


def _cast_numpy(h, w, f, cx, cy, r_cw, origin, mats, centers, plane_z):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dc0 = (xs - cx) / f
    dc1 = (ys - cy) / f
    d = np.stack([r_cw[i, 0] * dc0 + r_cw[i, 1] * dc1 + r_cw[i, 2] for i in range(3)], axis=-1)
    tmap = np.full((h, w), np.inf)
    hit = np.full((h, w), -1, dtype=np.int64)
    for k in range(mats.shape[0]):
        o = origin - centers[k]
        m = mats[k]
        lo = np.array([m[i, 0] * o[0] + m[i, 1] * o[1] + m[i, 2] * o[2] for i in range(3)])
        ld = np.stack([m[i, 0] * d[..., 0] + m[i, 1] * d[..., 1] + m[i, 2] * d[..., 2] for i in range(3)], axis=-1)
        a = ld[..., 0] * ld[..., 0] + ld[..., 1] * ld[..., 1] + ld[..., 2] * ld[..., 2]
        b = lo[0] * ld[..., 0] + lo[1] * ld[..., 1] + lo[2] * ld[..., 2]
        c = lo[0] * lo[0] + lo[1] * lo[1] + lo[2] * lo[2] - 1.0
        disc = b * b - a * c
        ok = disc >= 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t = (-b - sq) / a
        t = np.where(t <= 0.0, (-b + sq) / a, t)
        better = ok & (t > 0.0) & (t < tmap)
        tmap = np.where(better, t, tmap)
        hit = np.where(better, k, hit)
    local = np.zeros((h, w, 3))
    sel = hit >= 0
    if sel.any():
        k = hit[sel]
        t = tmap[sel][:, None]
        dd = d[sel]
        o = origin[None, :] + t * dd - centers[k]
        # same summation order as the compiled kernel
        mk = mats[k]
        for r in range(3):
            local[sel, r] = mk[:, r, 0] * o[:, 0] + mk[:, r, 1] * o[:, 1] + mk[:, r, 2] * o[:, 2]
    if not math.isnan(plane_z):
        with np.errstate(divide="ignore", invalid="ignore"):
            tp = (plane_z - origin[2]) / d[..., 2]
        use = (~sel) & (d[..., 2] > 0.0) & (tp > 0.0)
        tmap = np.where(use, tp, tmap)
    return tmap, hit, local


@dataclass
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    depth: DepthMap
    mask: np.ndarray  # float 0/1
    labels: np.ndarray  # int, LABEL_* per pixel


def render(scene: ProceduralScene, k: CameraIntrinsics, pose: RigidTransform, size) -> RenderOutput:
    """Ray-cast ``scene`` through camera ``k`` whose world-to-camera transform is ``pose``.

    ``size`` is ``(width, height)``.
    """
    w, h = int(size[0]), int(size[1])
    prims = scene.primitives
    mats = np.array([p.world_to_unit() for p in prims]).reshape(-1, 3, 3)
    centers = np.array([p.center for p in prims], dtype=np.float64).reshape(-1, 3)
    r_cw = np.ascontiguousarray(pose.r.T)
    origin = -(pose.r.T @ pose.t)
    plane_z = math.nan if scene.background_z is None else float(scene.background_z)
    cast = _cast_numba if _accel.use_numba() else _cast_numpy
    tmap, hit, local = cast(h, w, float(k.f), float(k.cx), float(k.cy), r_cw, origin,
                            np.ascontiguousarray(mats), centers, plane_z)

    labels = np.zeros((h, w), dtype=np.int64)
    rgb = np.zeros((h, w, 3))
    light = -np.asarray(scene.light, dtype=np.float64)
    light /= np.linalg.norm(light)
    for i, p in enumerate(prims):
        sel = hit == i
        if not sel.any():
            continue
        labels[sel] = p.label
        lp = local[sel]
        # outward normal: gradient of |A (x - c)|^2 is A^T (unit-sphere point)
        n = lp @ p.world_to_unit()
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        shade = 0.35 + 0.65 * np.clip(n @ light, 0.0, None)
        fx, fy = p.tex_freq
        px, py = p.tex_phase
        tex = 1.0 - p.tex_amp + p.tex_amp * np.sin(math.pi * fx * lp[:, 0] + px) * np.cos(math.pi * fy * lp[:, 1] + py)
        rgb[sel] = np.clip(np.asarray(p.albedo)[None, :] * (tex * shade)[:, None], 0.0, 1.0)
    bg = (hit < 0) & np.isfinite(tmap)
    if bg.any():
        ys, xs = np.nonzero(bg)
        t = tmap[bg]
        pts = origin[None, :] + t[:, None] * ((np.stack([(xs - k.cx) / k.f, (ys - k.cy) / k.f,
                                                          np.ones_like(t)], axis=1)) @ r_cw.T)
        checker = (np.floor(pts[:, 0] / 0.15) + np.floor(pts[:, 1] / 0.15)) % 2
        rgb[bg] = np.asarray(scene.background_albedo)[None, :] * (0.75 + 0.25 * checker)[:, None]
    mask = (hit >= 0).astype(np.float64)
    depth = DepthMap(np.where(np.isfinite(tmap), tmap, 0.0), np.isfinite(tmap))
    return RenderOutput(rgb, depth, mask, labels)


# ---------------------------------------------------------------------------
# capture rigs


@dataclass
class Capture:
    rgb: np.ndarray
    depth: DepthMap
    mask: np.ndarray
    intrinsics: CameraIntrinsics
    pose: RigidTransform  # world (close camera frame) -> this camera
    labels: Optional[np.ndarray] = None

    @property
    def size(self):
        return self.rgb.shape[1], self.rgb.shape[0]


@dataclass
class CapturePair:
    close: Capture
    far: Capture
    rear_views: dict
    t_z: float
    z_ref: float
    scene: Optional[ProceduralScene] = None


def look_at(eye, target) -> RigidTransform:
    """World-to-camera transform for a camera at ``eye`` looking at ``target`` (+Y stays down)."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross([0.0, 1.0, 0.0], z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    return RigidTransform(r, -r @ eye)


def capture(scene, k, pose, size) -> Capture:
    out = render(scene, k, pose, size)
    return Capture(out.rgb, out.depth, out.mask, k, pose, out.labels)


def _check_head_in_frame(cap: Capture, name: str):
    head = np.isin(cap.labels, (LABEL_HEAD, LABEL_NOSE))
    if not head.any():
        raise FrustumError(f"head not visible in the {name} view")
    if head[0].any() or head[-1].any() or head[:, 0].any() or head[:, -1].any():
        raise FrustumError(f"head leaves the {name} view")


def capture_pair(scene: ProceduralScene, close_k: CameraIntrinsics, size, distance_multiplier: float = 3.0,
                 rear: bool = True, rear_offset: float = REAR_OFFSET_M) -> CapturePair:
    """Render the close view and the far view(s) pulled back to ``distance_multiplier`` times the distance.

    The subject reference depth is the median foreground depth of the close
    view; the far camera keeps the subject scale via a focal length of
    ``distance_multiplier * f``. With ``rear`` set, left/right/top rear views
    offset by ``rear_offset`` and aimed at the head centre are rendered too.
    """
    close = capture(scene, close_k, RigidTransform.identity(), size)
    fg = close.mask > 0.5
    if not fg.any():
        raise FrustumError("subject not visible in the close view")
    z_ref = float(np.median(close.depth.values[fg]))
    t_z = (distance_multiplier - 1.0) * z_ref
    far_k = close_k.with_focal(close_k.f * distance_multiplier)
    far_pose = RigidTransform.translation([0.0, 0.0, t_z])
    far = capture(scene, far_k, far_pose, size)
    _check_head_in_frame(far, "far")
    views = {}
    if rear:
        views["centre"] = far
        target = np.asarray(scene.head.center)
        offsets = {"left": (-rear_offset, 0.0), "right": (rear_offset, 0.0), "top": (0.0, -rear_offset)}
        for name, (ox, oy) in offsets.items():
            views[name] = capture(scene, far_k, look_at([ox, oy, -t_z], target), size)
    return CapturePair(close, far, views, t_z, z_ref, scene)


def relative_transform(src_pose: RigidTransform, dst_pose: RigidTransform) -> RigidTransform:
    return dst_pose.compose(src_pose.inverse())


def warp_capture(cap: Capture, k2: CameraIntrinsics, dst_pose: RigidTransform, extra=None,
                 radius: float = 0.5, z_eps: float = 0.005):
    attrs = cap.rgb if extra is None else np.concatenate([cap.rgb, extra], axis=2)
    cloud = build_point_cloud(attrs, cap.depth, cap.mask, cap.intrinsics)
    return splat(cloud, k2, relative_transform(cap.pose, dst_pose), cap.size, radius, z_eps)


@dataclass
class MultiviewTarget:
    rgb: np.ndarray
    mask: np.ndarray  # bool
    residual_holes: np.ndarray  # bool: enclosed pixels no view covered
    source: np.ndarray  # index into the fill order, -1 where empty
    order: tuple
    pose: RigidTransform


def fill_order(t_x: float) -> tuple:
    side = ("left", "right") if t_x < 0 else ("right", "left")
    return ("centre",) + side + ("top",)


def synthesize_multiview_target(rear_views: dict, t_x: float, t_z: float, k2: CameraIntrinsics, anchor,
                                views: Optional[tuple] = None, radius: float = 0.5,
                                z_eps: float = 0.005) -> MultiviewTarget:
    """Target image and mask at the pose implied by ``(t_x, t_z)`` from the rear rig.

    The centre view is warped first; pixels it leaves below 0.5 coverage are
    taken from the other warped views in :func:`fill_order`. The mask is the
    soft union ``1 - prod(1 - coverage)`` of all warps thresholded at 0.5, so
    silhouette pixels that every view covers only partially still count;
    their colour is the coverage-weighted mean. ``views`` limits which rear
    views are used (default: all available).
    """
    pose = compose_camera_move(t_z, t_x, anchor)
    order = tuple(v for v in fill_order(t_x) if v in rear_views and (views is None or v in views))
    if not order:
        raise InvalidInputError("no rear views to synthesize from")
    w, h = rear_views[order[0]].size
    rgb = np.zeros((h, w, 3))
    source = np.full((h, w), -1, dtype=np.int64)
    miss = np.ones((h, w))
    acc = np.zeros((h, w, 3))
    wsum = np.zeros((h, w))
    for i, name in enumerate(order):
        b = warp_capture(rear_views[name], k2, pose, radius=radius, z_eps=z_eps)
        take = (source < 0) & (b.coverage >= 0.5)
        rgb[take] = b.image[take]
        source[take] = i
        miss *= 1.0 - b.coverage
        acc += b.coverage[:, :, None] * b.image
        wsum += b.coverage
    mask = (1.0 - miss) >= 0.5
    soft = mask & (source < 0)
    rgb[soft] = acc[soft] / wsum[soft][:, None]
    holes = ndimage.binary_fill_holes(mask) & ~mask
    return MultiviewTarget(rgb, mask, holes, source, order, pose)


# ---------------------------------------------------------------------------
# oracle checks


@dataclass
class WarpCheck:
    max_reproj_err_px: float
    mean_reproj_err_px: float
    masked_psnr_db: float
    n_pixels: int


def warp_consistency(pair: CapturePair, radius: float = 0.5, z_eps: float = 0.005,
                     vis_tol: float = 2e-3) -> WarpCheck:
    """Compare the close view warped to the far pose against the directly rendered far view.

    The close pixel coordinates ride along as attributes, so each far pixel
    gets a splatted source position; the exact source position comes from the
    far hit point projected into the close camera. Compared pixels are far
    foreground pixels away from the silhouette (their 3x3 neighbourhood is
    foreground), fully covered by the warp, and whose surface point is the
    one the close camera sees (depth agreement within ``vis_tol``).
    """
    close, far = pair.close, pair.far
    h, w = close.mask.shape
    vs, us = np.mgrid[0:h, 0:w].astype(np.float64)
    warped = warp_capture(close, far.intrinsics, far.pose, extra=np.stack([us, vs], axis=2),
                          radius=radius, z_eps=z_eps)

    far_fg = far.mask > 0.5
    interior = ndimage.binary_erosion(far_fg, structure=np.ones((3, 3)))
    cand = interior & (warped.coverage >= 0.99)
    fy, fx = np.nonzero(cand)
    kf = far.intrinsics
    d = far.depth.values[fy, fx]
    pts_far = np.stack([d * (fx - kf.cx) / kf.f, d * (fy - kf.cy) / kf.f, d], axis=1)
    pts_close = relative_transform(far.pose, close.pose).apply(pts_far)
    u1, v1, z1 = project_points(pts_close, close.intrinsics)
    ui, vi = np.rint(u1).astype(np.int64), np.rint(v1).astype(np.int64)
    inb = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h) & (z1 > 0)
    vis = np.zeros(len(fx), dtype=bool)
    vis[inb] = (close.mask[vi[inb], ui[inb]] > 0.5) & (np.abs(close.depth.values[vi[inb], ui[inb]] - z1[inb]) < vis_tol)
    fy, fx, u1, v1 = fy[vis], fx[vis], u1[vis], v1[vis]
    if len(fx) == 0:
        raise InvalidInputError("no mutually visible pixels")
    err = np.hypot(warped.image[fy, fx, 3] - u1, warped.image[fy, fx, 4] - v1)
    diff = warped.image[fy, fx, :3] - far.rgb[fy, fx]
    mse = float(np.mean(diff ** 2))
    p = math.inf if mse == 0 else 10 * math.log10(1.0 / mse)
    return WarpCheck(float(err.max()), float(err.mean()), p, int(len(fx)))


def anchor_for(pair: CapturePair):
    return select_anchor_pixel(pair.close.mask, pair.close.depth, pair.close.intrinsics)[1]
