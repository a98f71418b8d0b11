"""Pinhole camera model, rigid transforms and the camera-move geometry.

Frame convention: camera at the origin, +X right, +Y down, +Z into the scene.
All lengths are meters; image coordinates are pixels with pixel centers at
integer positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    BehindCameraError,
    DegenerateGeometryError,
    EmptyForegroundError,
    InvalidInputError,
)

ORTHO_TOL = 1e-9


class Pixel(NamedTuple):
    u: float
    v: float


class Point3(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (math.isfinite(self.f) and self.f > 0):
            raise InvalidInputError(f"focal length must be positive and finite, got {self.f}")
        if not (math.isfinite(self.cx) and math.isfinite(self.cy)):
            raise InvalidInputError("principal point must be finite")

    def matrix(self) -> np.ndarray:
        return np.array([[self.f, 0.0, self.cx], [0.0, self.f, self.cy], [0.0, 0.0, 1.0]])

    def with_focal(self, f: float) -> "CameraIntrinsics":
        return CameraIntrinsics(f, self.cx, self.cy)


@dataclass(frozen=True)
class RigidTransform:
    """Maps points from a source frame to a target frame: ``q = r @ p + t``."""

    r: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.r, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidInputError("transform entries must be finite")
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise InvalidInputError("rotation matrix is not orthonormal with det 1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    def apply(self, p) -> np.ndarray:
        """Transform one point (shape (3,)) or many (shape (N, 3))."""
        p = np.asarray(p, dtype=np.float64)
        return p @ self.r.T + self.t

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return RigidTransform(self.r @ other.r, self.r @ other.t + self.t)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.r.T, -(self.r.T @ self.t))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.t
        return m

    def to_json(self) -> dict:
        return {"r": [float(x) for x in self.r.ravel()], "t": [float(x) for x in self.t]}

    @classmethod
    def from_json(cls, doc: dict) -> "RigidTransform":
        try:
            return cls(np.asarray(doc["r"], dtype=np.float64).reshape(3, 3), doc["t"])
        except (KeyError, ValueError, TypeError) as exc:
            raise InvalidInputError(f"bad transform document: {exc}") from exc

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.r, other.r) and np.array_equal(self.t, other.t)

    def __hash__(self):
        return hash((self.r.tobytes(), self.t.tobytes()))


def unproject(p: Pixel, d: float, k: CameraIntrinsics) -> Point3:
    if not (math.isfinite(d) and d > 0):
        raise InvalidInputError(f"depth must be positive and finite, got {d}")
    u, v = p
    return Point3(d * (u - k.cx) / k.f, d * (v - k.cy) / k.f, float(d))


def project(q: Point3, k: CameraIntrinsics) -> tuple[Pixel, float]:
    x, y, z = q
    if not z > 0:
        raise BehindCameraError(f"point has z={z} <= 0")
    return Pixel(float(k.f * x / z + k.cx), float(k.f * y / z + k.cy)), float(z)


def unproject_grid(us, vs, depth, k: CameraIntrinsics) -> np.ndarray:
    """Vectorized unproject; returns an (N, 3) array."""
    depth = np.asarray(depth, dtype=np.float64)
    return np.stack([depth * (np.asarray(us) - k.cx) / k.f, depth * (np.asarray(vs) - k.cy) / k.f, depth], axis=-1)


def project_points(pts: np.ndarray, k: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized project without the z check; caller filters ``z > 0``."""
    z = pts[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.f * pts[..., 0] / z + k.cx
        v = k.f * pts[..., 1] / z + k.cy
    return u, v, z


def reproject_pixel(p: Pixel, d: float, k1: CameraIntrinsics, k2: CameraIntrinsics,
                    m: RigidTransform) -> tuple[Pixel, float]:
    q = m.apply(np.asarray(unproject(p, d, k1)))
    return project(Point3(*q), k2)


def scaled_focal(f1: float, z_ref: float, t_z: float) -> float:
    """Focal length that keeps an object at ``z_ref`` the same size after moving back by ``t_z``."""
    if not (math.isfinite(z_ref) and z_ref > 0):
        raise InvalidInputError(f"z_ref must be positive, got {z_ref}")
    if not (math.isfinite(t_z) and z_ref + t_z > 0):
        raise InvalidInputError(f"z_ref + t_z must be positive, got {z_ref + t_z}")
    return f1 + f1 * t_z / z_ref  # exactly f1 when t_z == 0


def compute_theta(t_x: float, anchor: Point3) -> float:
    """Yaw angle that keeps ``anchor``'s u-coordinate fixed under a sideways move ``t_x``.

    ``anchor`` is given in the frame of the camera that moved straight back.
    """
    x, _, z = anchor
    if not z > 0:
        raise DegenerateGeometryError(f"anchor must be in front of the camera (z={z})")
    den = z * z + x * x - t_x * x
    if abs(den) < 1e-12:
        raise DegenerateGeometryError("degenerate anchor/translation: arctan denominator vanishes")
    return math.atan(-t_x * z / den)


def make_hzt_transform(t_x: float, theta: float) -> RigidTransform:
    """Pose of the shifted camera in the straight-back camera's frame (rotation about Y)."""
    c, s = math.cos(theta), math.sin(theta)
    r = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return RigidTransform(r, [t_x, 0.0, 0.0])


def compose_camera_move(t_z: float, t_x: float, anchor: Point3) -> RigidTransform:
    """Source-camera to new-camera transform for a move back by ``t_z`` and sideways by ``t_x``.

    ``anchor`` is in source-camera coordinates. The straight-back move adds
    ``t_z`` to every depth; the sideways move is the inverse of
    :func:`make_hzt_transform` so the anchor keeps its u-coordinate.
    """
    back = RigidTransform.translation([0.0, 0.0, t_z])
    if t_x == 0:
        return back
    anchor2 = Point3(anchor[0], anchor[1], anchor[2] + t_z)
    theta = compute_theta(t_x, anchor2)
    return make_hzt_transform(t_x, theta).inverse().compose(back)


def select_anchor_pixel(mask: np.ndarray, depth, k: CameraIntrinsics,
                        threshold: float = 0.5) -> tuple[Pixel, Point3]:
    """Pick the foreground boundary pixel on the side nearer to the image edge.

    The mask bounding box's distances to the left and right image borders
    decide the side (ties pick the left). Within the boundary column the
    middle foreground row is used. ``depth`` may be a DepthMap or an array
    (non-positive / non-finite entries are invalid).
    """
    values, valid = _depth_arrays(depth)
    fg = np.asarray(mask) >= threshold
    if fg.shape != values.shape:
        raise InvalidInputError("mask and depth shapes differ")
    usable = fg & valid
    if not usable.any():
        raise EmptyForegroundError("mask has no foreground pixel with valid depth")
    w = fg.shape[1]
    cols = np.flatnonzero(fg.any(axis=0))
    left_gap, right_gap = cols[0], (w - 1) - cols[-1]
    col = int(cols[0] if left_gap <= right_gap else cols[-1])
    rows = np.flatnonzero(fg[:, col])
    row = int(rows[(len(rows) - 1) // 2])
    if not valid[row, col]:
        # nearest valid foreground depth in the same row, else any usable boundary pixel
        cand = np.flatnonzero(usable[row])
        if cand.size:
            d = float(values[row, cand[np.argmin(np.abs(cand - col))]])
        else:
            ucols = np.flatnonzero(usable.any(axis=0))
            col = int(ucols[0] if col == cols[0] else ucols[-1])
            urows = np.flatnonzero(usable[:, col])
            row = int(urows[(len(urows) - 1) // 2])
            d = float(values[row, col])
    else:
        d = float(values[row, col])
    pix = Pixel(float(col), float(row))
    return pix, unproject(pix, d, k)


def _depth_arrays(depth):
    if hasattr(depth, "values") and hasattr(depth, "valid"):
        return np.asarray(depth.values, dtype=np.float64), np.asarray(depth.valid, dtype=bool)
    values = np.asarray(depth, dtype=np.float64)
    return values, np.isfinite(values) & (values > 0)
