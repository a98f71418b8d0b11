"""Horizontal-translation bins, IoU scoring and the brute-force translation search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .camgeom import CameraIntrinsics, compose_camera_move, compute_theta, scaled_focal, select_anchor_pixel
from .errors import InvalidInputError
from .warp import as_depth_map, build_point_cloud, splat

TX_RANGE_M = 0.20
N_BINS = 50
DEFAULT_LAMBDA = 0.5


def make_bins(n: int = N_BINS, tx_max: float = TX_RANGE_M) -> np.ndarray:
    """Inclusive, equally spaced translation centers over ``[-tx_max, tx_max]``."""
    if n < 2:
        raise InvalidInputError("need at least two bins")
    return np.linspace(-tx_max, tx_max, n)


def _binary(m) -> np.ndarray:
    m = np.asarray(m)
    if m.dtype == bool:
        return m
    return m >= 0.5


def iou(a, b) -> float:
    a, b = _binary(a), _binary(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def iou_loss(m_w, m_t) -> float:
    return 1.0 - iou(m_w, m_t)


def build_target_vector(ious) -> np.ndarray:
    """Soft labels: 1 for relative IoU deficit <= 0.01, 0.9 up to 0.02, else 0."""
    ious = np.asarray(ious, dtype=np.float64)
    if np.any(~np.isfinite(ious)) or np.any(ious < 0) or np.any(ious > 1):
        raise InvalidInputError("IoU values must lie in [0, 1]")
    best = ious.max()
    v = np.zeros_like(ious)
    if best == 1.0:
        v[ious == 1.0] = 1.0
        return v
    delta = (best - ious) / (1.0 - best)
    v[delta <= 0.02] = 0.9
    v[delta <= 0.01] = 1.0
    v[ious == best] = 1.0
    return v


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def decode_translation(v, bins=None) -> float:
    """Softmax-weighted expectation of the bin centers."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("translation vector must be finite")
    bins = make_bins(len(v)) if bins is None else np.asarray(bins, dtype=np.float64)
    if bins.shape != v.shape:
        raise InvalidInputError("vector and bins differ in length")
    t = float(softmax(v) @ bins)
    return min(max(t, float(bins[0])), float(bins[-1]))


def bce_with_logits(logits, target) -> float:
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    # max(x, 0) - x*y + log(1 + exp(-|x|)): stable for any logit magnitude
    return float(np.mean(np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))))


def hzt_loss(v_hat, v, m_w, m_t, lam: float = DEFAULT_LAMBDA) -> float:
    v_hat = np.asarray(v_hat, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (np.all(np.isfinite(v_hat)) and np.all(np.isfinite(v)) and np.isfinite(lam)):
        raise InvalidInputError("non-finite input to hzt_loss")
    if v_hat.shape != v.shape:
        raise InvalidInputError("predicted and target vectors differ in length")
    if np.any((v < 0) | (v > 1)):
        raise InvalidInputError("target vector values must lie in [0, 1]")
    return bce_with_logits(v_hat, v) + lam * iou_loss(m_w, m_t)


def missing_pixels(coverage, target_mask, threshold: float = 0.5) -> int:
    """Target-foreground pixels the warp leaves uncovered."""
    return int(np.count_nonzero(_binary(target_mask) & ~(np.asarray(coverage) >= threshold)))


TargetSource = Union[np.ndarray, Callable[[float], np.ndarray]]


@dataclass
class SearchResult:
    best_tx: float
    best_theta: float
    ious: np.ndarray
    target_vector: np.ndarray
    bins: np.ndarray
    iou_at_0: float
    missing_px_at_0: int
    missing_px_at_best: int
    missing_px: np.ndarray
    scored_mask: str = "warped"  # the warped input mask stands in for a generator mask

    def to_json(self) -> dict:
        return {
            "bins_m": [float(x) for x in self.bins],
            "iou": [float(x) for x in self.ious],
            "target_vector": [float(x) for x in self.target_vector],
            "best_tx_m": float(self.best_tx),
            "best_theta_rad": float(self.best_theta),
            "iou_at_0": float(self.iou_at_0),
            "missing_px_at_0": int(self.missing_px_at_0),
            "missing_px_at_best": int(self.missing_px_at_best),
            "scored_mask": self.scored_mask,
        }


def search_translation(rgb, depth, mask, k1: CameraIntrinsics, t_z: float, target: TargetSource,
                       bins=None, z_ref: float | None = None, radius: float = 0.5, z_eps: float = 0.005,
                       mask_threshold: float = 0.5) -> SearchResult:
    """Score every translation bin by the IoU of the warped input mask against the target.

    ``target`` is either one mask used for every bin or a callable returning
    the target mask for a given ``t_x``. The exact ``t_x = 0`` move is scored
    as a baseline and wins ties, so the search never prefers a sideways move
    without an IoU gain. Among bins, ties go to the smaller ``|t_x|``, then to
    the negative side.
    """
    bins = make_bins() if bins is None else np.asarray(bins, dtype=np.float64)
    depth = as_depth_map(depth)
    mask = np.asarray(mask, dtype=np.float64)
    h, w = mask.shape
    _, anchor = select_anchor_pixel(mask, depth, k1, mask_threshold)
    fg = (mask >= mask_threshold) & depth.valid
    if z_ref is None:
        z_ref = float(np.median(depth.values[fg]))
    k2 = k1.with_focal(scaled_focal(k1.f, z_ref, t_z))
    # splatting a constant attribute: only the coverage matters here
    cloud = build_point_cloud(np.ones((h, w, 1)), depth, mask, k1, mask_threshold)

    def score(tx):
        m = compose_camera_move(t_z, tx, anchor)
        cov = splat(cloud, k2, m, (w, h), radius, z_eps).coverage
        tgt = target(tx) if callable(target) else target
        tgt = _binary(tgt)
        if tgt.shape != (h, w):
            raise InvalidInputError("target mask size differs from the input")
        return iou(cov >= 0.5, tgt), missing_pixels(cov, tgt)

    ious = np.empty(len(bins))
    missing = np.empty(len(bins), dtype=np.int64)
    for j, tx in enumerate(bins):
        ious[j], missing[j] = score(float(tx))
    iou0, miss0 = score(0.0)

    order = sorted(range(len(bins)), key=lambda j: (-ious[j], abs(bins[j]), bins[j]))
    j = order[0]
    if ious[j] > iou0:
        best, miss_best = float(bins[j]), int(missing[j])
    else:
        best, miss_best = 0.0, miss0
    theta = 0.0 if best == 0.0 else compute_theta(best, (anchor[0], anchor[1], anchor[2] + t_z))
    return SearchResult(best, theta, ious, build_target_vector(ious), bins, iou0, miss0, miss_best, missing)
