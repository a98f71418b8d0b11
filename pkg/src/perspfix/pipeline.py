"""End-to-end rectification: camera move, warp, fill, blend and composite."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import ndimage

from . import blendcomp, io, lossmetrics, txsearch
from .camgeom import CameraIntrinsics, compose_camera_move, compute_theta, scaled_focal, select_anchor_pixel
from .errors import EmptyForegroundError, InvalidInputError, PerspfixError, PerspfixIOError
from .warp import WarpedBundle, as_depth_map, warp_frame

REPORT_VERSION = 1


@dataclass
class PipelineConfig:
    rgb: Optional[str] = None
    depth: Optional[str] = None
    mask: Optional[str] = None
    camera: Optional[str] = None
    out_dir: Optional[str] = None
    features: Optional[str] = None
    target_mask: Optional[str] = None
    rear_views: Optional[str] = None  # fixture sample directory for per-bin targets
    reference: Optional[str] = None
    debug_dir: Optional[str] = None
    t_z: Union[float, str] = "auto"  # meters, or "auto" = 2x median subject depth
    t_x: Union[float, str] = "zero"  # meters, "zero" or "search"
    n_bins: int = txsearch.N_BINS
    splat_radius: float = 0.5
    z_eps: float = 0.005
    mask_threshold: float = 0.5
    fill_threshold: float = 0.5
    blend_levels: int = 4
    mask_sigma: float = 3.0
    dilate_radius: int = 5
    close_radius: int = 2
    loss_weights: dict = field(default_factory=dict)

    def validate(self):
        if isinstance(self.t_z, str):
            if self.t_z != "auto":
                raise InvalidInputError(f"t_z must be a number or 'auto', got {self.t_z!r}")
        elif not math.isfinite(self.t_z):
            raise InvalidInputError("t_z must be finite")
        if isinstance(self.t_x, str):
            if self.t_x not in ("zero", "search"):
                raise InvalidInputError(f"t_x must be a number, 'zero' or 'search', got {self.t_x!r}")
        elif not (math.isfinite(self.t_x) and abs(self.t_x) <= 1.0):
            raise InvalidInputError("t_x must be finite and within +-1 m")
        if self.n_bins < 2:
            raise InvalidInputError("n_bins must be >= 2")
        if self.splat_radius < 0.5:
            raise InvalidInputError("splat_radius must be >= 0.5 px")
        if self.z_eps < 0 or self.mask_sigma < 0 or self.dilate_radius < 0 or self.close_radius < 0:
            raise InvalidInputError("z_eps, mask_sigma, dilate_radius and close_radius must be >= 0")
        if not (0 < self.mask_threshold <= 1 and 0 < self.fill_threshold <= 1):
            raise InvalidInputError("thresholds must lie in (0, 1]")
        if self.blend_levels < 1:
            raise InvalidInputError("blend_levels must be >= 1")
        lossmetrics.LossWeights(**self.loss_weights)

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        path = Path(path)
        if path.suffix.lower() == ".toml":
            import tomli

            try:
                doc = tomli.loads(path.read_text())
            except OSError as exc:
                raise PerspfixIOError(f"cannot read {path}: {exc}") from exc
            except tomli.TOMLDecodeError as exc:
                raise InvalidInputError(f"{path}: {exc}") from exc
        else:
            doc = io.read_json(path)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)


@dataclass
class RunReport:
    t_z: float
    t_x: float
    theta: float
    f_in: float
    f_out: float
    z_ref: float
    anchor_px: list
    missing_px_before: int
    missing_px_after: int
    filled_px: int
    search: Optional[dict] = None
    metrics: Optional[dict] = None
    timings: dict = field(default_factory=dict)
    report_version: int = REPORT_VERSION

    def to_json(self, with_timings: bool = False) -> dict:
        doc = asdict(self)
        if not with_timings:
            doc.pop("timings")
        return doc


@dataclass
class RectifyResult:
    image: np.ndarray
    report: RunReport
    intermediates: dict


class _Timer:
    def __init__(self, timings):
        self.timings = timings

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, exc_type, exc, tb):
                timer.timings[name] = time.perf_counter() - self.t0
                if isinstance(exc, PerspfixError) and not getattr(exc, "stage", None):
                    exc.stage = name
                    exc.args = (f"[{name}] {exc.args[0] if exc.args else ''}",) + exc.args[1:]
                return False

        return _Ctx()


def foreground_mask(coverage, close_radius: int = 2) -> np.ndarray:
    """Output subject mask from warp coverage: closing plus interior-hole filling."""
    m = np.asarray(coverage) >= 0.5
    if close_radius > 0:
        pad = close_radius + 1
        m = np.pad(m, pad)
        m = ndimage.binary_closing(m, structure=blendcomp.disc(close_radius))[pad:-pad, pad:-pad]
    return ndimage.binary_fill_holes(m)


def rectify_arrays(rgb, depth, mask, k1: CameraIntrinsics, config: PipelineConfig = PipelineConfig(),
                   features=None, target=None, reference=None) -> RectifyResult:
    """Run the pipeline on in-memory inputs.

    ``target`` is needed when ``config.t_x == "search"``: one mask or a
    callable ``t_x -> mask``. ``reference`` (an image) adds metrics to the report.
    """
    config.validate()
    rgb = np.asarray(rgb, dtype=np.float64)
    depth = as_depth_map(depth)
    mask = np.asarray(mask, dtype=np.float64)
    if rgb.shape[:2] != depth.shape or mask.shape != depth.shape:
        raise InvalidInputError("rgb, depth and mask must share dimensions")
    timings = {}
    timer = _Timer(timings)
    inter = {}

    with timer.stage("geometry"):
        fg = (mask >= config.mask_threshold) & depth.valid
        if not fg.any():
            raise EmptyForegroundError("no foreground pixel with valid depth")
        z_ref = float(np.median(depth.values[fg]))
        t_z = 2.0 * z_ref if config.t_z == "auto" else float(config.t_z)
        f2 = scaled_focal(k1.f, z_ref, t_z)
        k2 = k1.with_focal(f2)
        anchor_px, anchor = select_anchor_pixel(mask, depth, k1, config.mask_threshold)

    search = None
    with timer.stage("search"):
        if config.t_x == "search":
            if target is None:
                raise InvalidInputError("t_x='search' needs a target mask or rear views")
            res = txsearch.search_translation(rgb, depth, mask, k1, t_z, target,
                                              bins=txsearch.make_bins(config.n_bins), z_ref=z_ref,
                                              radius=config.splat_radius, z_eps=config.z_eps,
                                              mask_threshold=config.mask_threshold)
            t_x = res.best_tx
            search = res.to_json()
        else:
            t_x = 0.0 if config.t_x == "zero" else float(config.t_x)
        theta = 0.0 if t_x == 0 else compute_theta(t_x, (anchor.x, anchor.y, anchor.z + t_z))
        move = compose_camera_move(t_z, t_x, anchor)

    with timer.stage("warp"):
        wr = warp_frame(rgb, features, mask, depth, k1, k2, move, config.splat_radius, config.z_eps,
                        config.mask_threshold)
        inter["warped_rgb"] = wr.rgb.image
        inter["coverage"] = wr.mask

    with timer.stage("fill"):
        fill = blendcomp.naive_fill(wr.rgb, config.fill_threshold)
        inter["filled"] = fill.image
        fg_out = foreground_mask(wr.mask, config.close_radius)
        inter["fg_mask"] = fg_out.astype(np.float64)

    with timer.stage("blend"):
        warped_defined = np.where((wr.mask > 0)[:, :, None], wr.rgb.image, fill.image)
        blended = blendcomp.blend(warped_defined, fill.image, wr.mask, config.blend_levels)
        inter["blended"] = blended

    with timer.stage("background"):
        dilated = blendcomp.dilate_mask(mask >= config.mask_threshold, config.dilate_radius)
        bg_bundle = WarpedBundle(rgb, 1.0 - dilated, np.zeros(mask.shape))
        bg = blendcomp.naive_fill(bg_bundle, 0.5).image
        inter["background"] = bg

    with timer.stage("compose"):
        m_s = blendcomp.smooth_mask(fg_out.astype(np.float64), config.mask_sigma)
        inter["smoothed_mask"] = m_s
        final = blendcomp.compose(blended, bg, m_s)

    metrics = None
    if reference is not None:
        with timer.stage("metrics"):
            reference = np.asarray(reference, dtype=np.float64)
            metrics = {"psnr_db": _json_float(lossmetrics.psnr(final, reference)),
                       "ssim": lossmetrics.ssim(final, reference)}

    missing_before = int(np.count_nonzero(fg_out & (wr.mask < config.fill_threshold)))
    defined = (wr.mask >= config.fill_threshold) | fill.filled
    report = RunReport(
        t_z=t_z, t_x=t_x, theta=theta, f_in=k1.f, f_out=f2, z_ref=z_ref,
        anchor_px=[anchor_px.u, anchor_px.v],
        missing_px_before=missing_before,
        missing_px_after=int(np.count_nonzero(fg_out & ~defined)),
        filled_px=int(np.count_nonzero(fg_out & fill.filled)),
        search=search, metrics=metrics, timings=timings)
    return RectifyResult(final, report, inter)


def _json_float(x: float):
    return "inf" if math.isinf(x) else float(x)


def _target_from_config(config: PipelineConfig, k1: CameraIntrinsics, t_z, mask, depth):
    if config.target_mask:
        return io.read_mask(config.target_mask)
    if config.rear_views:
        from .dataset import read_sample
        from .fixtures import synthesize_multiview_target

        pair = read_sample(config.rear_views)
        _, anchor = select_anchor_pixel(mask, depth, k1, config.mask_threshold)
        fg = (mask >= config.mask_threshold) & depth.valid
        z_ref = float(np.median(depth.values[fg]))
        tz = 2.0 * z_ref if t_z == "auto" else float(t_z)
        k2 = k1.with_focal(scaled_focal(k1.f, z_ref, tz))
        return lambda tx: synthesize_multiview_target(pair.rear_views, tx, tz, k2, anchor).mask
    return None


def rectify(config: PipelineConfig):
    """File-based pipeline; writes ``rectified.png``, ``report.json`` and ``timings.json`` to ``out_dir``."""
    config.validate()
    for name in ("rgb", "depth", "mask", "camera"):
        if not getattr(config, name):
            raise InvalidInputError(f"missing required input: {name}")
    rgb = io.read_image(config.rgb)
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[:, :, None], 3, axis=2)
    depth = io.read_depth(config.depth)
    mask = io.read_mask(config.mask)
    k1, size, _ = io.read_camera(config.camera)
    if size != (rgb.shape[1], rgb.shape[0]):
        raise InvalidInputError(f"camera size {size} does not match the image {rgb.shape[1]}x{rgb.shape[0]}")
    features = io.read_features(config.features) if config.features else None
    reference = io.read_image(config.reference) if config.reference else None
    target = _target_from_config(config, k1, config.t_z, mask, depth) if config.t_x == "search" else None

    result = rectify_arrays(rgb, depth, mask, k1, config, features=features, target=target, reference=reference)
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        io.write_image(out / "rectified.png", result.image)
        io.write_json(out / "report.json", result.report.to_json())
        io.write_json(out / "timings.json", result.report.timings)
    if config.debug_dir:
        dump_intermediates(config.debug_dir, result.intermediates)
    return result.image, result.report


def dump_intermediates(d, inter: dict) -> None:
    d = Path(d)
    d.mkdir(parents=True, exist_ok=True)
    for name, arr in inter.items():
        np.save(d / f"{name}.npy", arr)
        io.write_image(d / f"{name}.png", arr)
