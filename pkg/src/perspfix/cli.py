"""Command-line interface.

Exit codes: 0 success, 2 invalid input, 3 geometric degeneracy, 4 I/O error.
Translations on the command line are in centimeters.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io, lossmetrics, txsearch
from .camgeom import compose_camera_move, scaled_focal, select_anchor_pixel
from .errors import InvalidInputError, PerspfixError
from .pipeline import PipelineConfig, rectify

log = logging.getLogger("perspfix")


def _emit(doc, out=None):
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _cm(value):
    """Parse a centimeter value, passing keywords through."""
    if value is None:
        return None
    if value in ("auto", "zero", "search"):
        return value
    try:
        return float(value) / 100.0
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number of centimeters, got {value!r}")


def _add_inputs(p, required=True):
    p.add_argument("--rgb", required=required)
    p.add_argument("--depth", required=required, help="PFM (meters) or 16-bit PNG with JSON sidecar")
    p.add_argument("--mask", required=required)
    p.add_argument("--camera", required=required, help='JSON {"f","cx","cy","width","height"}')


def _load_inputs(args):
    rgb = io.read_image(args.rgb)
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[:, :, None], 3, axis=2)
    depth = io.read_depth(args.depth)
    mask = io.read_mask(args.mask)
    k, _, _ = io.read_camera(args.camera)
    return rgb, depth, mask, k


def _move_params(depth, mask, k, t_z):
    fg = (mask >= 0.5) & depth.valid
    if not fg.any():
        raise InvalidInputError("no foreground pixel with valid depth")
    z_ref = float(np.median(depth.values[fg]))
    t_z = 2.0 * z_ref if t_z in (None, "auto") else float(t_z)
    return z_ref, t_z, k.with_focal(scaled_focal(k.f, z_ref, t_z))


def cmd_rectify(args):
    overrides = {
        "rgb": args.rgb, "depth": args.depth, "mask": args.mask, "camera": args.camera,
        "out_dir": args.out_dir, "features": args.features, "target_mask": args.target_mask,
        "rear_views": args.rear_views, "reference": args.reference, "debug_dir": args.debug_dir,
        "t_z": args.t_z_cm, "t_x": args.t_x_cm, "n_bins": args.bins, "splat_radius": args.splat_radius,
        "z_eps": args.z_eps, "blend_levels": args.blend_levels, "mask_sigma": args.mask_sigma,
        "dilate_radius": args.dilate_radius,
    }
    if args.config:
        config = PipelineConfig.from_file(args.config, **overrides)
    else:
        config = PipelineConfig(**{k: v for k, v in overrides.items() if v is not None})
    _, report = rectify(config)
    _emit(report.to_json(with_timings=args.timings))


def cmd_warp(args):
    from .warp import warp_frame

    rgb, depth, mask, k = _load_inputs(args)
    z_ref, t_z, k2 = _move_params(depth, mask, k, args.t_z_cm)
    _, anchor = select_anchor_pixel(mask, depth, k)
    t_x = args.t_x_cm or 0.0
    move = compose_camera_move(t_z, t_x, anchor)
    features = io.read_features(args.features) if args.features else None
    wr = warp_frame(rgb, features, mask, depth, k, k2, move, args.splat_radius, args.z_eps)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_image(out / "warped_rgb.png", wr.rgb.image)
    io.write_image(out / "coverage.png", wr.mask)
    io.write_depth(out / "warped_depth.pfm", wr.rgb.zbuffer)
    if wr.features is not None:
        io.write_features(out / "warped_features.bin", wr.features.image)
    io.write_json(out / "camera_out.json", io.camera_to_json(k2, (rgb.shape[1], rgb.shape[0]), move))
    _emit({"t_z_m": t_z, "t_x_m": t_x, "z_ref_m": z_ref, "f_out": k2.f,
           "missing_px": int(np.count_nonzero(wr.mask < 0.5)),
           "behind_camera": wr.rgb.stats.behind_camera, "outside_image": wr.rgb.stats.outside_image})


def cmd_search_tx(args):
    rgb, depth, mask, k = _load_inputs(args)
    z_ref, t_z, k2 = _move_params(depth, mask, k, args.t_z_cm)
    if args.target_mask:
        target = io.read_mask(args.target_mask)
    elif args.rear_views:
        from .dataset import read_sample
        from .fixtures import synthesize_multiview_target

        pair = read_sample(args.rear_views)
        _, anchor = select_anchor_pixel(mask, depth, k)

        def target(tx):
            return synthesize_multiview_target(pair.rear_views, tx, t_z, k2, anchor).mask
    else:
        raise InvalidInputError("search-tx needs --target-mask or --rear-views")
    res = txsearch.search_translation(rgb, depth, mask, k, t_z, target, txsearch.make_bins(args.bins), z_ref=z_ref)
    _emit(res.to_json(), args.out)


def cmd_gen_fixtures(args):
    from .dataset import generate_dataset
    from .fixtures import SceneParams

    params = SceneParams() if args.placement == "centered" else SceneParams.off_center(args.placement)
    seeds = range(args.seed_start, args.seed_start + args.count)
    manifest = generate_dataset(args.out, seeds, (args.width, args.height), params, rear=not args.no_rear)
    _emit({"out": str(args.out), "samples": len(manifest["samples"])})


def cmd_eval(args):
    a, b = io.read_image(args.a), io.read_image(args.b)
    if args.mask:
        m = io.read_mask(args.mask) >= 0.5
        p = lossmetrics.masked_psnr(a, b, m)
    else:
        p = lossmetrics.psnr(a, b)
    doc = {"psnr_db": "inf" if math.isinf(p) else p, "ssim": lossmetrics.ssim(a, b), "lmke_norm": None}
    if args.lm_pred or args.lm_ref:
        if not (args.lm_pred and args.lm_ref):
            raise InvalidInputError("landmark error needs both --lm-pred and --lm-ref")
        size = args.image_size or max(a.shape[:2])
        doc["lmke_norm"] = lossmetrics.landmark_error(io.read_landmarks(args.lm_pred), io.read_landmarks(args.lm_ref), size)
    _emit(doc, args.out)


def cmd_losses(args):
    w = lossmetrics.LossWeights(**json.loads(args.weights)) if args.weights else lossmetrics.LossWeights()
    parts = {}
    if args.depth_pred or args.depth_gt:
        if not (args.depth_pred and args.depth_gt and args.mask):
            raise InvalidInputError("depth loss needs --depth-pred, --depth-gt and --mask")
        parts["depth"] = lossmetrics.depth_loss(io.read_depth(args.depth_pred), io.read_depth(args.depth_gt),
                                                io.read_mask(args.mask), w)
    if args.pred_img or args.target_img:
        if not (args.pred_img and args.target_img):
            raise InvalidInputError("photometric loss needs --pred-img and --target-img")
        regions = {}
        if args.face_mask:
            regions["face"] = io.read_mask(args.face_mask)
        if args.missing_mask:
            regions["missing"] = io.read_mask(args.missing_mask)
        parts["photo"] = lossmetrics.photometric_loss(io.read_image(args.pred_img), io.read_image(args.target_img),
                                                      regions, w)
    if args.mask_pred or args.mask_gt:
        if not (args.mask_pred and args.mask_gt):
            raise InvalidInputError("mask loss needs --mask-pred and --mask-gt")
        parts["mask"] = lossmetrics.mask_bce_loss(io.read_mask(args.mask_pred), io.read_mask(args.mask_gt) >= 0.5)
    if not parts:
        raise InvalidInputError("no loss inputs given")
    if args.stage:
        w, toggles = lossmetrics.stage_config(args.stage, w)
    else:
        toggles = lossmetrics.LossToggles()
    _emit({"parts": parts, "overall": lossmetrics.overall_loss(parts, w, toggles)}, args.out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perspfix", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rectify", help="run the full rectification pipeline")
    _add_inputs(p, required=False)
    p.add_argument("--config", help="TOML or JSON file with PipelineConfig fields")
    p.add_argument("--out-dir")
    p.add_argument("--features")
    p.add_argument("--target-mask")
    p.add_argument("--rear-views", help="fixture sample directory used to synthesize per-bin targets")
    p.add_argument("--reference")
    p.add_argument("--debug-dir")
    p.add_argument("--t-z-cm", type=_cm, help="backward move in cm, or 'auto'")
    p.add_argument("--t-x-cm", type=_cm, help="sideways move in cm, 'zero' or 'search'")
    p.add_argument("--bins", type=int)
    p.add_argument("--splat-radius", type=float)
    p.add_argument("--z-eps", type=float)
    p.add_argument("--blend-levels", type=int)
    p.add_argument("--mask-sigma", type=float)
    p.add_argument("--dilate-radius", type=int)
    p.add_argument("--timings", action="store_true", help="include stage timings in the printed report")
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("warp", help="warp an RGB-D frame to a new camera")
    _add_inputs(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--features")
    p.add_argument("--t-z-cm", type=_cm, default="auto")
    p.add_argument("--t-x-cm", type=_cm, default=0.0)
    p.add_argument("--splat-radius", type=float, default=0.5)
    p.add_argument("--z-eps", type=float, default=0.005)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("search-tx", help="brute-force horizontal translation search")
    _add_inputs(p)
    p.add_argument("--target-mask")
    p.add_argument("--rear-views")
    p.add_argument("--t-z-cm", type=_cm, default="auto")
    p.add_argument("--bins", type=int, default=txsearch.N_BINS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_search_tx)

    p = sub.add_parser("gen-fixtures", help="render a procedural dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--seed-start", type=int, default=0)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--placement", choices=("centered", "left", "right"), default="centered")
    p.add_argument("--no-rear", action="store_true")
    p.set_defaults(func=cmd_gen_fixtures)

    p = sub.add_parser("eval", help="PSNR / SSIM / landmark error between two images")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--mask")
    p.add_argument("--lm-pred")
    p.add_argument("--lm-ref")
    p.add_argument("--image-size", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("losses", help="evaluate loss terms on files")
    p.add_argument("--depth-pred")
    p.add_argument("--depth-gt")
    p.add_argument("--mask")
    p.add_argument("--pred-img")
    p.add_argument("--target-img")
    p.add_argument("--face-mask")
    p.add_argument("--missing-mask")
    p.add_argument("--mask-pred")
    p.add_argument("--mask-gt")
    p.add_argument("--weights", help="JSON object of LossWeights overrides")
    p.add_argument("--stage", type=int, choices=(1, 2, 3, 4))
    p.add_argument("--out")
    p.set_defaults(func=cmd_losses)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except PerspfixError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except (KeyError, ValueError) as exc:
        log.error("invalid input: %s", exc)
        return 2
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
