"""On-disk fixture datasets: one directory per sample plus a manifest."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .fixtures import (
    REAR_VIEWS,
    Capture,
    CapturePair,
    SceneParams,
    capture_pair,
    close_intrinsics,
    gen_scene,
)
from .errors import PerspfixIOError


def _write_capture(d: Path, name: str, cap: Capture):
    io.write_image(d / f"{name}_rgb.png", cap.rgb)
    io.write_depth(d / f"{name}_depth.pfm", cap.depth)
    io.write_image(d / f"{name}_mask.png", cap.mask)


def write_sample(d, pair: CapturePair) -> None:
    d = Path(d)
    d.mkdir(parents=True, exist_ok=True)
    cams = {"t_z": pair.t_z, "z_ref": pair.z_ref}
    views = {"close": pair.close, "far": pair.far}
    views.update({f"rear_{k}": v for k, v in pair.rear_views.items()})
    for name, cap in views.items():
        _write_capture(d, name, cap)
        cams[name] = io.camera_to_json(cap.intrinsics, cap.size, cap.pose)
    io.write_json(d / "cameras.json", cams)


def _read_capture(d: Path, name: str, cam: dict) -> Capture:
    k, _, pose = io.camera_from_json(cam)
    return Capture(io.read_image(d / f"{name}_rgb.png"), io.read_depth(d / f"{name}_depth.pfm"),
                   io.read_mask(d / f"{name}_mask.png"), k, pose)


def read_sample(d) -> CapturePair:
    d = Path(d)
    if not (d / "cameras.json").exists():
        raise PerspfixIOError(f"{d} is not a fixture sample (no cameras.json)")
    cams = io.read_json(d / "cameras.json")
    close = _read_capture(d, "close", cams["close"])
    far = _read_capture(d, "far", cams["far"])
    rear = {v: _read_capture(d, f"rear_{v}", cams[f"rear_{v}"]) for v in REAR_VIEWS if f"rear_{v}" in cams}
    return CapturePair(close, far, rear, float(cams["t_z"]), float(cams["z_ref"]))


def generate_dataset(out_dir, seeds, size=(320, 240), params: SceneParams = SceneParams(),
                     rear: bool = True) -> dict:
    """Render and write one sample per seed; returns the manifest (also written as manifest.json)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k = close_intrinsics(*size)
    samples = []
    for seed in seeds:
        pair = capture_pair(gen_scene(int(seed), params), k, size, rear=rear)
        name = f"sample_{int(seed):05d}"
        write_sample(out / name, pair)
        samples.append({"seed": int(seed), "dir": name, "t_z": pair.t_z, "z_ref": pair.z_ref,
                        "head_center": [float(x) for x in np.asarray(pair.scene.head.center)]})
    manifest = {"width": size[0], "height": size[1], "params": asdict(params), "samples": samples}
    io.write_json(out / "manifest.json", manifest)
    return manifest
