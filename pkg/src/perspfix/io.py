"""File formats: PFM / 16-bit PNG depth, PNG images and masks, raw feature tensors, JSON documents."""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .camgeom import CameraIntrinsics, RigidTransform
from .errors import InvalidInputError, PerspfixIOError
from .warp import DepthMap


def _open(path, mode="rb"):
    try:
        return open(path, mode)
    except OSError as exc:
        raise PerspfixIOError(f"cannot open {path}: {exc}") from exc


def read_pfm(path) -> np.ndarray:
    with _open(path) as fh:
        header = fh.readline().decode("latin-1").strip()
        if header not in ("Pf", "PF"):
            raise PerspfixIOError(f"{path}: not a PFM file")
        dims = fh.readline().decode("latin-1")
        m = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise PerspfixIOError(f"{path}: malformed PFM size line")
        w, h = int(m.group(1)), int(m.group(2))
        scale = float(fh.readline().decode("latin-1").strip())
        dtype = "<f4" if scale < 0 else ">f4"
        c = 3 if header == "PF" else 1
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != w * h * c:
        raise PerspfixIOError(f"{path}: truncated PFM data")
    data = data.reshape(h, w, c) if c == 3 else data.reshape(h, w)
    return np.flipud(data).astype(np.float64)  # PFM rows run bottom to top


def write_pfm(path, arr) -> None:
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim != 2:
        raise InvalidInputError("only single-channel PFM is written")
    h, w = arr.shape
    with _open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("latin-1"))
        fh.write(np.ascontiguousarray(np.flipud(arr)).tobytes())


def read_image(path) -> np.ndarray:
    """PNG (8- or 16-bit) as float in [0, 1]; grayscale stays 2-D, alpha is dropped."""
    try:
        im = Image.open(path)
        im.load()
    except OSError as exc:
        raise PerspfixIOError(f"cannot read image {path}: {exc}") from exc
    if im.mode in ("I;16", "I;16B", "I"):
        return np.asarray(im, dtype=np.float64) / 65535.0
    if im.mode not in ("L", "RGB"):
        im = im.convert("RGB")
    return np.asarray(im, dtype=np.float64) / 255.0


def write_image(path, arr, bits: int = 8) -> None:
    arr = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    try:
        if bits == 16:
            if arr.ndim != 2:
                raise InvalidInputError("16-bit output supports single-channel images only")
            Image.fromarray(np.rint(arr * 65535).astype(np.uint16)).save(path)
        else:
            Image.fromarray(np.rint(arr * 255).astype(np.uint8)).save(path)
    except OSError as exc:
        raise PerspfixIOError(f"cannot write {path}: {exc}") from exc


def read_mask(path) -> np.ndarray:
    m = read_image(path)
    return m.mean(axis=2) if m.ndim == 3 else m


def read_json(path) -> dict:
    with _open(path, "r") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON: {exc}") from exc


def write_json(path, doc) -> None:
    with _open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def depth_sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def read_depth(path) -> DepthMap:
    """PFM in meters, or 16-bit PNG scaled by the ``scale`` (meters per unit) of its JSON sidecar."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        values = read_pfm(path)
    elif path.suffix.lower() == ".png":
        side = depth_sidecar(path)
        if not side.exists():
            raise PerspfixIOError(f"16-bit depth {path} needs a sidecar {side} with a 'scale'")
        scale = float(read_json(side)["scale"])
        try:
            raw = np.asarray(Image.open(path), dtype=np.float64)
        except OSError as exc:
            raise PerspfixIOError(f"cannot read {path}: {exc}") from exc
        values = raw * scale
    else:
        raise InvalidInputError(f"unsupported depth format: {path.suffix}")
    if values.ndim != 2:
        raise InvalidInputError("depth must be single-channel")
    return DepthMap(values, np.isfinite(values) & (values > 0))


def write_depth(path, depth, scale: float = 1e-4) -> None:
    path = Path(path)
    d = depth if isinstance(depth, DepthMap) else DepthMap.from_array(depth)
    values = np.where(d.valid, d.values, 0.0)
    if path.suffix.lower() == ".pfm":
        write_pfm(path, values)
    else:
        units = np.rint(values / scale)
        if units.max() > 65535:
            raise InvalidInputError("depth exceeds the 16-bit range at this scale")
        Image.fromarray(units.astype(np.uint16)).save(path)
        write_json(depth_sidecar(path), {"scale": scale})


def read_features(path) -> np.ndarray:
    """Raw float32 HWC tensor; ``path`` may name the ``.bin`` data or its ``.json`` header."""
    path = Path(path)
    header = read_json(path.with_suffix(".json"))
    if header.get("dtype") != "f32" or header.get("layout") != "hwc":
        raise InvalidInputError("feature tensors must be f32 in hwc layout")
    w, h, c = int(header["w"]), int(header["h"]), int(header["c"])
    with _open(path.with_suffix(".bin")) as fh:
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != w * h * c:
        raise PerspfixIOError(f"{path}: expected {w * h * c} values, found {data.size}")
    return data.reshape(h, w, c).astype(np.float64)


def write_features(path, arr) -> None:
    path = Path(path)
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    write_json(path.with_suffix(".json"), {"w": w, "h": h, "c": c, "dtype": "f32", "layout": "hwc"})
    with _open(path.with_suffix(".bin"), "wb") as fh:
        fh.write(np.ascontiguousarray(arr).tobytes())


def camera_to_json(k: CameraIntrinsics, size, pose: RigidTransform | None = None) -> dict:
    doc = {"f": k.f, "cx": k.cx, "cy": k.cy, "width": int(size[0]), "height": int(size[1])}
    if pose is not None:
        doc["pose"] = pose.to_json()
    return doc


def camera_from_json(doc: dict):
    """Returns ``(intrinsics, (width, height), pose or None)``."""
    try:
        k = CameraIntrinsics(float(doc["f"]), float(doc["cx"]), float(doc["cy"]))
        size = (int(doc["width"]), int(doc["height"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"bad camera document: {exc}") from exc
    pose = RigidTransform.from_json(doc["pose"]) if "pose" in doc else None
    return k, size, pose


def read_camera(path):
    return camera_from_json(read_json(path))


def read_landmarks(path) -> np.ndarray:
    doc = read_json(path)
    pts = np.asarray(doc.get("points"), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInputError(f"{path}: 'points' must be a list of [u, v] pairs")
    return pts
