"""Time the numba and pure-numpy backends on the two hot kernels.

    python benchmarks/bench_kernels.py [--size 320x240] [--repeat 5]

Splatting warps a fixture close view to its far pose; rendering ray-casts
the same scene. The first numba call (JIT compile or cache load) is reported
separately and excluded from the steady-state timings.
"""

import argparse
import statistics
import time

import numpy as np

from perspfix import _accel
from perspfix.camgeom import compose_camera_move
from perspfix.fixtures import anchor_for, capture_pair, close_intrinsics, gen_scene, render
from perspfix.warp import build_point_cloud, splat


def timed(fn, repeat):
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", default="320x240")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    w, h = (int(x) for x in args.size.lower().split("x"))

    pair = capture_pair(gen_scene(0), close_intrinsics(w, h), (w, h), rear=False)
    c = pair.close
    cloud = build_point_cloud(c.rgb, c.depth, c.mask, c.intrinsics)
    move = compose_camera_move(pair.t_z, 0.05, anchor_for(pair))
    kernels = {
        "splat": lambda: splat(cloud, pair.far.intrinsics, move, (w, h)),
        "render": lambda: render(pair.scene, c.intrinsics, c.pose, (w, h)),
    }

    results = {}
    outputs = {}
    for backend in ("numba", "numpy"):
        if backend == "numba" and not _accel.HAS_NUMBA:
            continue
        _accel.set_backend(backend)
        for name, fn in kernels.items():
            t0 = time.perf_counter()
            outputs[backend, name] = fn()
            first = time.perf_counter() - t0
            results[backend, name] = (first, timed(fn, args.repeat))

    print(f"size {w}x{h}, {cloud.points.shape[0]} splatted points, median of {args.repeat} runs")
    print(f"{'kernel':<8}{'backend':<8}{'first call s':>14}{'steady s':>11}{'speedup':>9}")
    for name in kernels:
        base = results.get(("numpy", name), (0, float("nan")))[1]
        for backend in ("numba", "numpy"):
            if (backend, name) not in results:
                continue
            first, steady = results[backend, name]
            print(f"{name:<8}{backend:<8}{first:>14.4f}{steady:>11.4f}{base / steady:>8.1f}x")
    if ("numba", "splat") in outputs:
        a, b = outputs["numba", "splat"], outputs["numpy", "splat"]
        same = np.array_equal(a.image, b.image) and np.array_equal(a.coverage, b.coverage)
        print(f"splat outputs bit-identical across backends: {same}")
        ra, rb = outputs["numba", "render"], outputs["numpy", "render"]
        same = np.array_equal(ra.depth.values, rb.depth.values, equal_nan=True) and np.array_equal(ra.rgb, rb.rgb)
        print(f"render outputs bit-identical across backends: {same}")


if __name__ == "__main__":
    main()
