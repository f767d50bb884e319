"""Compiled kernel vs numpy fallback on the car-proxy scene.

    python benchmarks/bench_backends.py [--res 50x75] [--spp 4] [--repeat 3]

Reports the best wall time of each backend for a plain render, a render with
camera-position gradients, and radius clustering of the target-view point cloud.
Checks that both backends agree bit for bit and prints the speedup.
"""

import argparse
import time

import numpy as np

from posefusion import _backend, _cluster
from posefusion.cli import _resolution
from posefusion.geometry import default_scene, make_look_at
from posefusion.lidar import capture_point_cloud
from posefusion.render import RenderSettings, render_raw


def best_time(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--res", type=_resolution, default=(50, 75))
    ap.add_argument("--spp", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args(argv)

    scene = default_scene()
    pose = make_look_at((20.0, 13.0, 23.0), scene.reference_centroid(), (0, 1, 0), 60.0, args.res)
    settings = RenderSettings(args.spp, 3, 0, args.res)
    backends = _backend.available()
    print(f"resolution {args.res[0]}x{args.res[1]}, spp {args.spp}, backends {backends}")

    results = {}
    for grad in (False, True):
        label = "render+grad" if grad else "render"
        for name in backends:
            t, out = best_time(lambda: render_raw(scene, pose, settings, want_grad=grad,
                                                  threads=args.threads, backend=name), args.repeat)
            results[(label, name)] = (t, out)
            print(f"{label:12s} {name:7s} {t * 1e3:9.1f} ms")
        if len(backends) == 2:
            (tc, oc), (tp, op) = results[(label, "cython")], results[(label, "python")]
            same = np.array_equal(oc[0], op[0]) and (not grad or np.array_equal(oc[1], op[1]))
            print(f"{label:12s} speedup {tp / tc:6.1f}x, bit-identical: {same}")

    target = make_look_at((8.0, 5.0, 14.0), scene.reference_centroid(), (0, 1, 0), 60.0, args.res)
    pts = capture_point_cloud(scene, target, settings, threads=args.threads).points
    labels = {}
    for name in backends:
        t, labels[name] = best_time(lambda: _cluster.component_labels(pts, 0.75, name), args.repeat)
        results[("cluster", name)] = t
        print(f"{'cluster':12s} {name:7s} {t * 1e3:9.1f} ms  ({len(pts)} points)")
    if len(backends) == 2:
        same = np.array_equal(labels["cython"], labels["python"])
        speedup = results[("cluster", "python")] / results[("cluster", "cython")]
        print(f"{'cluster':12s} speedup {speedup:6.1f}x, identical labels: {same}")
    return results


if __name__ == "__main__":
    main()
