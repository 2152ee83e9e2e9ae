"""Compare the compiled and numpy geometry kernels on a realistic scan.

    python3 benchmarks/bench_kernels.py [--res 32] [--repeat 3]

Reports best-of-N wall time per kernel and backend, and checks that both
backends return bitwise-identical results.
"""
import argparse
import time

import numpy as np

from recgan3d.kernels import backends
from recgan3d.meshscan import PinholeCamera, ViewPose, make_procedural_mesh, normalize_mesh


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--res", type=int, default=32)
    ap.add_argument("--image", type=int, default=128, help="depth image side in pixels")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    mesh = normalize_mesh(make_procedural_mesh("chair")).transformed(ViewPose(0.3, 0.4, 0.5).rotation())
    v0, v1, v2 = (np.ascontiguousarray(c) for c in mesh.corners)
    camera = PinholeCamera(width=args.image, height=args.image, focal=args.image * 140 / 128)
    dirs = np.ascontiguousarray(camera.ray_directions().reshape(-1, 3))
    origin = np.asarray(camera.center, dtype=np.float64)

    impls = backends()
    print(f"mesh: {len(mesh.triangles)} triangles; rays: {len(dirs)}; grid: {args.res}^3")
    print(f"{'kernel':<18}{'backend':<10}{'best [ms]':>12}{'speedup':>10}")
    for name, call in (
        ("cast_rays", lambda m: m.cast_rays(origin, dirs, v0, v1, v2)),
        ("sample_triangles", lambda m: m.sample_triangles(v0, v1, v2, args.res, 0.4)),
    ):
        results = {}
        for backend, module in impls.items():
            results[backend] = best_of(lambda: call(module), args.repeat)
        base = results["python"][0]
        for backend, (t, _) in results.items():
            print(f"{name:<18}{backend:<10}{t * 1e3:>12.2f}{base / t:>9.1f}x")
        if "cython" in results:
            a, b = results["python"][1], results["cython"][1]
            same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) else np.array_equal(a, b)
            print(f"{'':<18}identical output: {same}")
    if "cython" not in impls:
        print("compiled extension not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
