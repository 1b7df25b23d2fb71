"""Compare the numba and numpy rasterizer paths on identical scenes.

    python3 benchmarks/bench_render.py [--frames 50] [--vehicles 3]
"""
import argparse
import time

import numpy as np

from monovel.scenegen import SceneConfig, sample_vehicles
from monovel.scenegen.generator import _painter_quads
from monovel.scenegen.render import render_frame


def bench(fn, repeats):
    fn()  # warm-up (numba compiles on first call)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--frames", type=int, default=50)
    parser.add_argument("--vehicles", type=int, default=3)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    config = SceneConfig(num_vehicles=args.vehicles)
    rng = np.random.default_rng(0)
    scenes = [_painter_quads(sample_vehicles(config, rng), False) for _ in range(args.frames)]

    def run(use_numba):
        return [render_frame(config.image_size, config.intrinsics, q, use_numba=use_numba) for q in scenes]

    a, b = run(True), run(False)
    identical = all(all(np.array_equal(x, y) for x, y in zip(fa, fb)) for fa, fb in zip(a, b))
    t_numba = bench(lambda: run(True), args.repeats)
    t_numpy = bench(lambda: run(False), args.repeats)
    h, w = config.image_size
    print(f"{args.frames} frames of {h}x{w}, {args.vehicles} vehicles")
    print(f"numba: {1e3 * t_numba / args.frames:8.2f} ms/frame")
    print(f"numpy: {1e3 * t_numpy / args.frames:8.2f} ms/frame")
    print(f"speedup {t_numpy / t_numba:.1f}x; outputs bit-identical: {identical}")


if __name__ == "__main__":
    main()
