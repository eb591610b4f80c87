"""Time the compiled compositing core against the numpy fallback.

    python benchmarks/bench_raster.py [--splats 2000] [--size 128] [--repeat 5]

Both backends see the same projected splats; the script also reports the
largest difference between their outputs.
"""

import argparse
import time

import numpy as np

from splatfuse import kernels
from splatfuse.render.camera import Camera
from splatfuse.render.project import project_all
from splatfuse.render.rasterize import _bboxes


def make_inputs(n, size, seed=0):
    gen = np.random.default_rng(seed)
    cam = Camera.look_at((6.0, 1.0, 3.0), (0.0, 0.0, 0.0), size, size, 60.0)
    p = project_all(gen.normal(scale=1.2, size=(n, 3)), gen.uniform(-3.2, -1.8, (n, 3)), gen.normal(size=(n, 4)),
                    gen.normal(size=n), gen.normal(size=(n, 3)), cam)
    order = np.flatnonzero(p.visible)
    order = order[np.lexsort((order, p.depth[order]))]
    bb = _bboxes(p.mean2d[order], p.cov2d[order], size, size)
    fwd = (p.mean2d[order], p.conic[order], p.color[order], p.alpha[order], p.depth[order], bb, size, size,
           np.array([0.1, 0.2, 0.3]))
    seed_img = gen.normal(size=(size, size, 3))
    bwd = fwd[:4] + fwd[5:] + (seed_img,)
    return fwd, bwd


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--splats", type=int, default=2000)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    fwd, bwd = make_inputs(args.splats, args.size)
    backends = kernels.backends()
    if "native" not in backends:
        print("compiled core not built; only the fallback is available")
    results = {}
    print(f"{len(fwd[0])} visible splats, {args.size}x{args.size} pixels, best of {args.repeat}")
    print(f"{'backend':<8} {'forward (ms)':>13} {'backward (ms)':>14}")
    for name, impl in backends.items():
        tf, of = best_of(lambda: kernels.forward(*fwd, impl=impl), args.repeat)
        tb, ob = best_of(lambda: kernels.backward(*bwd, impl=impl), args.repeat)
        results[name] = (tf, tb, of + ob)
        print(f"{name:<8} {1e3 * tf:13.2f} {1e3 * tb:14.2f}")
    if len(results) == 2:
        (tf_n, tb_n, out_n), (tf_p, tb_p, out_p) = results["native"], results["python"]
        diff = max(float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float)))) for a, b in zip(out_n, out_p))
        print(f"speedup: forward {tf_p / tf_n:.1f}x, backward {tb_p / tb_n:.1f}x; max abs difference {diff:.2e}")


if __name__ == "__main__":
    main()
