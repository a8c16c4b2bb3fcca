"""Benchmark: compiled kernel lane vs the numpy fallback.

Times the two hot paths (bilinear event voting and the splat
record/backward pipeline) on a representative desk-scale workload and
prints a side-by-side table.

Run:  python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from evsplat.kernels import _ref

try:
    from evsplat.kernels import _core
except ImportError:
    _core = None


def timeit(fn, repeats: int) -> float:
    fn()  # warm up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def splat_inputs(rng, n=500, width=64, height=64):
    means2d = np.stack([rng.uniform(0, width, n), rng.uniform(0, height, n)], axis=1)
    a = rng.uniform(0.05, 0.5, n)
    c = rng.uniform(0.05, 0.5, n)
    b = rng.uniform(-1, 1, n) * np.sqrt(a * c) * 0.5
    inv_cov = np.stack([a, b, c], axis=1)
    opacity = rng.uniform(0.3, 0.95, n)
    radius = 3.0 / np.sqrt(np.minimum(a, c))
    bbox = np.stack([
        np.maximum(np.floor(means2d[:, 0] - radius), 0),
        np.minimum(np.floor(means2d[:, 0] + radius) + 2, width),
        np.maximum(np.floor(means2d[:, 1] - radius), 0),
        np.minimum(np.floor(means2d[:, 1] + radius) + 2, height),
    ], axis=1).astype(np.int64)
    order = np.argsort(rng.uniform(1, 4, n), kind="stable")
    return order, means2d, inv_cov, opacity, bbox, width, height


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    if _core is None:
        print("compiled kernels unavailable; build with "
              "`python setup.py build_ext --inplace` to compare lanes")
    lanes = [("numpy", _ref)] + ([("cython", _core)] if _core else [])

    rng = np.random.default_rng(0)
    n_events = 30_000
    xs = rng.uniform(-2, 66, n_events)
    ys = rng.uniform(-2, 66, n_events)
    wts = np.ones(n_events)
    grad = rng.random((64, 64))

    sp = splat_inputs(rng)
    n = len(sp[3])
    colors = rng.uniform(0, 1, (n, 3))
    z = rng.uniform(1, 4, n)
    records = _ref.splat_records(*sp, 1 / 255.0, 1e-4, 0.999)
    pix, gauss, alpha, trans = records
    w = alpha * trans
    total_c = np.zeros((64 * 64, 3))
    total_d = np.zeros(64 * 64)
    total_w = np.zeros(64 * 64)
    np.add.at(total_c, pix, w[:, None] * colors[gauss])
    np.add.at(total_d, pix, w * z[gauss])
    np.add.at(total_w, pix, w)
    gc = rng.random((64 * 64, 3))
    gd = np.zeros(64 * 64)
    ga = np.zeros(64 * 64)
    bg = np.zeros(3)

    print(f"workload: {n_events} events into 64x64; {n} splats, "
          f"{len(pix)} blend records")
    print(f"{'kernel':<24}" + "".join(f"{name:>12}" for name, _ in lanes)
          + ("      speedup" if len(lanes) == 2 else ""))

    rows = [
        ("bilinear_vote", lambda impl: impl.bilinear_vote(xs, ys, wts, 64, 64)),
        ("bilinear_vote_backward",
         lambda impl: impl.bilinear_vote_backward(xs, ys, wts, grad)),
        ("splat_records",
         lambda impl: impl.splat_records(*sp, 1 / 255.0, 1e-4, 0.999)),
        ("splat_backward",
         lambda impl: impl.splat_backward(pix, gauss, alpha, trans, colors, z,
                                          sp[3], sp[1], sp[2], gc, gd, ga,
                                          total_c, total_d, total_w, bg,
                                          0.999, 64)),
    ]
    for name, call in rows:
        times = [timeit(lambda impl=impl: call(impl), args.repeats)
                 for _, impl in lanes]
        line = f"{name:<24}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:>12.1f}x"
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
