"""Compare the compiled and numpy kernel backends on training-sized shapes.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Prints the median time per call of each kernel for both backends, the
speedup, and whether the two outputs are bit-identical.
"""
import argparse
import statistics
import time

import numpy as np

from crispnet.autodiff.kernels import _fallback

try:
    from crispnet.autodiff.kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None

# (batch, channels, height, width, kernel, stride): first and last encoder
# levels of the desk model at batch 8, plus the strided global CNN stem
SHAPES = [
    (8, 8, 34, 34, 3, 1),
    (8, 32, 10, 10, 3, 1),
    (8, 3, 50, 66, 3, 2),
]


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _cases(rng):
    for n, c, h, w, k, s in SHAPES:
        xp = rng.standard_normal((n, c, h, w))
        cols = _fallback.im2col(xp, k, k, s)
        g = rng.standard_normal(cols.shape)
        tag = f"{n}x{c}x{h}x{w} k{k} s{s}"
        yield f"im2col {tag}", lambda m, xp=xp, k=k, s=s: m.im2col(xp, k, k, s)
        yield f"col2im {tag}", lambda m, g=g, n=n, c=c, h=h, w=w, k=k, s=s: m.col2im(g, n, c, h, w, k, k, s)
    x = rng.standard_normal((8, 16, 32, 32)).astype(np.float32)
    pooled, idx = _fallback.maxpool2x2(x)
    yield "maxpool2x2 8x16x32x32", lambda m: m.maxpool2x2(x)
    yield "maxpool2x2_backward 8x16x16x16", lambda m: m.maxpool2x2_backward(pooled, idx)


def _same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=30)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels are not built; only the fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}  identical")
    for name, call in _cases(rng):
        tp = _median_time(lambda: call(_fallback), args.repeat) * 1e3
        if _ckernels is None:
            print(f"{name:40s} {tp:10.3f} {'-':>10s} {'-':>8s}  -")
            continue
        tc = _median_time(lambda: call(_ckernels), args.repeat) * 1e3
        same = _same(call(_fallback), call(_ckernels))
        print(f"{name:40s} {tp:10.3f} {tc:10.3f} {tp / tc:7.2f}x  {same}")


if __name__ == "__main__":
    main()
