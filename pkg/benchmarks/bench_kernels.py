"""Compare the compiled kernel backend against the numpy fallback.

Times the convolution and pooling kernels on shapes representative of the
front-end (large kernel, stride 2) and the trained backend (3x3 stacks).

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 32]
"""

import argparse
import time

import numpy as np

from vonebench.kernels import numpy_backend

try:
    from vonebench.kernels import _ext
except ImportError:
    _ext = None


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--batch", type=int, default=32)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n = args.batch
    cases = [
        ("frontend conv 3->32 k19 s2 @64px", (n, 3, 64, 64), (32, 3, 19, 19), 2, 9),
        ("backend conv 64->64 k3 s1 @32px", (n, 64, 32, 32), (64, 64, 3, 3), 1, 1),
        ("backend conv 64->128 k3 s1 @16px", (n, 64, 16, 16), (128, 64, 3, 3), 1, 1),
    ]
    backends = [("numpy", numpy_backend)] + ([("ext", _ext)] if _ext else [])
    if _ext is None:
        print("compiled extension unavailable; timing numpy backend only")

    header = f"{'case':40s} " + " ".join(f"{name:>10s}" for name, _ in backends)
    print(header + ("    speedup" if _ext else ""))
    for label, xs, ws, stride, pad in cases:
        x = rng.normal(size=xs)
        w = rng.normal(size=ws)
        row = [f"{label:40s}"]
        times = []
        for _, mod in backends:
            t = _time(lambda m=mod: m.conv2d_forward(x, w, stride, pad), args.repeat)
            times.append(t)
            row.append(f"{t * 1e3:9.1f}ms")
        if len(times) == 2:
            row.append(f"{times[0] / times[1]:10.2f}x")
        print(" ".join(row))

        y = numpy_backend.conv2d_forward(x, w, stride, pad)
        g = rng.normal(size=y.shape)
        row = [f"{'  grad_weights + grad_input':40s}"]
        times = []
        for _, mod in backends:
            def both(m=mod):
                m.conv2d_grad_weights(x, g, stride, pad, ws[2], ws[3])
                m.conv2d_grad_input(g, w, stride, pad, xs[2], xs[3])
            t = _time(both, args.repeat)
            times.append(t)
            row.append(f"{t * 1e3:9.1f}ms")
        if len(times) == 2:
            row.append(f"{times[0] / times[1]:10.2f}x")
        print(" ".join(row))

    x = rng.normal(size=(n, 64, 32, 32))
    row = [f"{'maxpool 2x2 s2 @32px':40s}"]
    times = []
    for _, mod in backends:
        t = _time(lambda m=mod: m.maxpool2d_forward(x, 2, 2), args.repeat)
        times.append(t)
        row.append(f"{t * 1e3:9.1f}ms")
    if len(times) == 2:
        row.append(f"{times[0] / times[1]:10.2f}x")
    print(" ".join(row))


if __name__ == "__main__":
    main()
