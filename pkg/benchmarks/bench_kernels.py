"""Time the compiled and numpy kernel backends on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--number 20]

Prints one row per (kernel, backend) with the best per-call time and the
speedup of the compiled backend over the fallback. Outputs of the two
backends are also compared for exact equality.
"""

import argparse
import timeit

import numpy as np

from contextcnn.kernels import available_backends, load_backend


def _cases(rng):
    x = rng.standard_normal((16, 16, 32, 32)).astype(np.float32)  # second conv layer of the default backbone
    fmap = rng.standard_normal((16, 32, 16, 16)).astype(np.float32)
    rois = []
    for b in range(16):
        for _ in range(10):
            r0, c0 = rng.integers(0, 12, 2)
            r1, c1 = r0 + rng.integers(1, 16 - r0), c0 + rng.integers(1, 16 - c0)
            rois.append((b, r0, c0, r1, c1))
    rois = np.array(rois, dtype=np.int64)
    return x, fmap, rois


def bench(repeat, number, seed=0):
    rng = np.random.default_rng(seed)
    x, fmap, rois = _cases(rng)
    rows = {}
    outputs = {}
    for name in available_backends():
        k = load_backend(name)
        cols = k.im2col(x, 3, 1, 1)
        out, argmax = k.roi_pool_forward(fmap, rois, 7, 7)
        grad = np.ones_like(out)
        batch_index = np.ascontiguousarray(rois[:, 0])
        calls = {
            "im2col": lambda: k.im2col(x, 3, 1, 1),
            "col2im": lambda: k.col2im(cols, 16, 32, 32, 3, 1, 1),
            "roi_pool_forward": lambda: k.roi_pool_forward(fmap, rois, 7, 7),
            "roi_pool_backward": lambda: k.roi_pool_backward(grad, argmax, batch_index, 16, 16, 16),
        }
        outputs[name] = {kernel: fn() for kernel, fn in calls.items()}
        for kernel, fn in calls.items():
            best = min(timeit.repeat(fn, repeat=repeat, number=number)) / number
            rows[kernel, name] = best
    return rows, outputs


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=20)
    args = parser.parse_args(argv)
    rows, outputs = bench(args.repeat, args.number)
    backends = sorted({b for _, b in rows})
    print(f"{'kernel':<20}" + "".join(f"{b + ' (ms)':>16}" for b in backends) + f"{'speedup':>10}{'equal':>8}")
    for kernel in dict.fromkeys(k for k, _ in rows):
        times = [rows[kernel, b] * 1e3 for b in backends]
        line = f"{kernel:<20}" + "".join(f"{t:>16.3f}" for t in times)
        if len(backends) == 2:
            fast, slow = rows[kernel, "cython"], rows[kernel, "python"]
            equal = _same(outputs["cython"][kernel], outputs["python"][kernel])
            line += f"{slow / fast:>9.1f}x{str(equal):>8}"
        print(line)


if __name__ == "__main__":
    main()
