"""Timing comparison between the compiled kernels and the pure-Python twins.

Run as: python -m vdkit.bench [--repeats N] [--seed S]

Each kernel is timed on fixed random inputs with both backends and the
outputs are compared bitwise; any mismatch is reported loudly, since the
twins are required to agree exactly.
"""

import argparse
import math
import sys
import time

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None


def _norm_rows(rng, t, k):
    p = rng.random((t, k)) + 1e-3
    p /= p.sum(axis=1, keepdims=True)
    return np.log(p)


def _cases(rng):
    a64 = rng.standard_normal((64, 64))
    b64 = rng.standard_normal((64, 64))
    rows = rng.standard_normal((256, 64))
    vec = np.ascontiguousarray(rng.standard_normal(4096))
    feat = np.ascontiguousarray(rng.standard_normal((32, 32, 8)))
    kern = np.ascontiguousarray(rng.standard_normal((9, 8, 4)))
    off = np.ascontiguousarray(rng.standard_normal((32, 32, 9, 2)) * 0.5)
    lp = np.ascontiguousarray(_norm_rows(rng, 24, 6))
    ext = np.array([0, 2, 0, 4, 0, 2, 0], dtype=np.int32)
    return (
        ("matmul 64x64x64", "matmul", (a64, b64)),
        ("softmax 256x64", "softmax_rows", (rows,)),
        ("layer_norm 256x64", "layer_norm_rows", (rows, 1e-5)),
        ("sigmoid 4096", "sigmoid", (vec,)),
        ("tanh 4096", "tanh", (vec,)),
        ("deform_conv 32x32x8x4", "deform_conv3x3", (feat, kern, off)),
        ("ctc_grad T=24 A=5", "ctc_grad", (lp, ext)),
    )


def _time(fn, args, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _bit_equal(a, b):
    if isinstance(a, tuple):
        return all(_bit_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return a.shape == b.shape and np.array_equal(
            a.view(np.uint8), np.asarray(b).view(np.uint8)
        )
    return a == b or (a != a and b != b)


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python -m vdkit.bench", description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled backend not built; showing pure-Python timings only")
    rng = np.random.default_rng(args.seed)
    width = 26
    header = f"{'kernel':<{width}} {'python':>10}"
    if _compiled is not None:
        header += f" {'compiled':>10} {'speedup':>8} {'bitwise':>8}"
    print(header)
    mismatches = 0
    for name, attr, call_args in _cases(rng):
        py_fn = getattr(_kernels_py, attr)
        t_py = _time(py_fn, call_args, args.repeats)
        line = f"{name:<{width}} {t_py * 1e3:>8.2f}ms"
        if _compiled is not None:
            c_fn = getattr(_compiled, attr)
            t_c = _time(c_fn, call_args, args.repeats)
            same = _bit_equal(py_fn(*call_args), c_fn(*call_args))
            mismatches += 0 if same else 1
            line += (
                f" {t_c * 1e3:>8.2f}ms {t_py / t_c:>7.1f}x"
                f" {'ok' if same else 'DIFFER':>8}"
            )
        print(line)
    if mismatches:
        print(f"ERROR: {mismatches} kernel(s) differ between backends")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
