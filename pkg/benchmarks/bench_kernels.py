"""Compare the compiled and NumPy kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeats 20]

Both backends are imported directly, so the result does not depend on
``TFDNET_BACKEND``. Each case reports the best wall time over the repeats
and the maximum absolute difference between the two outputs.
"""

import argparse
import time

import numpy as np

from tfdnet import _pykernels

try:
    from tfdnet import _ckernels
except ImportError:
    _ckernels = None


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _best(fn, repeats):
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _diff(a, b):
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(a - b)))


def cases(rng):
    # (label, kernel name, args)
    B, D, M, N = 32, 7, 9, 43          # L=336, S=16, l=8
    X = _complex(rng, (B, D, M, N))
    G = _complex(rng, (B, D, M, N))
    shared = _complex(rng, (1, M, N, N))
    per_channel = _complex(rng, (D, M, N, N))
    frames = rng.standard_normal((B * D, N, 16))
    return [
        ("bin_matvec shared    B=32 D=7 M=9 N=43", "bin_matvec", (shared, X)),
        ("bin_matvec per-chan  B=32 D=7 M=9 N=43", "bin_matvec", (per_channel, X)),
        ("bin_matvec_grad shared", "bin_matvec_grad", (shared, X, G)),
        ("bin_matvec_grad per-chan", "bin_matvec_grad", (per_channel, X, G)),
        ("overlap_add R=224 N=43 S=16 l=8", "overlap_add", (frames, 8, 42 * 8 + 16)),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'case':42s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s} {'max diff':>10s}")
    for label, name, fargs in cases(rng):
        py, cy = getattr(_pykernels, name), getattr(_ckernels, name)
        t_py = _best(lambda: py(*fargs), args.repeats)
        t_cy = _best(lambda: cy(*fargs), args.repeats)
        diff = _diff(py(*fargs), cy(*fargs))
        print(f"{label:42s} {t_py * 1e3:10.3f} {t_cy * 1e3:12.3f} {t_py / t_cy:8.2f} {diff:10.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
