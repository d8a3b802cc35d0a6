"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from depthvision import _pykernels

try:
    from depthvision import _ckernels
except ImportError:
    _ckernels = None


def rasterize_case(n=300_000, w=1600, h=900, seed=0):
    rng = np.random.default_rng(seed)
    cu = rng.integers(0, w, n).astype(np.int64)
    cv = rng.integers(0, h, n).astype(np.int64)
    depth = rng.uniform(1.0, 100.0, n)
    return (cu, cv, depth, w, h)


def nearest_case(size=256, density=0.05, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.random((size, size)) < density,)


CASES = {
    "rasterize_min 300k pts -> 1600x900": ("rasterize_min", rasterize_case()),
    "nearest_site 256x256, 5% valid": ("nearest_site", nearest_case()),
    "nearest_site 600x600, 2% valid": ("nearest_site", nearest_case(600, 0.02)),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    print(f"{'case':<38}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for label, (fn, case) in CASES.items():
        times = {}
        outs = {}
        for name, mod in backends.items():
            f = getattr(mod, fn)
            outs[name] = f(*case)
            times[name] = min(timeit.repeat(lambda: f(*case), number=1, repeat=args.repeat))
        for name, out in outs.items():
            assert all(np.array_equal(a, b) for a, b in zip(outs["python"], out)), \
                f"{name} disagrees with python on {label}"
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:<38}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
