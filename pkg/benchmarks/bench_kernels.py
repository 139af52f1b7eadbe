"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case runs on identical inputs for every importable backend; results
are also checked for equality so a speed-up never hides a wrong answer.
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from locustbreed._kernels import available_backends


def cases(rng):
    payload = rng.integers(0, 256, 4 << 20, dtype=np.uint8).tobytes()
    x2 = np.ascontiguousarray(rng.normal(size=(4, 32, 38, 38)))
    x3 = np.ascontiguousarray(rng.normal(size=(2, 8, 32, 13, 13)))
    pres = rng.uniform(-10, 10, size=(2, 2000))
    cand = rng.uniform(-10, 10, size=(2, 4096))
    out = {
        "fnv1a64 4 MiB": lambda k: k.fnv1a64(payload),
        "im2col 4x32x38x38 k3": lambda k: k.im2col(x2, (3, 3), (1, 1)),
        "im2col 2x8x32x13x13 k(3,7,7)": lambda k: k.im2col(x3, (3, 7, 7), (1, 1, 1)),
        "buffer_clear 4096 x 2000": lambda k: k.buffer_clear(cand[0], cand[1], pres[0], pres[1], 5.0),
    }
    cols2 = available_backends()["python"].im2col(x2, (3, 3), (1, 1))
    out["col2im 4x32x38x38 k3"] = lambda k: k.col2im(cols2, x2.shape, (3, 3), (1, 1))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    backends = available_backends()
    rng = np.random.default_rng(0)
    rows = []
    for name, fn in cases(rng).items():
        results = {b: fn(k) for b, k in backends.items()}
        ref = results["python"]
        same = all(np.array_equal(np.asarray(r), np.asarray(ref)) for r in results.values())
        times = {b: min(timeit.repeat(lambda k=k: fn(k), number=1, repeat=args.repeat)) for b, k in backends.items()}
        rows.append({"case": name, "seconds": times, "identical": same})
        speed = f"{times['python'] / times['cython']:8.1f}x" if "cython" in times else "   n/a"
        cells = "  ".join(f"{b} {t * 1e3:9.2f} ms" for b, t in times.items())
        print(f"{name:<32} {cells}  speed-up {speed}  identical={same}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
