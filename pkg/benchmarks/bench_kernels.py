"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]

Each kernel runs on inputs sized like the real pipeline (64x64 flow levels,
a 128-image batch at the first pooling layer). The first numba call is
excluded so compile time does not count; outputs of the two paths are
compared before timing.
"""

import argparse
import time

import numpy as np

from ongcmp import kernels as K
from ongcmp._jit import HAVE_NUMBA


def _flow_case(rng, n=64):
    ix, iy, it = (rng.standard_normal((n, n)) * 0.1 for _ in range(3))
    return ix, iy, it


def case_hs_solve(rng):
    ix, iy, it = _flow_case(rng)

    def run(fn):
        u = np.zeros_like(ix)
        v = np.zeros_like(ix)
        fn(u, v, ix, iy, it, 0.01, 30)
        return u, v

    return run


def case_bilinear(rng):
    img = rng.random((64, 64))
    gy, gx = np.mgrid[0:64, 0:64].astype(np.float64)
    xs = gx + rng.uniform(-3, 3, gx.shape)
    ys = gy + rng.uniform(-3, 3, gy.shape)
    return lambda fn: fn(img, xs, ys)


def case_maxpool(rng):
    x = rng.random((8, 128, 32, 32)).astype(np.float32)
    return lambda fn: fn(x)


def case_maxpool_back(rng):
    x = rng.random((8, 128, 32, 32)).astype(np.float32)
    _, arg = K.maxpool2_np(x)
    dout = rng.random(arg.shape).astype(np.float32)
    return lambda fn: fn(dout, arg, 32, 32)


CASES = {
    "hs_solve": case_hs_solve,
    "bilinear_sample": case_bilinear,
    "maxpool2": case_maxpool,
    "maxpool2_backward": case_maxpool_back,
}


def _best(run, fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        run(fn)
        times.append(time.perf_counter() - t0)
    return min(times)


def _flatten(out):
    if isinstance(out, tuple):
        return [np.asarray(o) for o in out]
    return [np.asarray(out)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path can run")
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speed-up':>10}  agree")
    for name, make in CASES.items():
        run = make(rng)
        f_np = getattr(K, f"{name}_np")
        f_nb = getattr(K, f"{name}_nb")
        t_np = _best(run, f_np, args.repeat)
        if HAVE_NUMBA:
            ref = _flatten(run(f_np))
            got = _flatten(run(f_nb))  # also compiles
            agree = all(np.allclose(a, b, rtol=1e-5, atol=1e-6) for a, b in zip(ref, got))
            t_nb = _best(run, f_nb, args.repeat)
        else:
            agree, t_nb = None, float("nan")
        rows.append((name, 1e3 * t_np, 1e3 * t_nb, t_np / t_nb, agree))
        print(f"{name:<20}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x  {agree}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("kernel,numpy_ms,numba_ms,speedup,agree\n")
            for r in rows:
                fh.write(f"{r[0]},{r[1]:.4f},{r[2]:.4f},{r[3]:.3f},{r[4]}\n")


if __name__ == "__main__":
    main()
