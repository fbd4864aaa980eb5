"""Compiled vs pure-Python kernels: timing and agreement.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from robustvio.kernels import _pykernels

try:
    from robustvio.kernels import _ckernels
except ImportError:
    _ckernels = None


def _inputs(seed=0):
    rng = np.random.default_rng(seed)
    n = 20  # one 10 Hz frame interval at 200 Hz
    dt = np.full(n, 0.005)
    gyro = rng.normal(scale=0.3, size=(n + 1, 3))
    accel = rng.normal(size=(n + 1, 3)) + [0.0, 0.0, 9.81]
    F = rng.normal(size=(3, 3))
    x1 = rng.uniform(0, 640, size=(300, 2))
    x2 = x1 + rng.normal(scale=2.0, size=x1.shape)
    return (dt, gyro, accel, 1e-3, 1e-2), (F, x1, x2)


def bench(mod, args, fn, repeat):
    f = getattr(mod, fn)
    number = 200
    best = min(timeit.repeat(lambda: f(*args), number=number, repeat=repeat))
    return best / number * 1e6


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    pre, samp = _inputs()
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'kernel':<20}" + "".join(f"{name:>14}" for name, _ in backends) + f"{'speedup':>10}")
    for fn, a in (("preintegrate", pre), ("sampson_distances", samp)):
        us = [bench(mod, a, fn, args.repeat) for _, mod in backends]
        speed = f"{us[0] / us[1]:9.1f}x" if len(us) > 1 else "       n/a"
        print(f"{fn:<20}" + "".join(f"{u:12.1f}us" for u in us) + speed)
    if _ckernels is not None:
        ref, got = _pykernels.preintegrate(*pre), _ckernels.preintegrate(*pre)
        err = max(float(np.max(np.abs(np.asarray(r) - np.asarray(g)))) for r, g in zip(ref, got))
        print(f"max |python - cython| preintegrate: {err:.2e}")
        err = float(np.max(np.abs(_pykernels.sampson_distances(*samp) - _ckernels.sampson_distances(*samp))))
        print(f"max |python - cython| sampson:      {err:.2e}")
    else:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`")


if __name__ == "__main__":
    main()
