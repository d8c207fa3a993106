"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]
"""
import argparse
import time

import numpy as np

from energyshield import kernels
from energyshield.energy import Monotonic, Polynomial
from energyshield.fairness import FairnessTarget
from energyshield.shield import ShieldEngine


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def cases(quick: bool):
    scale = 4 if quick else 1
    mon = Monotonic(0.4, 0.65, (0.3, 0.7), (0.45, 0.55))
    code, prm = mon.kernel_spec()
    xs = np.linspace(0, 1, 2_000_000 // scale)

    rng = np.random.Generator(np.random.Philox(0))
    n, m = 2000 // scale, 2000
    x = (rng.random((n, m)) < 0.65).astype(np.int8)
    u = rng.random((n, m))
    g = (rng.random((n, m)) < 0.8).astype(np.int8)

    def single(engine):
        args = engine.kernel_args()
        return lambda mod: mod.run_single(*args, x, u, 0, np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64))

    signed = Polynomial(0.0, 0.5, 2, domain="signed")
    s_code, s_prm = signed.kernel_spec()
    T = 4000 // scale
    return {
        "zeta_array monotonic (2e6 points)": lambda mod: mod.zeta_array(code, prm, xs),
        f"dp_single T={T}": lambda mod: mod.dp_single(code, prm, mon.pivot, 0.65, 0.3, 0.7, 100, T, 3, False),
        f"run_single known {n}x{m}": single(ShieldEngine.known(mon)),
        f"run_single adaptive {n}x{m}": single(ShieldEngine.adaptive(Polynomial(0.5, 4, 2), 0.5)),
        f"run_single naive {n}x{m}": single(ShieldEngine.naive(FairnessTarget.make(100, (0.4, 0.6), 0.5))),
        f"run_two_group {n}x{m}": lambda mod: mod.run_two_group(s_code, s_prm, 0.0, g, x, u,
                                                               np.zeros((n, 4), dtype=np.int64)),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--quick", action="store_true", help="quarter-size inputs")
    args = parser.parse_args()
    cy, py = kernels.backend("cython"), kernels.backend("python")
    print(f"{'kernel':40s} {'cython s':>10s} {'python s':>10s} {'speedup':>8s}")
    for name, fn in cases(args.quick).items():
        t_cy = best_of(lambda: fn(cy), args.repeat)
        t_py = best_of(lambda: fn(py), args.repeat)
        print(f"{name:40s} {t_cy:10.4f} {t_py:10.4f} {t_py / t_cy:8.1f}x")


if __name__ == "__main__":
    main()
