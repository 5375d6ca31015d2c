"""Time the compiled and numpy stencil kernels and check that they agree.

Usage: python3 benchmarks/bench_kernels.py [--n 32] [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from pdeflow import kernels
from pdeflow.grid import DomainMask, Grid3


def _problem(n: int, seed: int):
    rng = np.random.default_rng(seed)
    grid = Grid3((n, n, n), (1.0, 1.2, 1.3))
    mask = DomainMask.from_inside(grid)
    c = rng.random(grid.dims)
    v = 0.5 * rng.standard_normal((3,) + grid.dims)
    d = 0.05 * rng.random(grid.dims)
    kbar = rng.standard_normal(grid.dims)
    return grid, mask, c, v, d, kbar


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=32, help="grid size per axis")
    ap.add_argument("--repeat", type=int, default=20, help="timed calls per kernel")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    grid, mask, c, v, d, kbar = _problem(args.n, args.seed)
    names = ["python"]
    try:
        kernels.get_backend("cython")
        names.insert(0, "cython")
    except ImportError:
        print("compiled kernels not built; timing the numpy fallback only")

    results = {}
    for name in names:
        mod = kernels.get_backend(name)
        inside = np.ascontiguousarray(mask.inside, dtype=np.uint8)
        active = np.ascontiguousarray(mask.active, dtype=np.uint8)
        nb = mod.face_bits(inside)
        h = grid.spacing

        def f_rhs():
            return mod.rhs(c, v, d, inside, active, h, False, True, True, None, nb)

        def f_vjp():
            bars = (np.zeros(grid.dims), np.zeros((3,) + grid.dims), np.zeros(grid.dims))
            mod.rhs_vjp(c, v, d, inside, active, h, False, True, True, kbar, *bars, nb)
            return bars

        results[name] = (f_rhs(), f_vjp())
        t_rhs = min(timeit.repeat(f_rhs, number=1, repeat=args.repeat))
        t_vjp = min(timeit.repeat(f_vjp, number=1, repeat=args.repeat))
        print(f"{name:>7}  rhs {1e3 * t_rhs:8.3f} ms   rhs_vjp {1e3 * t_vjp:8.3f} ms   ({args.n}^3 voxels)")

    if len(results) == 2:
        a, b = results["cython"], results["python"]
        err = max(np.max(np.abs(a[0] - b[0])), *(np.max(np.abs(x - y)) for x, y in zip(a[1], b[1])))
        print(f"max abs difference between backends: {err:.3e}")


if __name__ == "__main__":
    main()
