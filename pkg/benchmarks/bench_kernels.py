"""Time the hot assembly kernels: numba backend vs the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--n N ...] [--repeats R]

Reports the best of R timed calls per kernel and mesh size, plus the
speedup of numba over numpy.  Mesh sizes are structured subdivisions,
so n = 256 means ~131k triangles.
"""

import argparse
import time

import numpy as np

from rtvflow import P1Discretisation, generate_structured
from rtvflow.kernels import numpy_backend

try:
    from rtvflow.kernels import numba_backend
except ImportError:
    numba_backend = None

EPS = 2e-5

KERNELS = [
    ("cell_gradients", lambda mod, a: mod.cell_gradients(*a[:3])),
    ("diffusion_residual", lambda mod, a: mod.diffusion_residual(*a)),
    ("diffusion_blocks", lambda mod, a: mod.diffusion_blocks(*a)),
    ("tv_energy", lambda mod, a: mod.tv_energy(*a)),
    ("grad_l1_norm", lambda mod, a: mod.grad_l1_norm(*a[:4])),
]


def best_time(call, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        call()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[64, 256])
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    header = f"{'kernel':20s} {'n':>5s} {'cells':>8s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for n in args.n:
        mesh = generate_structured(n)
        disc = P1Discretisation(mesh)
        values = rng.normal(size=disc.num_dofs)
        argtuple = (values, mesh.triangles, disc.grads, mesh.areas, EPS)
        for name, call in KERNELS:
            t_np = best_time(lambda: call(numpy_backend, argtuple), args.repeats)
            if numba_backend is not None:
                call(numba_backend, argtuple)  # JIT warm-up outside the clock
                t_nb = best_time(lambda: call(numba_backend, argtuple), args.repeats)
                ref = np.asarray(call(numpy_backend, argtuple))
                got = np.asarray(call(numba_backend, argtuple))
                np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-14)
                nb_col = f"{t_nb * 1e3:9.3f}ms"
                speed = f"{t_np / t_nb:7.1f}x"
            else:
                nb_col = f"{'absent':>10s}"
                speed = f"{'-':>8s}"
            print(
                f"{name:20s} {n:5d} {mesh.num_triangles:8d} "
                f"{t_np * 1e3:9.3f}ms {nb_col} {speed}"
            )


if __name__ == "__main__":
    main()
