"""Numba-compiled assembly kernels; same signatures as ``numpy_backend``.

Plain sequential cell loops, compiled with ``cache=True`` so the JIT cost
is paid once per machine.  No ``parallel=True``: the fixed iteration order
keeps reductions bit-identical across runs.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def cell_gradients(values, tris, grads):
    nc = tris.shape[0]
    out = np.empty((nc, 2))
    for c in range(nc):
        gx = 0.0
        gy = 0.0
        for i in range(3):
            v = values[tris[c, i]]
            gx += v * grads[c, i, 0]
            gy += v * grads[c, i, 1]
        out[c, 0] = gx
        out[c, 1] = gy
    return out


@numba.njit(cache=True)
def diffusion_residual(values, tris, grads, areas, eps):
    nc = tris.shape[0]
    out = np.zeros(values.shape[0])
    for c in range(nc):
        gx = 0.0
        gy = 0.0
        for i in range(3):
            v = values[tris[c, i]]
            gx += v * grads[c, i, 0]
            gy += v * grads[c, i, 1]
        scale = areas[c] / np.sqrt(eps * eps + gx * gx + gy * gy)
        fx = scale * gx
        fy = scale * gy
        for i in range(3):
            out[tris[c, i]] += fx * grads[c, i, 0] + fy * grads[c, i, 1]
    return out


@numba.njit(cache=True)
def diffusion_blocks(values, tris, grads, areas, eps):
    nc = tris.shape[0]
    out = np.empty((nc, 3, 3))
    for c in range(nc):
        gx = 0.0
        gy = 0.0
        for i in range(3):
            v = values[tris[c, i]]
            gx += v * grads[c, i, 0]
            gy += v * grads[c, i, 1]
        s2 = eps * eps + gx * gx + gy * gy
        s3 = s2 * np.sqrt(s2)
        # flux Jacobian (s^2 I - g g^T) / s^3
        j00 = (s2 - gx * gx) / s3
        j01 = (-gx * gy) / s3
        j11 = (s2 - gy * gy) / s3
        a = areas[c]
        for i in range(3):
            bix = grads[c, i, 0]
            biy = grads[c, i, 1]
            tx = bix * j00 + biy * j01
            ty = bix * j01 + biy * j11
            for j in range(3):
                out[c, i, j] = a * (tx * grads[c, j, 0] + ty * grads[c, j, 1])
    return out


@numba.njit(cache=True)
def tv_energy(values, tris, grads, areas, eps):
    nc = tris.shape[0]
    total = 0.0
    for c in range(nc):
        gx = 0.0
        gy = 0.0
        for i in range(3):
            v = values[tris[c, i]]
            gx += v * grads[c, i, 0]
            gy += v * grads[c, i, 1]
        total += areas[c] * np.sqrt(eps * eps + gx * gx + gy * gy)
    return total


@numba.njit(cache=True)
def grad_l1_norm(values, tris, grads, areas):
    nc = tris.shape[0]
    total = 0.0
    for c in range(nc):
        gx = 0.0
        gy = 0.0
        for i in range(3):
            v = values[tris[c, i]]
            gx += v * grads[c, i, 0]
            gy += v * grads[c, i, 1]
        total += areas[c] * np.sqrt(gx * gx + gy * gy)
    return total
