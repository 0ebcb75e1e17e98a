"""Pure-numpy implementations of the per-cell assembly kernels.

All kernels take raw arrays: ``values`` are vertex dof values, ``tris`` is
the (nc, 3) connectivity, ``grads`` the (nc, 3, 2) basis gradients and
``areas`` the (nc,) cell areas.  Reductions use a fixed cell order, so
results are bit-identical across runs on the same machine.
"""

import numpy as np


def cell_gradients(values, tris, grads):
    """Piecewise-constant gradient of the P1 field, one row per cell."""
    return np.einsum("cid,ci->cd", grads, values[tris])


def diffusion_residual(values, tris, grads, areas, eps):
    """Vertex vector of ``sum_cells area * flux(grad) . basis_grad``."""
    g = cell_gradients(values, tris, grads)
    s = np.sqrt(eps * eps + g[:, 0] ** 2 + g[:, 1] ** 2)
    w = (areas / s)[:, None] * g
    contrib = np.einsum("cid,cd->ci", grads, w)
    out = np.zeros(values.shape[0])
    np.add.at(out, tris, contrib)
    return out


def diffusion_blocks(values, tris, grads, areas, eps):
    """Per-cell 3x3 blocks ``area * B^T J_flux(grad) B`` for the Jacobian."""
    g = cell_gradients(values, tris, grads)
    s2 = eps * eps + g[:, 0] ** 2 + g[:, 1] ** 2
    s3 = s2 * np.sqrt(s2)
    jf = (s2[:, None, None] * np.eye(2) - g[:, :, None] * g[:, None, :]) / s3[:, None, None]
    return areas[:, None, None] * np.einsum("cid,cde,cje->cij", grads, jf, grads)


def tv_energy(values, tris, grads, areas, eps):
    """``sum_cells area * sqrt(eps^2 + |grad|^2)``."""
    g = cell_gradients(values, tris, grads)
    return float(np.sum(areas * np.sqrt(eps * eps + g[:, 0] ** 2 + g[:, 1] ** 2)))


def grad_l1_norm(values, tris, grads, areas):
    """L1 norm of the piecewise-constant gradient field."""
    g = cell_gradients(values, tris, grads)
    return float(np.sum(areas * np.sqrt(g[:, 0] ** 2 + g[:, 1] ** 2)))
