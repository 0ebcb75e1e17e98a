"""Quadrature, flux functions and matrix/vector assembly for the scheme.

The implicit step for ``dt u = div(grad u / sqrt(eps^2 + |grad u|^2))
- lam (u - g) + f`` is, in weak form with P1 fields,

    M (u - u_prev) + lam dt M u + dt D(u) = dt (lam L_g + L_f)

where ``M`` is the P1 mass matrix, ``D`` the nonlinear diffusion vector
assembled by the kernels, and ``L_g``, ``L_f`` quadrature load vectors of
the fidelity target and the source.  ``assemble_step_residual`` returns
the left side minus the right side; its derivative in ``u`` is
``assemble_step_jacobian``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import kernels

__all__ = [
    "QuadratureRule",
    "triangle_rule",
    "flux",
    "flux_jacobian",
    "StepData",
    "assemble_mass",
    "assemble_load",
    "assemble_step_residual",
    "assemble_step_jacobian",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Symmetric triangle quadrature in barycentric coordinates.

    ``points`` has shape (nq, 3) and ``weights`` (nq,); weights sum to 1,
    so an integral over a cell is ``area * sum_q w_q f(x_q)``.
    """

    degree: int
    points: np.ndarray
    weights: np.ndarray


def _orbit3(a):
    return [(1.0 - 2.0 * a, a, a), (a, 1.0 - 2.0 * a, a), (a, a, 1.0 - 2.0 * a)]


def _make_rule(degree, points, weights):
    points = np.array(points, dtype=np.float64)
    weights = np.array(weights, dtype=np.float64)
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(degree=degree, points=points, weights=weights)


_A1 = 0.445948490915965
_A2 = 0.091576213509771
_W1 = 0.223381589678011
_W2 = 0.109951743655322

_RULES = {
    1: _make_rule(1, [(1 / 3, 1 / 3, 1 / 3)], [1.0]),
    2: _make_rule(2, _orbit3(0.5), [1 / 3] * 3),
    4: _make_rule(4, _orbit3(_A1) + _orbit3(_A2), [_W1] * 3 + [_W2] * 3),
}


def triangle_rule(degree: int = 4) -> QuadratureRule:
    """Return a rule exact for polynomials up to ``degree`` (1, 2 or 4)."""
    try:
        return _RULES[degree]
    except KeyError:
        raise ValueError(
            f"no rule of degree {degree}; available: {sorted(_RULES)}"
        ) from None


def flux(mu, eps):
    """Regularized unit-gradient flux ``mu / sqrt(eps^2 + |mu|^2)``.

    ``mu`` may carry any leading shape with vectors on the last axis.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    mu = np.asarray(mu, dtype=np.float64)
    s = np.sqrt(eps * eps + np.sum(mu * mu, axis=-1, keepdims=True))
    return mu / s


def flux_jacobian(mu, eps):
    """Derivative of ``flux`` at ``mu``: ``(s^2 I - mu mu^T) / s^3``.

    Symmetric positive definite with eigenvalues between ``eps^2/s^3`` and
    ``1/s``; equals ``I/eps`` at ``mu = 0``.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    mu = np.asarray(mu, dtype=np.float64)
    s2 = eps * eps + np.sum(mu * mu, axis=-1)
    s3 = s2 * np.sqrt(s2)
    outer = mu[..., :, None] * mu[..., None, :]
    return (s2[..., None, None] * np.eye(2) - outer) / s3[..., None, None]


_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def assemble_mass(disc) -> sparse.csr_array:
    """Exact P1 mass matrix (local block ``area/12 * [[2,1,1],[1,2,1],[1,1,2]]``)."""
    mesh = disc.mesh
    data = mesh.areas[:, None, None] * _LOCAL_MASS
    coo = sparse.coo_array(
        (data.ravel(), (disc.scatter_rows, disc.scatter_cols)),
        shape=(disc.num_dofs, disc.num_dofs),
    )
    return coo.tocsr()


def assemble_load(disc, func, rule: QuadratureRule | None = None) -> np.ndarray:
    """Load vector ``L_i = integral f * basis_i`` by cellwise quadrature.

    ``func`` must accept numpy arrays ``(x, y)`` and broadcast.
    """
    if rule is None:
        rule = triangle_rule(4)
    pts, w = disc.quad_geometry(rule)
    vals = w * func(pts[..., 0], pts[..., 1])
    contrib = vals @ rule.points  # (nc, 3)
    out = np.zeros(disc.num_dofs)
    np.add.at(out, disc.mesh.triangles, contrib)
    return out


@dataclass
class StepData:
    """Per-step data loads: fidelity target ``g`` and source ``f(., t)``."""

    g_load: np.ndarray | None = None
    source_load: np.ndarray | None = None

    def vector(self, lam: float, n: int) -> np.ndarray:
        out = np.zeros(n)
        if self.g_load is not None:
            out += lam * self.g_load
        if self.source_load is not None:
            out += self.source_load
        return out


def assemble_step_residual(disc, u, u_prev, dt, eps, lam, data: StepData | None = None):
    """Residual of the implicit step equation at ``u`` (zero at the solution).

    This is also the gradient of the convex step energy, see
    ``solver.step_energy``.
    """
    mesh = disc.mesh
    m = disc.mass
    r = m @ ((1.0 + lam * dt) * u - u_prev)
    r += dt * kernels.diffusion_residual(u, mesh.triangles, disc.grads, mesh.areas, eps)
    if data is not None:
        r -= dt * data.vector(lam, disc.num_dofs)
    return r


def assemble_step_jacobian(disc, u, dt, eps, lam) -> sparse.csr_array:
    """Sparse SPD derivative of the step residual: ``(1+lam dt) M + dt A(u)``."""
    mesh = disc.mesh
    blocks = kernels.diffusion_blocks(u, mesh.triangles, disc.grads, mesh.areas, eps)
    a = sparse.coo_array(
        (blocks.ravel(), (disc.scatter_rows, disc.scatter_cols)),
        shape=(disc.num_dofs, disc.num_dofs),
    ).tocsr()
    return (1.0 + lam * dt) * disc.mass + dt * a
