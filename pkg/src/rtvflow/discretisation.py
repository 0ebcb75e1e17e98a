"""Discrete function spaces built from two reconstruction operators.

A discretisation pairs a dof vector space with a function reconstruction
``pi`` and a piecewise-constant gradient reconstruction on a triangle
mesh.  The solver, projection and analysis layers only touch this
interface, so non-conforming instances can be added without changing
them.  ``P1Discretisation`` is the conforming instance: dofs are vertex
values, ``pi`` is the continuous piecewise-linear interpolant and the
gradient is its (cellwise constant) gradient.

The discrete norm combines both reconstructions:
``norm(v) = ||pi v||_L2 + ||grad v||_L1``.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from . import assembly, kernels
from .mesh import TriMesh

__all__ = [
    "Discretisation",
    "P1Discretisation",
    "DiscreteField",
    "consistency_defect",
    "conformity_defect",
]


class Discretisation(abc.ABC):
    """Reconstruction-operator interface over a triangle mesh."""

    @property
    @abc.abstractmethod
    def mesh(self) -> TriMesh: ...

    @property
    @abc.abstractmethod
    def num_dofs(self) -> int: ...

    @abc.abstractmethod
    def pi_eval(self, values, cells, bary):
        """Reconstructed function at barycentric points of given cells."""

    @abc.abstractmethod
    def grad_eval(self, values, cells):
        """Reconstructed (constant) gradient on the given cells, (k, 2)."""

    @abc.abstractmethod
    def cell_gradients(self, values):
        """Gradient on every cell, (num_triangles, 2)."""

    @abc.abstractmethod
    def pi_quad(self, values, rule):
        """Reconstructed function at all quadrature points, (nc, nq)."""

    @abc.abstractmethod
    def quad_geometry(self, rule):
        """Physical quadrature points (nc, nq, 2) and weights (nc, nq)."""

    @property
    @abc.abstractmethod
    def mass(self):
        """Gram matrix of the function reconstruction (sparse)."""

    def l2_norm(self, values) -> float:
        v = np.asarray(values, dtype=np.float64)
        return float(np.sqrt(abs(v @ (self.mass @ v))))

    def grad_l1_norm(self, values) -> float:
        mesh = self.mesh
        g = self.cell_gradients(values)
        return float(np.sum(mesh.areas * np.linalg.norm(g, axis=1)))

    def discrete_norm(self, values) -> float:
        """``||pi v||_L2 + ||grad v||_L1``; vanishes only at v = 0."""
        return self.l2_norm(values) + self.grad_l1_norm(values)


class P1Discretisation(Discretisation):
    """Conforming P1 instance: one dof per mesh vertex."""

    def __init__(self, mesh: TriMesh):
        self._mesh = mesh
        tris = mesh.triangles
        p = mesh.vertices[tris]
        inv2a = 1.0 / (2.0 * mesh.areas)
        grads = np.empty((mesh.num_triangles, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            grads[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) * inv2a
            grads[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) * inv2a
        grads.setflags(write=False)
        self.grads = grads
        # fixed scatter pattern for 3x3 cell blocks, row-major
        self.scatter_rows = np.repeat(tris, 3, axis=1).ravel()
        self.scatter_cols = np.tile(tris, (1, 3)).ravel()
        self._mass = None
        self._quad_cache = {}

    @property
    def mesh(self) -> TriMesh:
        return self._mesh

    @property
    def num_dofs(self) -> int:
        return self._mesh.num_vertices

    @property
    def mass(self):
        if self._mass is None:
            self._mass = assembly.assemble_mass(self)
        return self._mass

    def pi_eval(self, values, cells, bary):
        values = np.asarray(values, dtype=np.float64)
        bary = np.atleast_2d(np.asarray(bary, dtype=np.float64))
        cells = np.atleast_1d(cells)
        return np.einsum("ki,ki->k", bary, values[self._mesh.triangles[cells]])

    def grad_eval(self, values, cells):
        values = np.asarray(values, dtype=np.float64)
        cells = np.atleast_1d(cells)
        return np.einsum(
            "kid,ki->kd", self.grads[cells], values[self._mesh.triangles[cells]]
        )

    def cell_gradients(self, values):
        mesh = self._mesh
        return kernels.cell_gradients(
            np.asarray(values, dtype=np.float64), mesh.triangles, self.grads
        )

    def pi_quad(self, values, rule):
        values = np.asarray(values, dtype=np.float64)
        return values[self._mesh.triangles] @ rule.points.T

    def quad_geometry(self, rule):
        key = rule.degree
        if key not in self._quad_cache:
            mesh = self._mesh
            corners = mesh.vertices[mesh.triangles]  # (nc, 3, 2)
            pts = np.einsum("qi,cid->cqd", rule.points, corners)
            w = mesh.areas[:, None] * rule.weights[None, :]
            self._quad_cache[key] = (pts, w)
        return self._quad_cache[key]

    def grad_l1_norm(self, values) -> float:
        mesh = self._mesh
        return kernels.grad_l1_norm(
            np.asarray(values, dtype=np.float64), mesh.triangles, self.grads, mesh.areas
        )

    def nodal_values(self, func) -> np.ndarray:
        """Dof vector of the vertex interpolant of ``func(x, y)``."""
        v = self._mesh.vertices
        return np.asarray(func(v[:, 0], v[:, 1]), dtype=np.float64)


@dataclass
class DiscreteField:
    """A dof vector tied to its discretisation."""

    disc: Discretisation
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.disc.num_dofs,):
            raise ValueError(
                f"expected {self.disc.num_dofs} dof values, got shape {self.values.shape}"
            )

    def l2_norm(self) -> float:
        return self.disc.l2_norm(self.values)

    def grad_l1_norm(self) -> float:
        return self.disc.grad_l1_norm(self.values)

    def discrete_norm(self) -> float:
        return self.disc.discrete_norm(self.values)

    def cell_gradients(self) -> np.ndarray:
        return self.disc.cell_gradients(self.values)


def consistency_defect(disc, phi, grad_phi, values, alpha=None, rule=None) -> float:
    """How far the reconstructions of ``values`` sit from a smooth target.

    Returns ``||pi v - phi||_L2 / alpha + ||grad v - grad phi||_L2`` with
    quadrature norms; ``alpha`` defaults to the mesh size.
    """
    if rule is None:
        rule = assembly.triangle_rule(4)
    if alpha is None:
        alpha = disc.mesh.h_mesh
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    pts, w = disc.quad_geometry(rule)
    df = disc.pi_quad(values, rule) - phi(pts[..., 0], pts[..., 1])
    part_f = np.sqrt(np.sum(w * df * df))
    gp = np.asarray(grad_phi(pts[..., 0], pts[..., 1]), dtype=np.float64)
    dg = disc.cell_gradients(values)[:, None, :] - gp
    part_g = np.sqrt(np.sum(w * np.sum(dg * dg, axis=-1)))
    return float(part_f / alpha + part_g)


def conformity_defect(disc, psi, div_psi, values, rule=None) -> float:
    """Discrete integration-by-parts defect against a smooth vector field.

    Returns ``integral grad v . psi + integral (pi v) div psi``; zero (up
    to quadrature error) for conforming reconstructions when ``psi . n``
    vanishes on the boundary.
    """
    if rule is None:
        rule = assembly.triangle_rule(4)
    pts, w = disc.quad_geometry(rule)
    x, y = pts[..., 0], pts[..., 1]
    psi_vals = np.asarray(psi(x, y), dtype=np.float64)
    g = disc.cell_gradients(values)
    term_grad = np.sum(w * np.einsum("cd,cqd->cq", g, psi_vals))
    term_div = np.sum(w * disc.pi_quad(values, rule) * div_psi(x, y))
    return float(term_grad + term_div)
