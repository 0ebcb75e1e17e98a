"""Nonlinear projection of a smooth function onto the discrete space.

``project`` minimizes

    F(v) = integral sqrt(eps^2 + |grad v|^2) - integral flux(grad u) . grad v

which matches the discrete flux to the flux of the target ``u``.  F is
convex and invariant under adding constants, so the minimizer is pinned
by anchoring ``mean(pi v)`` to a prescribed value (the mean of ``u``).
Newton directions come from the bordered sparse system

    [H  w] [d ]   [-r]
    [w^T 0] [mu] = [ 0]

where ``H`` is the positive semidefinite Hessian of F and ``w_i`` the
integral of basis function i; at the constrained optimum the multiplier
vanishes, so the plain gradient of F is the convergence measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import assembly, kernels
from .discretisation import DiscreteField
from .solver import LinearSolveError, NewtonConfig, NonconvergenceError

__all__ = [
    "ProjectionProblem",
    "ProjectionStats",
    "ProjectionDiagnostics",
    "project",
    "projection_diagnostics",
]


@dataclass
class ProjectionProblem:
    """Target data for the projection.

    ``grad`` is the target gradient callable ``(x, y) -> (..., 2)``;
    ``func`` (optional) is the target itself, used for the initial guess
    and for function-error diagnostics; ``mean_value`` anchors the
    additive constant.
    """

    disc: object
    grad: object
    eps: float
    mean_value: float = 0.0
    func: object = None
    quad_degree: int = 4

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        self.rule = assembly.triangle_rule(self.quad_degree)


@dataclass
class ProjectionStats:
    iterations: int
    residual_norms: np.ndarray


@dataclass
class ProjectionDiagnostics:
    grad_error_l2: float
    grad_error_l1: float
    func_error_l2: float
    max_cell_gradient: float


def _target_load(problem) -> np.ndarray:
    """Vector of ``integral flux(grad u) . grad basis_i``."""
    disc = problem.disc
    pts, w = disc.quad_geometry(problem.rule)
    fl = assembly.flux(problem.grad(pts[..., 0], pts[..., 1]), problem.eps)
    cvec = np.einsum("cq,cqd->cd", w, fl)
    contrib = np.einsum("cid,cd->ci", disc.grads, cvec)
    out = np.zeros(disc.num_dofs)
    np.add.at(out, disc.mesh.triangles, contrib)
    return out


def _anchor(disc, values, wvec, omega, mean_value):
    return values + (mean_value - (wvec @ values) / omega)


def project(problem: ProjectionProblem, cfg: NewtonConfig | None = None):
    """Compute the projection; returns ``(DiscreteField, ProjectionStats)``.

    Convergence is measured on the max-norm of the full Euler-Lagrange
    residual.  Raises ``NonconvergenceError`` when Newton stalls.
    """
    if cfg is None:
        cfg = NewtonConfig()
    disc = problem.disc
    mesh = disc.mesh
    eps = problem.eps
    n = disc.num_dofs

    ell = _target_load(problem)
    wvec = disc.mass @ np.ones(n)
    omega = float(np.sum(mesh.areas))

    if problem.func is not None:
        u = disc.nodal_values(problem.func)
    else:
        u = np.zeros(n)
    u = _anchor(disc, u, wvec, omega, problem.mean_value)

    def objective(v):
        return kernels.tv_energy(v, mesh.triangles, disc.grads, mesh.areas, eps) - ell @ v

    def residual(v):
        return (
            kernels.diffusion_residual(v, mesh.triangles, disc.grads, mesh.areas, eps)
            - ell
        )

    r = residual(u)
    rnorm = float(np.linalg.norm(r, ord=np.inf))
    history = [rnorm]
    tol = max(cfg.abs_tol, cfg.rel_tol * rnorm)
    value = objective(u)
    w_col = sparse.csc_array(wvec[:, None])

    iters = 0
    while rnorm > tol:
        if iters >= cfg.max_iters:
            raise NonconvergenceError(
                f"projection Newton did not reach tolerance {tol:.3e} "
                f"in {cfg.max_iters} iterations (residual {rnorm:.3e})",
                values=u,
                residual_norms=np.array(history),
            )
        blocks = kernels.diffusion_blocks(u, mesh.triangles, disc.grads, mesh.areas, eps)
        hess = sparse.coo_array(
            (blocks.ravel(), (disc.scatter_rows, disc.scatter_cols)), shape=(n, n)
        ).tocsr()
        bordered = sparse.bmat([[hess, w_col], [w_col.T, None]], format="csc")
        rhs = np.concatenate([-r, [0.0]])
        try:
            direction = splu(bordered).solve(rhs)[:n]
        except RuntimeError as exc:
            raise LinearSolveError(f"bordered factorization failed: {exc}") from exc

        t = 1.0
        accepted = False
        slack = 1e-13 * (1.0 + abs(value))
        while t >= cfg.min_step:
            trial = u + t * direction
            v_trial = objective(trial)
            if v_trial < value:
                r_trial = residual(trial)
                accepted = True
                break
            if v_trial <= value + slack:
                r_trial = residual(trial)
                if np.linalg.norm(r_trial, ord=np.inf) <= 0.5 * rnorm:
                    accepted = True
                    break
            t *= cfg.backtrack
        if not accepted:
            raise NonconvergenceError(
                "projection line search failed below minimum step length",
                values=u,
                residual_norms=np.array(history),
            )
        u = _anchor(disc, trial, wvec, omega, problem.mean_value)
        value = v_trial
        r = r_trial
        rnorm = float(np.linalg.norm(r, ord=np.inf))
        history.append(rnorm)
        iters += 1

    return DiscreteField(disc, u), ProjectionStats(
        iterations=iters, residual_norms=np.array(history)
    )


def projection_diagnostics(problem: ProjectionProblem, values) -> ProjectionDiagnostics:
    """Gradient and function errors of ``values`` against the target."""
    disc = problem.disc
    values = np.asarray(values, dtype=np.float64)
    pts, w = disc.quad_geometry(problem.rule)
    gp = np.asarray(problem.grad(pts[..., 0], pts[..., 1]), dtype=np.float64)
    g = disc.cell_gradients(values)
    dg = g[:, None, :] - gp
    dg_norm = np.sqrt(np.sum(dg * dg, axis=-1))
    grad_error_l2 = float(np.sqrt(np.sum(w * dg_norm**2)))
    grad_error_l1 = float(np.sum(w * dg_norm))
    if problem.func is not None:
        df = disc.pi_quad(values, problem.rule) - problem.func(pts[..., 0], pts[..., 1])
        func_error_l2 = float(np.sqrt(np.sum(w * df * df)))
    else:
        func_error_l2 = float("nan")
    max_cell_gradient = float(np.max(np.linalg.norm(g, axis=1)))
    return ProjectionDiagnostics(
        grad_error_l2=grad_error_l2,
        grad_error_l1=grad_error_l1,
        func_error_l2=func_error_l2,
        max_cell_gradient=max_cell_gradient,
    )
