"""Manufactured-solution runs, error norms and convergence studies.

A manufactured solution bundles a smooth space-time field with its
derivatives; ``source`` returns the forcing that makes it solve the flow
equation with fidelity target ``g = 0``.  ``error_E1`` and ``error_E2``
are the relative trajectory errors used by the convergence study:

    E1 = max_m ||pi u^m - exact(t_m)||_L2 / max_m ||exact(t_m)||_L2
    E2 = sqrt(sum_m dt ||grad u^m - grad exact(t_m)||_L1^2) / (same for
         the exact gradient)

both sampled at the right endpoint of every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import assembly, kernels
from .discretisation import P1Discretisation
from .mesh import generate_structured
from .solver import NewtonConfig, ProblemData, SchemeParams, run_time_loop, uniform_grid

__all__ = [
    "ManufacturedSolution",
    "cosine_solution",
    "run_manufactured",
    "error_E1",
    "error_E2",
    "observed_orders",
    "consistency_residual",
    "ConvergenceRow",
    "convergence_study",
]


@dataclass
class ManufacturedSolution:
    """Smooth exact solution with the derivatives the source term needs.

    ``value``, ``time_derivative`` map ``(x, y, t)`` to scalars;
    ``grad`` to ``(..., 2)`` and ``hessian`` to ``(..., 2, 2)``; all must
    broadcast over numpy arrays.
    """

    value: object
    grad: object
    time_derivative: object
    hessian: object
    eps: float
    lam: float

    def source(self, x, y, t):
        """Forcing that makes ``value`` solve the flow with g = 0:
        ``f = u_t - div flux(grad u) + lam u`` where
        ``div flux = lap u / s - (grad u . H grad u) / s^3``."""
        g = np.asarray(self.grad(x, y, t), dtype=np.float64)
        h = np.asarray(self.hessian(x, y, t), dtype=np.float64)
        s = np.sqrt(self.eps**2 + np.sum(g * g, axis=-1))
        lap = h[..., 0, 0] + h[..., 1, 1]
        ghg = np.sum(g * np.einsum("...ij,...j->...i", h, g), axis=-1)
        div_flux = lap / s - ghg / s**3
        return self.time_derivative(x, y, t) - div_flux + self.lam * self.value(x, y, t)


def cosine_solution(eps: float = 2e-5, lam: float = 1.0) -> ManufacturedSolution:
    """``cos(t) cos(pi x) cos(pi y)`` on the unit square (zero Neumann
    traces on the boundary)."""
    pi = np.pi

    def value(x, y, t):
        return np.cos(t) * np.cos(pi * x) * np.cos(pi * y)

    def grad(x, y, t):
        c = np.cos(t)
        return np.stack(
            [
                -pi * c * np.sin(pi * x) * np.cos(pi * y),
                -pi * c * np.cos(pi * x) * np.sin(pi * y),
            ],
            axis=-1,
        )

    def time_derivative(x, y, t):
        return -np.sin(t) * np.cos(pi * x) * np.cos(pi * y)

    def hessian(x, y, t):
        c = np.cos(t)
        diag = -pi * pi * c * np.cos(pi * x) * np.cos(pi * y)
        off = pi * pi * c * np.sin(pi * x) * np.sin(pi * y)
        row0 = np.stack([diag, off], axis=-1)
        row1 = np.stack([off, diag], axis=-1)
        return np.stack([row0, row1], axis=-2)

    return ManufacturedSolution(
        value=value,
        grad=grad,
        time_derivative=time_derivative,
        hessian=hessian,
        eps=eps,
        lam=lam,
    )


def run_manufactured(disc, ms: ManufacturedSolution, time_grid, cfg=None,
                     initial: str = "project"):
    """Solve the forced flow whose exact solution is ``ms``."""
    params = SchemeParams(
        eps=ms.eps, lam=ms.lam, time_grid=np.asarray(time_grid), initial=initial
    )
    data = ProblemData(g=None, source=ms.source)
    start = (
        lambda x, y: ms.value(x, y, 0.0),
        lambda x, y: ms.grad(x, y, 0.0),
    )
    return run_time_loop(disc, start, params, data, cfg)


def error_E1(disc, traj, ms: ManufacturedSolution, time_grid, rule=None) -> float:
    """Relative max-in-time L2 error of the reconstructed trajectory."""
    if rule is None:
        rule = assembly.triangle_rule(4)
    grid = np.asarray(time_grid)
    pts, w = disc.quad_geometry(rule)
    x, y = pts[..., 0], pts[..., 1]
    num = 0.0
    den = 0.0
    for m in range(1, grid.size):
        exact = ms.value(x, y, grid[m])
        diff = disc.pi_quad(traj[m], rule) - exact
        num = max(num, float(np.sqrt(np.sum(w * diff * diff))))
        den = max(den, float(np.sqrt(np.sum(w * exact * exact))))
    if den == 0.0:
        raise ZeroDivisionError("exact solution vanishes along the whole grid")
    return num / den


def error_E2(disc, traj, ms: ManufacturedSolution, time_grid,
             denominator: str = "gradient", rule=None) -> float:
    """Relative L2-in-time, L1-in-space gradient error.

    ``denominator="gradient"`` scales by the exact gradient (the natural
    pairing for the numerator); ``"literal"`` scales by the exact
    function values instead.
    """
    if denominator not in ("gradient", "literal"):
        raise ValueError("denominator must be 'gradient' or 'literal'")
    if rule is None:
        rule = assembly.triangle_rule(4)
    grid = np.asarray(time_grid)
    pts, w = disc.quad_geometry(rule)
    x, y = pts[..., 0], pts[..., 1]
    num2 = 0.0
    den2 = 0.0
    for m in range(1, grid.size):
        dt = float(grid[m] - grid[m - 1])
        gexact = np.asarray(ms.grad(x, y, grid[m]), dtype=np.float64)
        dg = disc.cell_gradients(traj[m])[:, None, :] - gexact
        err = float(np.sum(w * np.sqrt(np.sum(dg * dg, axis=-1))))
        num2 += dt * err * err
        if denominator == "gradient":
            ref = float(np.sum(w * np.sqrt(np.sum(gexact * gexact, axis=-1))))
        else:
            ref = float(np.sum(w * np.abs(ms.value(x, y, grid[m]))))
        den2 += dt * ref * ref
    if den2 == 0.0:
        raise ZeroDivisionError("reference norm vanishes along the whole grid")
    return float(np.sqrt(num2) / np.sqrt(den2))


def observed_orders(errors, hs) -> np.ndarray:
    """Pairwise convergence orders ``ln(e_i/e_{i+1}) / ln(h_i/h_{i+1})``."""
    e = np.asarray(errors, dtype=np.float64)
    h = np.asarray(hs, dtype=np.float64)
    if e.shape != h.shape or e.ndim != 1 or e.size < 2:
        raise ValueError("need matching 1-d arrays with at least two entries")
    if np.any(e <= 0.0) or np.any(h <= 0.0):
        raise ValueError("errors and mesh sizes must be positive")
    return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])


def consistency_residual(disc, u_prev, u_cur, dt, v, eps, lam, data=None) -> float:
    """Step equation tested against ``v`` at a given pair of dof vectors.

    Plugging projected samples of a smooth solution into this functional
    measures how far the scheme is from reproducing it; for a solution of
    the continuous equation it decays under refinement.  ``data`` is an
    ``assembly.StepData`` holding the loads at the step endpoint.
    """
    mesh = disc.mesh
    u_prev = np.asarray(u_prev, dtype=np.float64)
    u_cur = np.asarray(u_cur, dtype=np.float64)
    r = disc.mass @ ((u_cur - u_prev) / dt + lam * u_cur)
    r += kernels.diffusion_residual(u_cur, mesh.triangles, disc.grads, mesh.areas, eps)
    if data is not None:
        r -= data.vector(lam, disc.num_dofs)
    return float(r @ np.asarray(v, dtype=np.float64))


@dataclass
class ConvergenceRow:
    n: int
    h: float
    dt: float
    num_steps: int
    e1: float
    e2: float
    newton_total: int
    newton_max: int
    wall_time: float


def convergence_study(ms: ManufacturedSolution, ns, T: float, dt_for, cfg=None,
                      initial: str = "project", keep_reports: bool = False):
    """Run the manufactured problem over a mesh sweep.

    ``dt_for`` maps the subdivision count ``n`` to a target step size;
    the actual grid rounds to a whole number of steps ending at ``T``.
    Returns ``(rows, reports)``; ``reports`` is empty unless requested.
    """
    rows = []
    reports = []
    for n in ns:
        mesh = generate_structured(n)
        disc = P1Discretisation(mesh)
        grid = uniform_grid(T, dt_for(n))
        traj, report = run_manufactured(disc, ms, grid, cfg, initial)
        rows.append(
            ConvergenceRow(
                n=int(n),
                h=mesh.h_mesh,
                dt=float(grid[1] - grid[0]),
                num_steps=grid.size - 1,
                e1=error_E1(disc, traj, ms, grid),
                e2=error_E2(disc, traj, ms, grid),
                newton_total=int(report.newton_iterations.sum()),
                newton_max=int(report.newton_iterations.max()),
                wall_time=report.wall_time,
            )
        )
        if keep_reports:
            reports.append(report)
    return rows, reports
