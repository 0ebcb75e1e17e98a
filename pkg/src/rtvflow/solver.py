"""Implicit time stepping for the regularized total variation flow.

Each step solves the strictly convex minimization

    E(v) = (1 + lam dt)/2 ||pi v||^2 + dt * integral sqrt(eps^2 + |grad v|^2)
           - (M u_prev) . v - dt * (data loads) . v

whose gradient is the implicit step residual from ``assembly``.  A damped
Newton iteration with backtracking on E solves it; the Jacobian is sparse
SPD, factorized directly at desk scales and handed to CG above 1e5 dofs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import cg, splu

from . import assembly, kernels
from .assembly import StepData

__all__ = [
    "SchemeParams",
    "NewtonConfig",
    "ProblemData",
    "StepResult",
    "SolveReport",
    "NonconvergenceError",
    "LinearSolveError",
    "uniform_grid",
    "step_energy",
    "newton_solve_step",
    "run_time_loop",
]

_DIRECT_SOLVE_LIMIT = 100_000


class NonconvergenceError(RuntimeError):
    """Newton failed to reach tolerance; carries the best iterate."""

    def __init__(self, message, values=None, residual_norms=None, step_index=None):
        super().__init__(message)
        self.values = values
        self.residual_norms = residual_norms
        self.step_index = step_index


class LinearSolveError(RuntimeError):
    """Inner linear solve failed (singular factorization or CG stall)."""


@dataclass
class NewtonConfig:
    abs_tol: float = 1e-11
    rel_tol: float = 1e-10
    max_iters: int = 50
    backtrack: float = 0.5
    min_step: float = 1e-12

    def __post_init__(self):
        if self.abs_tol <= 0.0 or self.rel_tol < 0.0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack factor must lie in (0, 1)")


@dataclass
class SchemeParams:
    """Physical and temporal parameters of a run.

    ``time_grid`` must start at 0 and increase strictly; ``initial``
    selects how a callable initial datum is turned into dofs.
    """

    eps: float
    lam: float
    time_grid: np.ndarray
    initial: str = "project"

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.lam < 0.0:
            raise ValueError("lam must be nonnegative")
        grid = np.asarray(self.time_grid, dtype=np.float64)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("time_grid needs at least two points")
        if grid[0] != 0.0 or np.any(np.diff(grid) <= 0.0):
            raise ValueError("time_grid must start at 0 and increase strictly")
        self.time_grid = grid
        if self.initial not in ("project", "interpolate"):
            raise ValueError("initial must be 'project' or 'interpolate'")

    @property
    def T(self) -> float:
        return float(self.time_grid[-1])

    @property
    def num_steps(self) -> int:
        return self.time_grid.size - 1


@dataclass
class ProblemData:
    """Problem data as callables: fidelity target ``g(x, y)`` and source
    ``f(x, y, t)``; either may be None."""

    g: object = None
    source: object = None


@dataclass
class StepResult:
    values: np.ndarray
    iterations: int
    residual_norms: np.ndarray
    energy: float


@dataclass
class SolveReport:
    """Per-run diagnostics gathered by ``run_time_loop``."""

    time_grid: np.ndarray
    newton_iterations: np.ndarray
    residual_histories: list
    tv_energies: np.ndarray
    l2_norms: np.ndarray
    wall_time: float
    sup_l2: float = field(init=False)
    grad_l1_time_sum: float = field(init=False)

    def __post_init__(self):
        self.sup_l2 = float(np.max(self.l2_norms))
        self.grad_l1_time_sum = float("nan")


def uniform_grid(T: float, dt: float) -> np.ndarray:
    """Uniform time grid ending exactly at ``T``; rounds ``T/dt`` to the
    nearest step count (at least one step)."""
    if T <= 0.0 or dt <= 0.0:
        raise ValueError("T and dt must be positive")
    m = max(1, round(T / dt))
    return np.linspace(0.0, T, m + 1)


def solve_spd(mat, rhs):
    """Direct sparse solve at desk scale, CG beyond it."""
    n = mat.shape[0]
    if n <= _DIRECT_SOLVE_LIMIT:
        try:
            return splu(mat.tocsc()).solve(rhs)
        except RuntimeError as exc:
            raise LinearSolveError(f"sparse factorization failed: {exc}") from exc
    x, info = cg(mat, rhs, rtol=1e-12, atol=0.0, maxiter=20 * n)
    if info != 0:
        raise LinearSolveError(f"CG did not converge (info={info})")
    return x


def step_energy(disc, v, u_prev, dt, eps, lam, data: StepData | None = None) -> float:
    """Convex energy whose minimizer is the implicit step solution."""
    mesh = disc.mesh
    v = np.asarray(v, dtype=np.float64)
    quad = 0.5 * (1.0 + lam * dt) * (v @ (disc.mass @ v))
    tv = dt * kernels.tv_energy(v, mesh.triangles, disc.grads, mesh.areas, eps)
    lin = -(disc.mass @ np.asarray(u_prev, dtype=np.float64)) @ v
    if data is not None:
        lin -= dt * (data.vector(lam, disc.num_dofs) @ v)
    return float(quad + tv + lin)


def newton_solve_step(disc, u_prev, dt, eps, lam, data=None, cfg=None) -> StepResult:
    """Solve one implicit step by damped Newton on the step energy.

    Starts from ``u_prev``.  A trial step is accepted when the energy
    decreases; if energy differences are at rounding level the step is
    still accepted when it halves the residual norm, which keeps the
    final (quadratically convergent) iterations from stalling.
    """
    if cfg is None:
        cfg = NewtonConfig()
    if dt <= 0.0:
        raise ValueError("dt must be positive")

    u = np.array(u_prev, dtype=np.float64)
    r = assembly.assemble_step_residual(disc, u, u_prev, dt, eps, lam, data)
    rnorm = float(np.linalg.norm(r))
    history = [rnorm]
    tol = max(cfg.abs_tol, cfg.rel_tol * rnorm)
    energy = step_energy(disc, u, u_prev, dt, eps, lam, data)

    iters = 0
    while rnorm > tol:
        if iters >= cfg.max_iters:
            raise NonconvergenceError(
                f"Newton did not reach tolerance {tol:.3e} in {cfg.max_iters} "
                f"iterations (residual {rnorm:.3e})",
                values=u,
                residual_norms=np.array(history),
            )
        jac = assembly.assemble_step_jacobian(disc, u, dt, eps, lam)
        direction = solve_spd(jac, -r)

        t = 1.0
        accepted = False
        slack = 1e-13 * (1.0 + abs(energy))
        while t >= cfg.min_step:
            trial = u + t * direction
            e_trial = step_energy(disc, trial, u_prev, dt, eps, lam, data)
            if e_trial < energy:
                r_trial = assembly.assemble_step_residual(
                    disc, trial, u_prev, dt, eps, lam, data
                )
                accepted = True
                break
            if e_trial <= energy + slack:
                r_trial = assembly.assemble_step_residual(
                    disc, trial, u_prev, dt, eps, lam, data
                )
                if np.linalg.norm(r_trial) <= 0.5 * rnorm:
                    accepted = True
                    break
            t *= cfg.backtrack
        if not accepted:
            raise NonconvergenceError(
                "line search failed below minimum step length",
                values=u,
                residual_norms=np.array(history),
            )
        u = trial
        energy = e_trial
        r = r_trial
        rnorm = float(np.linalg.norm(r))
        history.append(rnorm)
        iters += 1

    return StepResult(
        values=u,
        iterations=iters,
        residual_norms=np.array(history),
        energy=energy,
    )


def _resolve_initial(disc, initial, params, cfg):
    if isinstance(initial, np.ndarray):
        u0 = np.array(initial, dtype=np.float64)
        if u0.shape != (disc.num_dofs,):
            raise ValueError(f"initial values must have shape ({disc.num_dofs},)")
        return u0
    func, grad_func = initial
    if params.initial == "interpolate":
        return disc.nodal_values(func)
    from . import projection

    rule = assembly.triangle_rule(4)
    pts, w = disc.quad_geometry(rule)
    mean = float(np.sum(w * func(pts[..., 0], pts[..., 1])) / np.sum(disc.mesh.areas))
    problem = projection.ProjectionProblem(
        disc=disc, grad=grad_func, eps=params.eps, mean_value=mean, func=func
    )
    result, _ = projection.project(problem, cfg)
    return result.values


def run_time_loop(disc, initial, params: SchemeParams, data: ProblemData | None = None,
                  cfg: NewtonConfig | None = None):
    """March the implicit scheme over ``params.time_grid``.

    ``initial`` is either a dof array or a pair ``(func, grad_func)``
    handled per ``params.initial``.  Returns ``(trajectory, report)``
    with the trajectory holding one dof row per time grid point.
    """
    if cfg is None:
        cfg = NewtonConfig()
    if data is None:
        data = ProblemData()
    mesh = disc.mesh
    grid = params.time_grid
    m_steps = params.num_steps

    t_start = time.perf_counter()
    u = _resolve_initial(disc, initial, params, cfg)

    g_load = None
    if data.g is not None:
        g_load = assembly.assemble_load(disc, data.g)

    traj = np.empty((m_steps + 1, disc.num_dofs))
    traj[0] = u
    iters = np.zeros(m_steps, dtype=np.int64)
    histories = []
    tv = np.empty(m_steps + 1)
    l2 = np.empty(m_steps + 1)
    tv[0] = kernels.tv_energy(u, mesh.triangles, disc.grads, mesh.areas, params.eps)
    l2[0] = disc.l2_norm(u)
    grad_l1_sum = 0.0

    for m in range(1, m_steps + 1):
        dt = float(grid[m] - grid[m - 1])
        t_m = float(grid[m])
        source_load = None
        if data.source is not None:
            source_load = assembly.assemble_load(
                disc, lambda x, y: data.source(x, y, t_m)
            )
        step_data = StepData(g_load=g_load, source_load=source_load)
        try:
            result = newton_solve_step(
                disc, u, dt, params.eps, params.lam, step_data, cfg
            )
        except NonconvergenceError as exc:
            exc.step_index = m
            raise
        u = result.values
        traj[m] = u
        iters[m - 1] = result.iterations
        histories.append(result.residual_norms)
        tv[m] = kernels.tv_energy(u, mesh.triangles, disc.grads, mesh.areas, params.eps)
        l2[m] = disc.l2_norm(u)
        grad_l1_sum += dt * disc.grad_l1_norm(u)

    report = SolveReport(
        time_grid=grid,
        newton_iterations=iters,
        residual_histories=histories,
        tv_energies=tv,
        l2_norms=l2,
        wall_time=time.perf_counter() - t_start,
    )
    report.grad_l1_time_sum = grad_l1_sum
    return traj, report
