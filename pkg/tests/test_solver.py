import numpy as np
import pytest

import rtvflow as rt
from rtvflow import assembly, solver
from rtvflow.solver import (
    NewtonConfig,
    NonconvergenceError,
    ProblemData,
    SchemeParams,
    solve_spd,
    uniform_grid,
)


def test_uniform_grid_shape_and_endpoints():
    grid = uniform_grid(1e-2, 2e-5)
    assert grid.size == 501
    assert grid[0] == 0.0 and grid[-1] == 1e-2
    assert np.allclose(np.diff(grid), 2e-5, rtol=1e-12, atol=0.0)


def test_uniform_grid_rounds_step_count():
    assert np.allclose(uniform_grid(1.0, 0.3), [0.0, 1 / 3, 2 / 3, 1.0])
    assert uniform_grid(1.0, 0.9).size == 2  # rounds down to one step
    assert uniform_grid(1.0, 2.0).size == 2  # never fewer than one step
    with pytest.raises(ValueError):
        uniform_grid(0.0, 0.1)
    with pytest.raises(ValueError):
        uniform_grid(1.0, -0.1)


def test_newton_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(abs_tol=0.0)
    with pytest.raises(ValueError):
        NewtonConfig(max_iters=0)
    with pytest.raises(ValueError):
        NewtonConfig(backtrack=1.0)


def test_scheme_params_validation():
    grid = uniform_grid(1.0, 0.5)
    with pytest.raises(ValueError):
        SchemeParams(eps=0.0, lam=1.0, time_grid=grid)
    with pytest.raises(ValueError):
        SchemeParams(eps=1.0, lam=-1.0, time_grid=grid)
    with pytest.raises(ValueError):
        SchemeParams(eps=1.0, lam=1.0, time_grid=[0.0, 0.5, 0.5])
    with pytest.raises(ValueError):
        SchemeParams(eps=1.0, lam=1.0, time_grid=[0.1, 0.5])
    with pytest.raises(ValueError):
        SchemeParams(eps=1.0, lam=1.0, time_grid=grid, initial="sample")
    params = SchemeParams(eps=1.0, lam=1.0, time_grid=grid)
    assert params.T == 1.0 and params.num_steps == 2


def test_solve_spd_matches_dense(small_jittered):
    disc = rt.P1Discretisation(small_jittered)
    rng = np.random.default_rng(31)
    u = rng.normal(size=disc.num_dofs)
    mat = assembly.assemble_step_jacobian(disc, u, 0.01, 0.05, 1.0)
    rhs = rng.normal(size=disc.num_dofs)
    x = solve_spd(mat.tocsr(), rhs)
    want = np.linalg.solve(mat.toarray(), rhs)
    assert np.max(np.abs(x - want)) < 1e-10


def test_solve_spd_cg_branch_agrees(small_jittered, monkeypatch):
    disc = rt.P1Discretisation(small_jittered)
    rng = np.random.default_rng(32)
    u = rng.normal(size=disc.num_dofs)
    mat = assembly.assemble_step_jacobian(disc, u, 0.01, 0.05, 1.0).tocsr()
    rhs = rng.normal(size=disc.num_dofs)
    direct = solve_spd(mat, rhs)
    monkeypatch.setattr(solver, "_DIRECT_SOLVE_LIMIT", 1)
    iterative = solve_spd(mat, rhs)
    assert np.max(np.abs(direct - iterative)) < 1e-8


def test_single_step_constant_is_fixed_point(ref_triangle):
    disc = rt.P1Discretisation(ref_triangle)
    u_prev = np.full(3, 0.7)
    res = solver.newton_solve_step(disc, u_prev, dt=0.1, eps=1e-4, lam=0.0)
    assert np.max(np.abs(res.values - 0.7)) < 1e-12
    assert res.iterations == 0


def test_single_step_matches_linear_limit(small_jittered):
    # for eps >> |grad u| the flux is grad/eps, so the step equation is the
    # linear reaction-diffusion solve ((1+lam dt) M + dt/eps K) u = M u_prev
    disc = rt.P1Discretisation(small_jittered)
    rng = np.random.default_rng(33)
    u_prev = 1e-6 * rng.normal(size=disc.num_dofs)
    dt, eps, lam = 0.05, 1.0, 0.7
    res = solver.newton_solve_step(disc, u_prev, dt, eps, lam)
    jac0 = assembly.assemble_step_jacobian(disc, np.zeros(disc.num_dofs), dt, eps, lam)
    want = np.linalg.solve(jac0.toarray(), disc.mass @ u_prev)
    assert np.max(np.abs(res.values - want)) < 1e-9 * np.max(np.abs(u_prev))


def test_newton_residual_history_decreases(small_jittered):
    disc = rt.P1Discretisation(small_jittered)
    rng = np.random.default_rng(34)
    u_prev = rng.normal(size=disc.num_dofs)
    res = solver.newton_solve_step(disc, u_prev, dt=0.05, eps=1e-3, lam=1.0)
    hist = res.residual_norms
    assert hist.size == res.iterations + 1
    assert hist[-1] < 1e-10 * max(1.0, hist[0])
    assert hist[-1] <= hist[0]


def test_newton_nonconvergence_carries_best_iterate(small_jittered):
    disc = rt.P1Discretisation(small_jittered)
    rng = np.random.default_rng(35)
    u_prev = rng.normal(size=disc.num_dofs)
    cfg = NewtonConfig(abs_tol=1e-15, rel_tol=0.0, max_iters=1)
    with pytest.raises(NonconvergenceError) as err:
        solver.newton_solve_step(disc, u_prev, dt=0.05, eps=1e-4, lam=1.0, cfg=cfg)
    assert err.value.values is not None
    assert err.value.residual_norms.size >= 1


def test_step_rejects_nonpositive_dt(ref_triangle):
    disc = rt.P1Discretisation(ref_triangle)
    with pytest.raises(ValueError):
        solver.newton_solve_step(disc, np.zeros(3), dt=0.0, eps=1.0, lam=0.0)


def test_time_loop_shapes_and_report(small_jittered):
    disc = rt.P1Discretisation(small_jittered)
    rng = np.random.default_rng(36)
    u0 = rng.normal(scale=0.3, size=disc.num_dofs)
    grid = uniform_grid(0.02, 0.005)
    params = SchemeParams(eps=0.01, lam=0.5, time_grid=grid)
    traj, report = solver.run_time_loop(disc, u0, params, ProblemData())
    assert traj.shape == (grid.size, disc.num_dofs)
    assert np.array_equal(traj[0], u0)
    assert report.newton_iterations.shape == (grid.size - 1,)
    assert len(report.residual_histories) == grid.size - 1
    assert report.tv_energies.shape == (grid.size,)
    assert report.l2_norms.shape == (grid.size,)
    assert report.sup_l2 == np.max(report.l2_norms)
    assert report.wall_time >= 0.0
    # time integral of the gradient mass matches a direct recomputation
    total = sum(
        float(grid[m] - grid[m - 1]) * disc.grad_l1_norm(traj[m])
        for m in range(1, grid.size)
    )
    assert abs(report.grad_l1_time_sum - total) < 1e-13


def test_time_loop_without_forcing_decays(small_jittered):
    disc = rt.P1Discretisation(small_jittered)
    rng = np.random.default_rng(37)
    u0 = rng.normal(scale=0.3, size=disc.num_dofs)
    grid = uniform_grid(0.05, 0.005)
    params = SchemeParams(eps=1e-3, lam=0.0, time_grid=grid)
    traj, report = solver.run_time_loop(disc, u0, params, ProblemData())
    # total variation energy is non-increasing step to step
    assert np.max(np.diff(report.tv_energies)) <= 1e-12
    # the mean is conserved by the zero-flux boundary
    means = traj @ (disc.mass @ np.ones(disc.num_dofs))
    assert np.max(np.abs(means - means[0])) < 1e-12


def test_time_loop_initial_pair_interpolate():
    mesh = rt.generate_structured(4)
    disc = rt.P1Discretisation(mesh)
    func = lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y)
    gfun = lambda x, y: np.stack(
        [
            -np.pi * np.sin(np.pi * x) * np.cos(np.pi * y),
            -np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
        ],
        axis=-1,
    )
    grid = uniform_grid(0.01, 0.005)
    params = SchemeParams(eps=0.1, lam=0.0, time_grid=grid, initial="interpolate")
    traj, _ = solver.run_time_loop(disc, (func, gfun), params, ProblemData())
    assert np.max(np.abs(traj[0] - disc.nodal_values(func))) == 0.0


def test_time_loop_nonconvergence_reports_step(small_jittered):
    disc = rt.P1Discretisation(small_jittered)
    rng = np.random.default_rng(38)
    u0 = rng.normal(size=disc.num_dofs)
    grid = uniform_grid(0.1, 0.05)
    params = SchemeParams(eps=1e-5, lam=0.0, time_grid=grid)
    cfg = NewtonConfig(abs_tol=1e-15, rel_tol=0.0, max_iters=1)
    with pytest.raises(NonconvergenceError) as err:
        solver.run_time_loop(disc, u0, params, ProblemData(), cfg)
    assert err.value.step_index == 1


def test_step_energy_at_minimum_below_neighbours(small_jittered):
    disc = rt.P1Discretisation(small_jittered)
    rng = np.random.default_rng(39)
    u_prev = rng.normal(size=disc.num_dofs)
    dt, eps, lam = 0.02, 0.05, 1.0
    res = solver.newton_solve_step(disc, u_prev, dt, eps, lam)
    e_min = solver.step_energy(disc, res.values, u_prev, dt, eps, lam)
    for _ in range(5):
        pert = res.values + 1e-4 * rng.normal(size=disc.num_dofs)
        assert solver.step_energy(disc, pert, u_prev, dt, eps, lam) > e_min
