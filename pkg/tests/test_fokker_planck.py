import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_problem
from wflow import model as M
from wflow.fokker_planck import (DensityField, FokkerPlanckSolver, FPInstabilityError, Grid, backward_residual,
                                 fp_step, initial_density, likelihood_path, likelihood_ratio)


def _gauss(x, var):
    return np.exp(-0.5 * x * x / var) / math.sqrt(2 * math.pi * var)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid.uniform(((-1, 1),), 32)
    g = Grid.uniform(((-1, 1), (0, 2)), (64, 65))
    assert g.shape == (64, 65) and g.points.shape == (64 * 65, 2)
    assert g.integrate(np.ones(g.shape)) == pytest.approx(4.0)


def test_heat_solution_matches_kernel(heat):
    grid = Grid.uniform(heat.domain_box, 2048)
    path = FokkerPlanckSolver(heat, grid).solve(initial_density(heat, grid), [0.5])
    err = np.max(np.abs(path.values[-1] - _gauss(grid.axes[0], 2.0)))
    assert err <= 1e-4


def test_ou_variance(ou):
    grid = Grid.uniform(ou.domain_box, 2048)
    path = FokkerPlanckSolver(ou, grid).solve(initial_density(ou, grid), [1.0])
    assert path.field(0).variance() == pytest.approx(1 + 3 * math.exp(-2), abs=1e-3)


@pytest.mark.parametrize("sigma,params", [("identity", {}), ("scalar_sine", {"base": 2, "amp": 1}),
                                          ("gaussian_bump", {})])
def test_stationary_density_is_preserved(sigma, params):
    problem = make_problem("double_well", sigma, sigma_params=params, box=4.0)
    grid = Grid.uniform(problem.domain_box, 512)
    q = np.exp(-problem.potential(grid.points))
    q /= grid.integrate(q)
    solver = FokkerPlanckSolver(problem, grid)
    out = fp_step(DensityField(grid, q), problem, solver.dt)
    assert np.max(np.abs(out.values - q)) <= 1e-9


def test_two_dimensional_stationary_state_with_cross_terms():
    def value(x):
        out = np.empty((len(x), 2, 2))
        out[:, 0, 0] = 2 + np.sin(x[:, 0])
        out[:, 1, 1] = 2 + np.cos(x[:, 1])
        out[:, 0, 1] = out[:, 1, 0] = 0.3
        return out

    sigma = M.SpdMatrixField("coupled", value, bounds=None)
    problem = M.DiffusionProblem(M.potential("quadratic", 2), sigma, M.MetricSpec(M.volatility("identity", 2)),
                                 1.0, 2, M.gaussian([0, 0], 1.0), ((-5, 5), (-5, 5)))
    grid = Grid.uniform(problem.domain_box, 64)
    q = np.exp(-problem.potential(grid.points)).reshape(grid.shape)
    q /= grid.integrate(q)
    solver = FokkerPlanckSolver(problem, grid)
    new = solver.step(q, solver.dt)
    assert np.max(np.abs(new - q)) <= 1e-9


@settings(max_examples=15, deadline=None)
@given(w=st.floats(0.1, 0.9), m1=st.floats(-3, 3), m2=st.floats(-3, 3), v1=st.floats(0.3, 2), v2=st.floats(0.3, 2))
def test_mass_conserved_and_nonnegative(w, m1, m2, v1, v2):
    law = M.GaussianMixture(np.array([w, 1 - w]), np.array([m1, m2]), np.array([v1, v2]))
    problem = M.DiffusionProblem(M.potential("quadratic"), M.volatility("scalar_sine"),
                                 M.MetricSpec(M.volatility("identity")), 0.2, 1, law, ((-12, 12),))
    grid = Grid.uniform(problem.domain_box, 256)
    solver = FokkerPlanckSolver(problem, grid)
    p = initial_density(problem, grid).values
    for _ in range(50):
        new = solver.step(p, solver.dt)
        assert abs(grid.integrate(new) - grid.integrate(p)) <= 1e-9
        assert new.min() >= 0
        p = new


def test_cumulative_mass_drift(ou):
    grid = Grid.uniform(ou.domain_box, 1024)
    path = FokkerPlanckSolver(ou, grid).solve(initial_density(ou, grid), [0.0, 1.0])
    assert abs(path.field(1).mass - 1.0) <= 1e-6


def test_unstable_step_is_rejected(heat):
    grid = Grid.uniform(heat.domain_box, 512)
    solver = FokkerPlanckSolver(heat, grid)
    with pytest.raises(FPInstabilityError, match="stability"):
        solver.step(initial_density(heat, grid).values, 3 * solver.stability_limit)


def test_likelihood_examples(heat, ou):
    grid = Grid.uniform(heat.domain_box, 1024)
    x = grid.axes[0]
    p = DensityField(grid, _gauss(x, 2.0))
    lik = likelihood_ratio(p, heat)
    assert np.allclose(lik.values, p.values, rtol=1e-14)
    inner = slice(1, -1)
    assert np.allclose(lik.gradient[0][inner], (-x / 2.0)[inner], atol=1e-4)
    s = 3.0
    lik = likelihood_ratio(DensityField(grid, _gauss(x, s)), ou)
    assert np.allclose(lik.gradient[0][inner], (x * (1 - 1 / s))[inner], atol=1e-4)
    q = np.exp(-0.5 * x * x)
    lik = likelihood_ratio(DensityField(grid, q / grid.integrate(q)), ou)
    assert np.max(np.abs(lik.gradient)) <= 1e-10


def test_likelihood_round_trip(ou):
    grid = Grid.uniform(ou.domain_box, 512)
    p = initial_density(ou, grid)
    lik = likelihood_ratio(p, ou)
    V = ou.potential(grid.points)
    assert np.max(np.abs(lik.reconstruct_density(V) - p.values) / p.values) <= 1e-14


def test_likelihood_rejects_nonpositive_nodes(heat):
    grid = Grid.uniform(heat.domain_box, 128)
    vals = np.ones(grid.shape)
    vals[[3, 70]] = 0.0
    with pytest.raises(ValueError, match=r"\(3,\)"):
        likelihood_ratio(DensityField(grid, vals), heat)


def test_backward_residual_heat_small_and_refining(heat):
    t = 0.5
    res = []
    for nodes in (1025, 2049):
        grid = Grid.uniform(heat.domain_box, nodes)
        h = grid.spacing[0]
        dt = h * h / 4
        path = FokkerPlanckSolver(heat, grid).solve(initial_density(heat, grid), [t - dt, t, t + dt])
        res.append(backward_residual(likelihood_path(path, heat), heat))
    assert res[1] <= 5e-3
    assert res[1] < res[0]


def test_backward_residual_constant_field_and_slice_count(ou):
    grid = Grid.uniform(ou.domain_box, 256)
    q = np.exp(-ou.potential(grid.points))
    q /= grid.integrate(q)
    solver = FokkerPlanckSolver(ou, grid)
    path = solver.solve(DensityField(grid, q), [0.0, solver.dt, 2 * solver.dt])
    assert backward_residual(likelihood_path(path, ou), ou) <= 1e-12
    with pytest.raises(ValueError):
        backward_residual(likelihood_path(solver.solve(DensityField(grid, q), [0.0, solver.dt]), ou), ou)


def test_backward_residual_refinement_ratio(ou):
    res = []
    for nodes in (513, 1025, 2049):
        grid = Grid.uniform(ou.domain_box, nodes)
        solver = FokkerPlanckSolver(ou, grid)
        h = solver.dt
        path = solver.solve(initial_density(ou, grid), [0.5 - h, 0.5, 0.5 + h])
        res.append(backward_residual(likelihood_path(path, ou), ou))
    assert res[0] / res[1] >= 3 and res[1] / res[2] >= 3


def test_solve_hits_requested_times(ou):
    grid = Grid.uniform(ou.domain_box, 256)
    path = FokkerPlanckSolver(ou, grid).solve(initial_density(ou, grid), [0.3, 0.1, 0.7])
    assert np.allclose(path.times, [0.1, 0.3, 0.7])
    assert path.at(0.3).time == 0.3
    with pytest.raises(KeyError):
        path.at(0.2)
