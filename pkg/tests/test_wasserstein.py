import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.optimize import linprog

from conftest import make_problem
from wflow import model as M
from wflow.fokker_planck import DensityField, FokkerPlanckSolver, Grid, initial_density, likelihood_ratio
from wflow.functionals import fisher_quadratic_form
from wflow.wasserstein import (TransportError, ground_distance, metric_derivative, metric_derivative_fd,
                               network_simplex, transport, w2_1d_quantile, w2_distance)


def _metric(values, constant=True):
    n = len(values)
    fld = M.volatility("diagonal", n, values=values)
    if not constant:
        fld = M.SpdMatrixField("diagonal_graph", fld.value, fld.divergence, fld.bounds, False)
    return M.MetricSpec(fld)


def _node(ground, point):
    return int(np.argmin(np.sum((ground.nodes - np.asarray(point)) ** 2, axis=1)))


def test_ground_examples():
    grid = Grid.uniform(((0.0, 4.0), (0.0, 4.0)), 65)
    eu = ground_distance(_metric([1.0, 1.0]), grid, max_nodes=25)
    assert eu.method == "euclidean_closed_form"
    assert eu.distances[_node(eu, (0, 0)), _node(eu, (3, 4))] == pytest.approx(5.0, abs=1e-14)
    # G = diag(1, 4) means A = diag(1, 1/4).
    g = ground_distance(_metric([1.0, 0.25]), grid, max_nodes=25)
    assert g.distances[_node(g, (0, 0)), _node(g, (1, 0))] == pytest.approx(1.0, abs=1e-14)
    line = Grid.uniform(((0.0, 1.0),), 65)
    for constant in (True, False):
        d = ground_distance(_metric([0.25], constant), line)
        assert d.distances[0, -1] == pytest.approx(2.0, rel=1e-12)


def test_ground_non_spd_rejected():
    bad = M.SpdMatrixField("neg", lambda x: np.broadcast_to(-np.eye(2), (len(x), 2, 2)).copy())
    with pytest.raises(ValueError, match="positive definite"):
        ground_distance(M.MetricSpec(bad), Grid.uniform(((0, 1), (0, 1)), 64), max_nodes=100)


def test_geodesic_metric_properties():
    metric = M.MetricSpec(M.volatility("gaussian_bump", 2, base=1.0, amp=1.0, width=1.0))
    grid = Grid.uniform(((-3, 3), (-3, 3)), 64)
    g = ground_distance(metric, grid, max_nodes=400)
    D = g.distances
    assert g.method == "graph_geodesic"
    assert np.allclose(D, D.T, atol=1e-12) and np.all(np.diag(D) == 0)
    rs = np.random.default_rng(0)
    i, j, k = rs.integers(0, g.size, (3, 2000))
    assert np.all(D[i, k] <= D[i, j] + D[j, k] + 1e-9)
    eu = np.sqrt(np.sum((g.nodes[:, None] - g.nodes[None]) ** 2, axis=-1))
    mask = eu > 0
    ratio = D[mask] / eu[mask]
    # A in [1, 2] so G in [1/2, 1]: 1/sqrt(2) <= d_G / |x - y| <= 1, up to 2% discretization.
    assert ratio.min() >= (1 / math.sqrt(2)) * 0.98 and ratio.max() <= 1.02


@settings(max_examples=25, deadline=None)
@given(data=st.data(), n=st.integers(2, 7), m=st.integers(2, 7))
def test_network_simplex_matches_linprog(data, n, m):
    rs = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    a = rs.uniform(0.1, 1, n)
    b = rs.uniform(0.1, 1, m)
    a /= a.sum()
    b /= b.sum()
    C = rs.uniform(0, 5, (n, m))
    res = network_simplex(a, b, C)
    A_eq = np.vstack([np.kron(np.eye(n), np.ones(m)), np.kron(np.ones(n), np.eye(m))])
    ref = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    assert res.cost == pytest.approx(ref.fun, abs=1e-9)
    plan = res.dense_plan(n, m)
    assert np.all(plan >= 0)
    assert np.allclose(plan.sum(1), a, atol=1e-8) and np.allclose(plan.sum(0), b, atol=1e-8)


def test_network_simplex_rejects_mass_mismatch():
    with pytest.raises(TransportError, match="mass mismatch"):
        network_simplex(np.array([0.5, 0.5]), np.array([0.5, 0.6]), np.ones((2, 2)))


@pytest.fixture(scope="module")
def line512():
    grid = Grid.uniform(((-10.0, 10.0),), 512)
    return grid, ground_distance(_metric([1.0]), grid)


def _density(grid, law):
    v = law.pdf(grid.points)
    return DensityField(grid, v / grid.integrate(v))


def test_w2_examples(line512):
    grid, ground = line512
    mu = _density(grid, M.gaussian(0.0, 1.0))
    nu = _density(grid, M.gaussian(0.0, 4.0))
    assert w2_distance(mu, mu, ground) == pytest.approx(0.0, abs=1e-12)
    assert w2_distance(mu, nu, ground) == pytest.approx(1.0, rel=0.01)
    x = grid.axes[0]
    a = np.array([[x[256]]])
    b = np.array([[x[256] + 3 * (x[1] - x[0]) * round(3 / (3 * (x[1] - x[0])))]])
    d = w2_distance(a, b, ground)
    assert d == pytest.approx(abs(b[0, 0] - a[0, 0]), rel=1e-12)


def test_transport_plan_invariants(line512):
    grid, ground = line512
    mu = _density(grid, M.GaussianMixture(np.array([0.4, 0.6]), np.array([-2.0, 1.5]), np.array([0.5, 1.0])))
    nu = _density(grid, M.gaussian(1.0, 2.0))
    plan = transport(mu, nu, ground)
    assert np.all(plan.weights >= 0) and plan.cost >= 0
    assert max(plan.marginal_residuals) <= 1e-8


def test_sinkhorn_close_to_exact(line512):
    grid, ground = line512
    mu = _density(grid, M.gaussian(0.0, 1.0))
    nu = _density(grid, M.gaussian(0.0, 4.0))
    exact = w2_distance(mu, nu, ground)
    sk = transport(mu, nu, ground, "sinkhorn")
    assert sk.epsilon > 0 and sk.bias_bound > 0
    assert abs(sk.distance - exact) / exact <= max(0.01, sk.bias_bound)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_w2_triangle_inequality(seed):
    rs = np.random.default_rng(seed)
    grid = Grid.uniform(((-5.0, 5.0), (-5.0, 5.0)), 64)
    ground = ground_distance(_metric([1.0, 1.0]), grid, max_nodes=144)
    clouds = [rs.normal(rs.uniform(-2, 2, 2), rs.uniform(0.3, 1.5), (40, 2)) for _ in range(3)]
    d01 = w2_distance(clouds[0], clouds[1], ground)
    d12 = w2_distance(clouds[1], clouds[2], ground)
    d02 = w2_distance(clouds[0], clouds[2], ground)
    assert d02 <= (d01 + d12) * (1 + 1e-6)


def test_quantile_examples():
    x = np.random.default_rng(0).normal(size=1000)
    assert w2_1d_quantile(x, x.copy()) == 0.0
    assert w2_1d_quantile(stats.norm(0, 1), stats.norm(0, 2)) == pytest.approx(1.0, abs=2e-3)
    assert w2_1d_quantile(stats.norm(0, 1), stats.norm(2, 1)) == pytest.approx(2.0, abs=2e-3)
    assert w2_1d_quantile(stats.norm(0, 1), stats.norm(2, 1), weight=4.0) == pytest.approx(4.0, abs=4e-3)


def test_quantile_input_errors():
    with pytest.raises(ValueError, match="NaN"):
        w2_1d_quantile(np.array([0.0, np.nan]), np.array([0.0, 1.0]))
    with pytest.raises(ValueError, match="sorted"):
        w2_1d_quantile(lambda u: -u, lambda u: u)


def test_quantile_agrees_with_lp_on_atoms(line512):
    grid, ground = line512
    rs = np.random.default_rng(3)
    x = grid.axes[0]
    a = rs.uniform(0, 1, x.size)
    b = rs.uniform(0, 1, x.size)
    a /= a.sum()
    b /= b.sum()
    lp = math.sqrt(network_simplex(a, b, ground.distances**2).cost)
    assert w2_1d_quantile((x, a), (x, b)) == pytest.approx(lp, rel=1e-9)


def test_metric_derivative_examples(heat, ou):
    grid = Grid.uniform(((-12.0, 12.0),), 2048)
    for s in (0.5, 2.0, 4.0):
        p = _density(grid, M.gaussian(0.0, s))
        assert metric_derivative(heat, likelihood_ratio(p, heat)) == pytest.approx(1 / math.sqrt(s), rel=1e-4)
        lik = likelihood_ratio(p, ou)
        assert metric_derivative(ou, lik, p) == pytest.approx(abs(s - 1) / math.sqrt(s), rel=1e-4)
        assert metric_derivative(ou, lik) == pytest.approx(
            math.sqrt(fisher_quadratic_form(lik, ou, "a_metric").value), rel=1e-10)
    q = _density(grid, M.gaussian(0.0, 1.0))
    assert metric_derivative(ou, likelihood_ratio(q, ou)) <= 1e-6


def test_metric_derivative_fd_heat_and_ou(heat, ou):
    for problem, t in ((heat, 0.5), (ou, 0.5 * math.log(3))):
        grid = Grid.uniform(problem.domain_box, 2048)
        hs = [0.08, 0.04, 0.02, 0.01]
        path = FokkerPlanckSolver(problem, grid).solve(initial_density(problem, grid), [t] + [t + h for h in hs])
        fd = metric_derivative_fd(problem, path, t, hs)
        assert fd.extrapolated == pytest.approx(1 / math.sqrt(2), rel=0.05)
        assert len(fd.ratios) == 4


def test_metric_derivative_fd_stationary_and_missing_slices():
    problem = make_problem("quadratic", var=1.0)
    grid = Grid.uniform(problem.domain_box, 1024)
    x = grid.axes[0]
    q = np.exp(-0.5 * x * x)
    path = FokkerPlanckSolver(problem, grid).solve(DensityField(grid, q / grid.integrate(q)),
                                                   [0.5, 0.51, 0.52, 0.54, 0.58])
    fd = metric_derivative_fd(problem, path, 0.5)
    assert max(fd.ratios) <= 1e-6
    with pytest.raises(ValueError, match="insufficient"):
        metric_derivative_fd(problem, path, 0.51)


def test_metric_derivative_fd_lattice_solver_needs_ground(heat):
    grid = Grid.uniform(heat.domain_box, 256)
    path = FokkerPlanckSolver(heat, grid).solve(initial_density(heat, grid), [0.5, 0.58, 0.54, 0.52, 0.51])
    with pytest.raises(ValueError, match="ground"):
        metric_derivative_fd(heat, path, 0.5, solver="exact_lp")
