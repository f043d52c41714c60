"""Quadratic Wasserstein distances and metric derivatives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..fokker_planck import DensityField, DensityPath, GridMismatchError, LikelihoodField
from ..functionals import fisher_quadratic_form
from ..model import DiffusionProblem
from ..sde import ParticleEnsemble
from .ground import GroundMetric
from .simplex import MASS_TOLERANCE, TransportError, network_simplex
from .sinkhorn import sinkhorn_divergence

EXACT_LIMIT = 4000
SINKHORN_LIMIT = 20000


@dataclass(frozen=True)
class TransportPlan:
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    cost: float
    marginal_residuals: tuple[float, float]
    solver: str
    epsilon: float | None = None
    bias_bound: float = 0.0

    @property
    def distance(self) -> float:
        return math.sqrt(max(self.cost, 0.0))


def _cic_weights(x: np.ndarray, axis: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h = axis[1] - axis[0]
    pos = (np.clip(x, axis[0], axis[-1]) - axis[0]) / h
    i = np.clip(np.floor(pos).astype(np.int64), 0, axis.size - 2)
    f = pos - i
    return i, 1.0 - f, f


def aggregate(measure, ground: GroundMetric) -> np.ndarray:
    """Mass-conservative cloud-in-cell projection onto the coarse OT lattice.

    ``measure`` is a DensityField, a ParticleEnsemble or an ``(N, n)`` array
    of equally weighted points.  The result sums to one.
    """
    if isinstance(measure, DensityField):
        if not measure.grid.same_as(ground.grid):
            raise GridMismatchError("density grid differs from the ground metric grid")
        pts = measure.grid.points
        mass = (measure.grid.weights * measure.values).ravel()
    else:
        pts = measure.positions if isinstance(measure, ParticleEnsemble) else np.asarray(measure, float)
        pts = pts.reshape(pts.shape[0], -1)
        mass = np.full(pts.shape[0], 1.0 / pts.shape[0])
    if np.any(mass < 0):
        raise TransportError("negative mass in measure")
    shape = ground.shape
    out = np.zeros(shape)
    parts = [_cic_weights(pts[:, d], ground.axes[d]) for d in range(len(shape))]
    if len(shape) == 1:
        i, w0, w1 = parts[0]
        np.add.at(out, i, mass * w0)
        np.add.at(out, i + 1, mass * w1)
    else:
        (i, a0, a1), (j, b0, b1) = parts
        for di, wa in ((0, a0), (1, a1)):
            for dj, wb in ((0, b0), (1, b1)):
                np.add.at(out, (i + di, j + dj), mass * wa * wb)
    total = out.sum()
    return out.ravel() / total


def sinkhorn_bias_bound(epsilon: float, cost: float) -> float:
    """Relative error envelope of the debiased entropic estimate of ``W``.

    The debiased divergence differs from ``W^2`` by at most about
    ``epsilon``, which moves ``W`` by ``epsilon / (2 W)``.
    """
    if cost <= 0:
        return math.inf
    return epsilon / (2.0 * cost)


def transport(mu, nu, ground: GroundMetric, solver: str = "exact_lp",
              epsilon: float | None = None) -> TransportPlan:
    """Optimal coupling of two measures for the cost ``d_G^2`` on the coarse lattice."""
    a = aggregate(mu, ground)
    b = aggregate(nu, ground)
    if abs(a.sum() - b.sum()) > MASS_TOLERANCE:
        raise TransportError("infeasible marginals: mass mismatch")
    C = ground.distances ** 2
    if solver == "exact_lp":
        if ground.size > EXACT_LIMIT:
            raise TransportError(f"exact solver limited to {EXACT_LIMIT} support points")
        res = network_simplex(a, b, C)
        plan_a = np.bincount(res.rows, res.flows, a.size)
        plan_b = np.bincount(res.cols, res.flows, b.size)
        return TransportPlan(res.rows, res.cols, res.flows, res.cost,
                             (float(np.abs(plan_a - a).max()), float(np.abs(plan_b - b).max())),
                             "exact_lp")
    if solver == "sinkhorn":
        if ground.size > SINKHORN_LIMIT:
            raise TransportError(f"sinkhorn limited to {SINKHORN_LIMIT} support points")
        if epsilon is None:
            support = np.flatnonzero((a > 0) | (b > 0))
            epsilon = 1e-3 * float(np.median(C[np.ix_(support, support)]))
        res = sinkhorn_divergence(a, b, C, epsilon)
        r, c = np.nonzero(res.plan > 1e-15)
        return TransportPlan(r, c, res.plan[r, c], float(res.cost),
                             (float(np.abs(res.plan.sum(1) - a).max()),
                              float(np.abs(res.plan.sum(0) - b).max())),
                             "sinkhorn", float(epsilon), sinkhorn_bias_bound(epsilon, res.cost))
    raise ValueError(f"unknown solver '{solver}'")


def w2_distance(mu, nu, ground: GroundMetric, solver: str = "exact_lp",
                epsilon: float | None = None) -> float:
    """Riemannian quadratic Wasserstein distance on the coarse lattice."""
    return transport(mu, nu, ground, solver, epsilon).distance


# ---------------------------------------------------------------------------
# One-dimensional monotone coupling


@dataclass(frozen=True)
class _Quantile:
    """Quantile function, linear from x0 to x1 on each [u0, u1]."""

    u0: np.ndarray
    u1: np.ndarray
    x0: np.ndarray
    x1: np.ndarray

    def evaluate(self, u_mid: np.ndarray, u: np.ndarray) -> np.ndarray:
        k = np.clip(np.searchsorted(self.u1, u_mid, side="right"), 0, self.u1.size - 1)
        span = self.u1[k] - self.u0[k]
        frac = np.where(span > 0, (u - self.u0[k]) / np.where(span > 0, span, 1.0), 0.0)
        return self.x0[k] + frac * (self.x1[k] - self.x0[k])

    def mapped(self, phi: Callable[[np.ndarray], np.ndarray]) -> "_Quantile":
        return _Quantile(self.u0, self.u1, phi(self.x0), phi(self.x1))


def _from_atoms(x: np.ndarray, w: np.ndarray) -> _Quantile:
    cum = np.concatenate([[0.0], np.cumsum(w)])
    cum /= cum[-1]
    return _Quantile(cum[:-1], cum[1:], x, x)


def _from_density(d: DensityField) -> _Quantile:
    if d.grid.dimension != 1:
        raise ValueError("quantile oracle needs one-dimensional densities")
    x = d.grid.axes[0]
    h = d.grid.spacing[0]
    left = np.maximum(x - 0.5 * h, x[0])
    right = np.minimum(x + 0.5 * h, x[-1])
    mass = d.grid.weights * d.values
    keep = mass > 0
    cum = np.concatenate([[0.0], np.cumsum(mass[keep])])
    cum /= cum[-1]
    return _Quantile(cum[:-1], cum[1:], left[keep], right[keep])


def _as_quantile(m, n_quantiles: int) -> _Quantile:
    if isinstance(m, DensityField):
        return _from_density(m)
    if isinstance(m, ParticleEnsemble):
        m = m.positions
    if isinstance(m, tuple) and len(m) == 2:
        x, w = (np.asarray(v, dtype=np.float64).ravel() for v in m)
        if np.any(~np.isfinite(x)) or np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("atoms and weights must be finite with nonnegative weights")
        order = np.argsort(x, kind="stable")
        return _from_atoms(x[order], w[order])
    if hasattr(m, "ppf") or callable(m):
        ppf = m.ppf if hasattr(m, "ppf") else m
        u = (np.arange(n_quantiles) + 0.5) / n_quantiles
        x = np.asarray(ppf(u), dtype=np.float64)
        if np.any(~np.isfinite(x)):
            raise ValueError("quantile function returned NaN or infinite values")
        if np.any(np.diff(x) < 0):
            raise ValueError("quantile function values are not sorted")
        return _from_atoms(x, np.full(n_quantiles, 1.0 / n_quantiles))
    x = np.asarray(m, dtype=np.float64)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise ValueError("samples must be one-dimensional")
    if np.any(np.isnan(x)):
        raise ValueError("samples contain NaN")
    return _from_atoms(np.sort(x), np.full(x.size, 1.0 / x.size))


def _metric_map(weight, axis: np.ndarray | None):
    """Map ``x -> Phi(x)`` with ``Phi' = sqrt(g)``; identity for ``weight=None``."""
    if weight is None:
        return None
    if np.isscalar(weight):
        if weight <= 0:
            raise ValueError("metric weight must be positive")
        root = math.sqrt(float(weight))
        return lambda x: root * x
    if axis is None:
        raise ValueError("a variable metric needs a grid axis")
    mid = 0.5 * (axis[1:] + axis[:-1])
    g = np.asarray(weight(mid.reshape(-1, 1)), dtype=np.float64).reshape(-1)
    phi = np.concatenate([[0.0], np.cumsum(np.sqrt(g) * np.diff(axis))])
    return lambda x: np.interp(x, axis, phi)


def w2_1d_quantile(mu, nu, weight=None, n_quantiles: int = 10_000, axis=None) -> float:
    """One-dimensional quadratic Wasserstein distance by monotone coupling.

    Parameters
    ----------
    mu, nu
        Each may be a sample array, an ``(atoms, weights)`` tuple, a
        one-dimensional DensityField (piecewise constant on control volumes),
        or a quantile function / frozen scipy distribution evaluated at
        ``n_quantiles`` midpoints.
    weight : float or callable, optional
        Scalar metric ``g``.  A constant scales the result by ``sqrt(g)``; a
        callable ``g(x)`` is applied through ``Phi(x) = int sqrt(g)``.
    axis : array, optional
        Node axis used to tabulate ``Phi`` for a callable weight; defaults to
        the grid of a DensityField argument.

    Returns
    -------
    float
        The squared quantile difference integrated exactly over the merged
        breakpoints, then square rooted.
    """
    qa = _as_quantile(mu, n_quantiles)
    qb = _as_quantile(nu, n_quantiles)
    if axis is None:
        for m in (mu, nu):
            if isinstance(m, DensityField):
                axis = m.grid.axes[0]
    phi = _metric_map(weight, axis)
    if phi is not None:
        qa, qb = qa.mapped(phi), qb.mapped(phi)
    u = np.unique(np.concatenate([qa.u0, qa.u1, qb.u0, qb.u1, [0.0, 1.0]]))
    u = u[(u >= 0) & (u <= 1)]
    lo, hi = u[:-1], u[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    mid = 0.5 * (lo + hi)
    d_lo = qa.evaluate(mid, lo) - qb.evaluate(mid, lo)
    d_mid = qa.evaluate(mid, mid) - qb.evaluate(mid, mid)
    d_hi = qa.evaluate(mid, hi) - qb.evaluate(mid, hi)
    total = np.sum((hi - lo) / 6.0 * (d_lo**2 + 4.0 * d_mid**2 + d_hi**2))
    return math.sqrt(max(float(total), 0.0))


# ---------------------------------------------------------------------------
# Metric derivative


def metric_derivative(problem: DiffusionProblem, lik: LikelihoodField,
                      density: DensityField | None = None) -> float:
    """``sqrt(int <G Sigma grad log l, Sigma grad log l> p)``, the speed of the flow."""
    if density is not None and not density.grid.same_as(lik.grid):
        raise GridMismatchError("density and likelihood grids differ")
    return math.sqrt(max(fisher_quadratic_form(lik, problem, "sigma_g_sigma").value, 0.0))


@dataclass(frozen=True)
class FDResult:
    t: float
    h_list: tuple[float, ...]
    ratios: tuple[float, ...]
    extrapolated: float
    solver: str


def metric_derivative_fd(problem: DiffusionProblem, path: DensityPath, t: float,
                         h_list: Sequence[float] | None = None, solver: str = "quantile",
                         ground: GroundMetric | None = None) -> FDResult:
    """Forward-difference ratios ``W_G(P_{t+h}, P_t) / h`` and their Richardson limit.

    In one dimension ``solver='quantile'`` uses the exact monotone coupling
    of the piecewise-constant densities, mapped through ``Phi = int sqrt(G)``.
    ``'exact_lp'`` and ``'sinkhorn'`` solve on ``ground``; on a lattice they
    are biased once the displacement ``h * speed`` falls below the coarse
    spacing.
    """
    if h_list is None:
        h_list = tuple(c * problem.horizon for c in (0.08, 0.04, 0.02, 0.01))
    h_list = tuple(sorted((float(h) for h in h_list), reverse=True))
    try:
        base = path.at(t)
        others = [path.at(t + h) for h in h_list]
    except KeyError as exc:
        raise ValueError(f"insufficient density slices around t={t}: {exc}") from None
    ratios = []
    for h, other in zip(h_list, others):
        if solver == "quantile":
            if problem.dimension != 1:
                raise ValueError("quantile solver needs n = 1")
            weight = None if _is_identity(problem) else (
                float(problem.metric.g(np.zeros((1, 1)))[0, 0, 0]) if problem.metric.constant
                else (lambda x: problem.metric.g(x)[:, 0, 0]))
            w = w2_1d_quantile(other, base, weight=weight)
        else:
            if ground is None:
                raise ValueError("lattice solvers need a ground metric")
            w = w2_distance(other, base, ground, solver)
        ratios.append(w / h)
    if len(h_list) >= 2 and abs(h_list[-2] - 2 * h_list[-1]) <= 1e-9 * h_list[-2]:
        extrap = 2.0 * ratios[-1] - ratios[-2]
    else:
        extrap = ratios[-1]
    return FDResult(float(t), h_list, tuple(ratios), float(extrap), solver)


def _is_identity(problem: DiffusionProblem) -> bool:
    if not problem.metric.constant:
        return False
    a = problem.metric.a(np.zeros((1, problem.dimension)))[0]
    return bool(np.allclose(a, np.eye(problem.dimension), rtol=0, atol=0))
