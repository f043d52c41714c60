"""Finite-volume solver for the forward equation and likelihood-ratio fields.

The forward equation is written as ``d_t p = div(Sigma q grad(p / q))`` with
``q = exp(-V)``.  Nodes carry trapezoid control volumes, faces carry the
harmonic mean of ``Sigma_dd q`` from the two adjacent nodes.  With this
choice the discrete operator annihilates ``q`` exactly, and the trapezoid mass
is conserved by telescoping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .model import DiffusionProblem, ModelError, drift

MIN_NODES = 64
NEGATIVE_TOL = 1e-12


class FPInstabilityError(RuntimeError):
    """The explicit step produced negative densities."""


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid including the box end points."""

    axes: tuple[np.ndarray, ...]

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        for a in axes:
            if a.ndim != 1 or a.size < MIN_NODES:
                raise ValueError(f"each axis needs at least {MIN_NODES} nodes")
            d = np.diff(a)
            if np.any(d <= 0) or np.ptp(d) > 1e-9 * d[0]:
                raise ValueError("grid axes must be uniform and increasing")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def uniform(cls, box, nodes) -> "Grid":
        if np.isscalar(nodes):
            nodes = [int(nodes)] * len(box)
        return cls(tuple(np.linspace(lo, hi, int(k)) for (lo, hi), k in zip(box, nodes)))

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([a[1] - a[0] for a in self.axes])

    @property
    def lower(self) -> np.ndarray:
        return np.array([a[0] for a in self.axes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([a[-1] for a in self.axes])

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates as an ``(M, n)`` batch in C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def axis_weights(self, d: int) -> np.ndarray:
        w = np.full(self.shape[d], self.spacing[d])
        w[0] = w[-1] = 0.5 * self.spacing[d]
        return w

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid (control volume) weights with the grid shape."""
        w = self.axis_weights(0)
        for d in range(1, self.dimension):
            w = np.multiply.outer(w, self.axis_weights(d))
        return w

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values))

    def same_as(self, other: "Grid") -> bool:
        return self.shape == other.shape and all(
            np.array_equal(a, b) for a, b in zip(self.axes, other.axes))

    def describe(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "shape": list(self.shape)}


@dataclass(frozen=True)
class DensityField:
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise GridMismatchError(f"values {self.values.shape} do not match grid {self.grid.shape}")

    @property
    def mass(self) -> float:
        return self.grid.integrate(self.values)

    def moment(self, k: int = 2, axis: int = 0) -> float:
        x = self.grid.points[:, axis].reshape(self.grid.shape)
        return self.grid.integrate(self.values * x**k) / self.mass

    def variance(self, axis: int = 0) -> float:
        m1 = self.moment(1, axis)
        return self.moment(2, axis) - m1 * m1


@dataclass(frozen=True)
class DensityPath:
    """Density slices at increasing times."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray  # (K, *grid.shape)
    dt: float = float("nan")

    def __len__(self) -> int:
        return len(self.times)

    def index(self, t: float, tol: float = 1e-10) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"no stored slice at t={t}")
        return k

    def field(self, k: int) -> DensityField:
        return DensityField(self.grid, self.values[k], float(self.times[k]))

    def at(self, t: float) -> DensityField:
        return self.field(self.index(t))

    def __iter__(self):
        return (self.field(k) for k in range(len(self)))


def initial_density(problem: DiffusionProblem, grid: Grid) -> DensityField:
    """Initial law sampled on the grid and renormalized to unit trapezoid mass."""
    p = problem.initial_law.pdf(grid.points).reshape(grid.shape)
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise ModelError("initial density has negative or non-finite values")
    return DensityField(grid, p / grid.integrate(p), 0.0)


def _sl(n: int, axis: int, s: slice) -> tuple:
    idx = [slice(None)] * n
    idx[axis] = s
    return tuple(idx)


class FokkerPlanckSolver:
    """Explicit conservative stepper for one problem on one grid.

    Parameters
    ----------
    problem : DiffusionProblem
    grid : Grid
    cfl : float
        Fraction of the stability limit used for the default time step.
    """

    def __init__(self, problem: DiffusionProblem, grid: Grid, cfl: float = 0.9):
        if grid.dimension != problem.dimension:
            raise GridMismatchError("grid and problem dimensions differ")
        self.problem = problem
        self.grid = grid
        n = grid.dimension
        pts = grid.points
        self.V = problem.potential(pts).reshape(grid.shape)
        sig = problem.sigma(pts)
        if not np.all(np.isfinite(sig)) or not np.all(np.isfinite(self.V)):
            raise ModelError("non-finite potential or volatility on the grid")
        self.sigma = sig.reshape(grid.shape + (n, n))
        h = grid.spacing
        self._alpha = []
        self._beta = []
        self._inv_w = []
        rate = np.zeros(grid.shape)
        for d in range(n):
            s = self.sigma[..., d, d]
            lo, hi = _sl(n, d, slice(None, -1)), _sl(n, d, slice(1, None))
            dv = np.clip(self.V[hi] - self.V[lo], -700.0, 700.0)
            num = 2.0 * s[lo] * s[hi]
            alpha = num / (s[lo] + s[hi] * np.exp(-dv)) / h[d]
            beta = num / (s[lo] * np.exp(dv) + s[hi]) / h[d]
            shape = [1] * n
            shape[d] = grid.shape[d]
            inv_w = (1.0 / grid.axis_weights(d)).reshape(shape)
            self._alpha.append(alpha)
            self._beta.append(beta)
            self._inv_w.append(inv_w)
            r = np.zeros(grid.shape)
            r[lo] += beta
            r[hi] += alpha
            rate += r * inv_w
        self._cross = n == 2 and np.max(np.abs(self.sigma[..., 0, 1])) > 0
        if self._cross:
            self._s01 = self.sigma[..., 0, 1]
            self._eV = {}
            for d in range(2):
                lo, hi = _sl(2, d, slice(None, -1)), _sl(2, d, slice(1, None))
                # exp(V_neighbour - V_node) for forward and backward neighbours
                fwd = np.zeros(grid.shape)
                bwd = np.zeros(grid.shape)
                fwd[lo] = np.exp(np.clip(self.V[hi] - self.V[lo], -700, 700))
                bwd[hi] = np.exp(np.clip(self.V[lo] - self.V[hi], -700, 700))
                self._eV[d] = (fwd, bwd)
        upper = float(np.max(np.linalg.eigvalsh(self.sigma.reshape(-1, n, n))))
        self.upper_ellipticity = upper
        self.stability_limit = min(float(np.min(h**2)) / (2.0 * upper * n), 1.0 / float(rate.max()))
        self.dt = cfl * self.stability_limit

    def rhs(self, p: np.ndarray) -> np.ndarray:
        n = self.grid.dimension
        out = np.zeros_like(p)
        for d in range(n):
            lo, hi = _sl(n, d, slice(None, -1)), _sl(n, d, slice(1, None))
            flux = self._alpha[d] * p[hi] - self._beta[d] * p[lo]
            div = np.zeros_like(p)
            div[lo] += flux
            div[hi] -= flux
            out += div * self._inv_w[d]
        if self._cross:
            out += self._cross_rhs(p)
        return out

    def _cross_rhs(self, p: np.ndarray) -> np.ndarray:
        h = self.grid.spacing
        out = np.zeros_like(p)
        for d, e in ((0, 1), (1, 0)):
            # Node values of Sigma_de q d_e l, central in e, zero on e-boundaries.
            fwd, bwd = self._eV[e]
            c = np.zeros_like(p)
            mid = _sl(2, e, slice(1, -1))
            up = _sl(2, e, slice(2, None))
            dn = _sl(2, e, slice(None, -2))
            c[mid] = (p[up] * fwd[mid] - p[dn] * bwd[mid]) / (2.0 * h[e])
            c *= self._s01
            lo, hi = _sl(2, d, slice(None, -1)), _sl(2, d, slice(1, None))
            face = 0.5 * (c[lo] + c[hi])
            div = np.zeros_like(p)
            div[lo] += face
            div[hi] -= face
            out += div * self._inv_w[d] / h[d]
        return out

    def step(self, p: np.ndarray, dt: float) -> np.ndarray:
        if dt > self.stability_limit * (1 + 1e-12):
            raise FPInstabilityError(
                f"dt={dt:.3e} exceeds the explicit stability limit {self.stability_limit:.3e}")
        new = p + dt * self.rhs(p)
        low = new.min()
        if low < -NEGATIVE_TOL:
            k = np.unravel_index(np.argmin(new), new.shape)
            raise FPInstabilityError(
                f"negative density {low:.3e} at node {k}; dt={dt:.3e}, "
                f"CFL limit {self.stability_limit:.3e}")
        return new

    def solve(self, p0: DensityField, times, dt: float | None = None) -> DensityPath:
        """Integrate from ``p0.time`` and store slices exactly at ``times``."""
        times = np.asarray(sorted(set(float(t) for t in times)))
        if times.size == 0 or times[0] < p0.time - 1e-14:
            raise ValueError("slice times must be >= the initial time")
        dt_max = self.dt if dt is None else float(dt)
        out = np.empty((times.size,) + self.grid.shape)
        p = p0.values.copy()
        t = p0.time
        for k, target in enumerate(times):
            span = target - t
            if span > 1e-15:
                steps = max(1, math.ceil(span / dt_max * (1 - 1e-12)))
                h = span / steps
                for _ in range(steps):
                    p = self.step(p, h)
            t = target
            out[k] = p
        return DensityPath(self.grid, times, out, dt_max)


def fp_step(density: DensityField, problem: DiffusionProblem, dt: float) -> DensityField:
    """One explicit conservative step of the forward equation."""
    solver = FokkerPlanckSolver(problem, density.grid)
    return DensityField(density.grid, solver.step(density.values, dt), density.time + dt)


# ---------------------------------------------------------------------------
# Likelihood ratio


def _interp_nodes(grid: Grid, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    if grid.dimension == 1:
        return np.interp(x[:, 0], grid.axes[0], values)
    from scipy.interpolate import RegularGridInterpolator

    f = RegularGridInterpolator(grid.axes, values, bounds_error=False, fill_value=None)
    return f(np.clip(x, grid.lower, grid.upper))


@dataclass(frozen=True)
class LikelihoodField:
    """``l = p exp(V)`` with ``grad log l`` on the grid."""

    grid: Grid
    log_values: np.ndarray
    gradient: np.ndarray  # (n, *grid.shape)
    density: np.ndarray
    time: float = 0.0

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    def reconstruct_density(self, potential_values: np.ndarray) -> np.ndarray:
        return self.values * np.exp(-potential_values)

    def log_at(self, x) -> np.ndarray:
        return _interp_nodes(self.grid, self.log_values, np.asarray(x, dtype=np.float64))

    def grad_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.stack([_interp_nodes(self.grid, g, x) for g in self.gradient], axis=-1)


def _log_likelihood(grid: Grid, p: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    bad = np.argwhere(~(p > 0))
    if bad.size:
        shown = [tuple(int(i) for i in b) for b in bad[:10]]
        raise ValueError(f"density not positive at {len(bad)} node(s), e.g. {shown}")
    logl = np.log(p) + V
    grads = np.gradient(logl, *grid.spacing, edge_order=1)
    if grid.dimension == 1:
        grads = [grads]
    return logl, np.stack(grads)


def likelihood_ratio(density: DensityField, problem: DiffusionProblem) -> LikelihoodField:
    """Likelihood ratio against ``q = exp(-V)`` with central-difference score."""
    V = problem.potential(density.grid.points).reshape(density.grid.shape)
    logl, grad = _log_likelihood(density.grid, density.values, V)
    return LikelihoodField(density.grid, logl, grad, density.values, density.time)


@dataclass(frozen=True)
class LikelihoodPath:
    grid: Grid
    times: np.ndarray
    log_values: np.ndarray  # (K, *shape)
    gradient: np.ndarray  # (K, n, *shape)
    density: np.ndarray  # (K, *shape)
    potential: np.ndarray  # (*shape)

    def __len__(self) -> int:
        return len(self.times)

    def field(self, k: int) -> LikelihoodField:
        return LikelihoodField(self.grid, self.log_values[k], self.gradient[k], self.density[k],
                               float(self.times[k]))

    def index(self, t: float, tol: float = 1e-10) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"no likelihood slice at t={t}")
        return k


def likelihood_path(path: DensityPath, problem: DiffusionProblem) -> LikelihoodPath:
    V = problem.potential(path.grid.points).reshape(path.grid.shape)
    logs = np.empty_like(path.values)
    grads = np.empty((len(path), path.grid.dimension) + path.grid.shape)
    for k in range(len(path)):
        logs[k], grads[k] = _log_likelihood(path.grid, path.values[k], V)
    return LikelihoodPath(path.grid, path.times.copy(), logs, grads, path.values, V)


def backward_residual(lik_path: LikelihoodPath, problem: DiffusionProblem) -> float:
    """Max-norm residual of the backward equation for the likelihood ratio.

    In forward time the equation reads
    ``d_t l = sum_ij Sigma_ij d_ij l + <div Sigma - Sigma grad V, grad l>``.
    It is discretized with centred differences in space and a three-point
    centred difference in time, then multiplied by ``q`` so the residual is
    measured in density units.  The maximum runs over interior nodes and
    interior slices.
    """
    K = len(lik_path)
    if K < 3:
        raise ValueError("backward residual needs at least 3 time slices")
    grid = lik_path.grid
    n = grid.dimension
    h = grid.spacing
    V = lik_path.potential
    pts = grid.points
    sig = problem.sigma(pts).reshape(grid.shape + (n, n))
    b = drift(problem, pts).reshape(grid.shape + (n,))
    inner = tuple(slice(1, -1) for _ in range(n))

    def shifted(p, offs):
        # q(x) * l(x + offs*h) = p(x + offs*h) * exp(V(x + offs*h) - V(x)) on interior nodes
        idx = tuple(slice(1 + o, p.shape[d] - 1 + o) for d, o in enumerate(offs))
        return p[idx] * np.exp(V[idx] - V[inner])

    worst = 0.0
    times = lik_path.times
    for k in range(1, K - 1):
        h1 = times[k] - times[k - 1]
        h2 = times[k + 1] - times[k]
        dp = (-h2 / (h1 * (h1 + h2)) * lik_path.density[k - 1]
              + (h2 - h1) / (h1 * h2) * lik_path.density[k]
              + h1 / (h2 * (h1 + h2)) * lik_path.density[k + 1])[inner]
        p = lik_path.density[k]
        pc = p[inner]
        gen = np.zeros_like(pc)
        for i in range(n):
            e = [0] * n
            e[i] = 1
            plus = shifted(p, e)
            minus = shifted(p, [-v for v in e])
            gen += sig[inner + (i, i)] * (plus - 2.0 * pc + minus) / h[i] ** 2
            gen += b[inner + (i,)] * (plus - minus) / (2.0 * h[i])
        if n == 2:
            mixed = (shifted(p, (1, 1)) - shifted(p, (1, -1)) - shifted(p, (-1, 1))
                     + shifted(p, (-1, -1))) / (4.0 * h[0] * h[1])
            gen += (sig[inner + (0, 1)] + sig[inner + (1, 0)]) * mixed
        worst = max(worst, float(np.max(np.abs(dp - gen))))
    return worst
