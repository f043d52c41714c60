"""Potentials, volatility fields, reference geometry and admissibility checks.

Point arguments follow one convention throughout the package: a single point
is an array of shape ``(n,)`` and a batch is ``(m, n)``.  Vectorized closures
always receive batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

ScalarFn = Callable[[np.ndarray], np.ndarray]
VectorFn = Callable[[np.ndarray], np.ndarray]
MatrixFn = Callable[[np.ndarray], np.ndarray]

FD_REL_STEP = 1e-4


class ModelError(ValueError):
    """A model component produced invalid values."""


def as_batch(x, dimension: int | None = None) -> np.ndarray:
    """Return ``x`` as a float array of shape ``(m, n)``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if dimension is None or arr.size == dimension else arr.reshape(-1, 1)
    if dimension is not None and arr.shape[1] != dimension:
        raise ModelError(f"expected points of dimension {dimension}, got shape {arr.shape}")
    return arr


def _fd_steps(x: np.ndarray) -> np.ndarray:
    return FD_REL_STEP * (1.0 + np.abs(x))


@dataclass(frozen=True)
class PotentialSpec:
    """Potential ``V`` with analytic gradient.

    ``value`` maps ``(m, n) -> (m,)`` and ``gradient`` maps ``(m, n) -> (m, n)``.
    """

    name: str
    value: ScalarFn
    gradient: VectorFn
    params: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        return self.value(as_batch(x))

    def grad(self, x) -> np.ndarray:
        return self.gradient(as_batch(x))

    def fd_gradient(self, x) -> np.ndarray:
        x = as_batch(x)
        out = np.empty_like(x)
        h = _fd_steps(x)
        for d in range(x.shape[1]):
            e = np.zeros_like(x)
            e[:, d] = h[:, d]
            out[:, d] = (self.value(x + e) - self.value(x - e)) / (2.0 * h[:, d])
        return out


@dataclass(frozen=True)
class SpdMatrixField:
    """Matrix field ``x -> Sigma(x)`` with divergence ``(div Sigma)_i = sum_j d_j Sigma_ij``.

    Parameters
    ----------
    name : str
    value : callable
        Maps ``(m, n)`` points to ``(m, n, n)`` matrices.
    divergence : callable, optional
        Analytic divergence ``(m, n) -> (m, n)``.  Central differences with
        step ``1e-4 * (1 + |x|)`` are used when omitted.
    bounds : (float, float), optional
        Declared ellipticity constants ``(c, C)``.
    constant : bool
        True when the field does not depend on ``x``.
    """

    name: str
    value: MatrixFn
    divergence: VectorFn | None = None
    bounds: tuple[float, float] | None = None
    constant: bool = False
    params: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        return self.value(as_batch(x))

    def div(self, x) -> np.ndarray:
        x = as_batch(x)
        if self.divergence is not None:
            return self.divergence(x)
        return self.fd_divergence(x)

    def fd_divergence(self, x) -> np.ndarray:
        x = as_batch(x)
        out = np.zeros_like(x)
        h = _fd_steps(x)
        for j in range(x.shape[1]):
            e = np.zeros_like(x)
            e[:, j] = h[:, j]
            dcol = (self.value(x + e)[:, :, j] - self.value(x - e)[:, :, j]) / (2.0 * h[:, j:j + 1])
            out += dcol
        return out

    def measured_bounds(self, x) -> tuple[float, float]:
        eig = np.linalg.eigvalsh(_sym(self.value(as_batch(x))))
        return float(eig.min()), float(eig.max())


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


@dataclass(frozen=True)
class MetricSpec:
    """Reference geometry: ``A`` and the metric tensor ``G = A^{-1}``."""

    a_field: SpdMatrixField

    @property
    def bounds(self) -> tuple[float, float] | None:
        return self.a_field.bounds

    @property
    def constant(self) -> bool:
        return self.a_field.constant

    def a(self, x) -> np.ndarray:
        return self.a_field(x)

    def g(self, x) -> np.ndarray:
        return np.linalg.inv(self.a_field(x))


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of Gaussians; ``covs`` has shape ``(k, n, n)``."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        mu = np.asarray(self.means, dtype=np.float64)
        cov = np.asarray(self.covs, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu.reshape(-1, 1)
        k, n = mu.shape
        if cov.ndim == 1:
            cov = cov.reshape(k, 1, 1) if n == 1 else np.stack([np.diag(cov)] * k)
        elif cov.ndim == 2:
            cov = np.stack([np.diag(c) for c in cov]) if cov.shape == (k, n) else cov.reshape(1, n, n).repeat(k, 0)
        if w.size != k or cov.shape != (k, n, n):
            raise ModelError("inconsistent mixture parameters")
        if np.any(w <= 0):
            raise ModelError("mixture weights must be positive")
        if np.any(np.linalg.eigvalsh(_sym(cov)) <= 0):
            raise ModelError("mixture covariances must be positive definite")
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cov)

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    def pdf(self, x) -> np.ndarray:
        x = as_batch(x, self.dimension)
        out = np.zeros(x.shape[0])
        for w, m, c in zip(self.weights, self.means, self.covs):
            d = x - m
            ci = np.linalg.inv(c)
            quad = np.einsum("ki,ij,kj->k", d, ci, d)
            norm = math.sqrt((2 * math.pi) ** self.dimension * np.linalg.det(c))
            out += w * np.exp(-0.5 * quad) / norm
        return out

    def sample(self, seed: int, particles: np.ndarray) -> np.ndarray:
        """Draw one point per particle index from counter-based streams."""
        from . import rng

        particles = np.asarray(particles, dtype=np.int64)
        n = self.dimension
        z = rng.normals(seed, rng.STREAM_INIT, 0, particles, n)
        if self.weights.size == 1:
            comp = np.zeros(particles.size, dtype=np.int64)
        else:
            u = rng.uniforms(seed, rng.STREAM_INIT, 1, particles)[:, 0]
            comp = np.minimum(np.searchsorted(np.cumsum(self.weights), u), self.weights.size - 1)
        chol = np.linalg.cholesky(self.covs)
        return self.means[comp] + np.einsum("kij,kj->ki", chol[comp], z)

    def second_moment(self) -> float:
        return float(sum(w * (m @ m + np.trace(c)) for w, m, c in zip(self.weights, self.means, self.covs)))


@dataclass(frozen=True)
class GridLaw:
    """Initial law given as nonnegative values on a uniform grid.

    ``axes`` is a tuple of 1-D node arrays; values are interpolated linearly.
    """

    axes: tuple
    values: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.axes)

    def pdf(self, x) -> np.ndarray:
        from scipy.interpolate import RegularGridInterpolator

        x = as_batch(x, self.dimension)
        interp = RegularGridInterpolator(self.axes, self.values, bounds_error=False, fill_value=0.0)
        return interp(x)

    def sample(self, seed: int, particles: np.ndarray) -> np.ndarray:
        from . import rng

        particles = np.asarray(particles, dtype=np.int64)
        spacing = np.array([a[1] - a[0] for a in self.axes])
        cell_mass = self.values.ravel() / self.values.sum()
        u = rng.uniforms(seed, rng.STREAM_INIT, 0, particles)
        idx = np.minimum(np.searchsorted(np.cumsum(cell_mass), u[:, 0]), cell_mass.size - 1)
        nodes = np.stack(np.unravel_index(idx, self.values.shape), axis=-1)
        jitter = rng.uniforms(seed, rng.STREAM_INIT, 1, particles)[:, :self.dimension] - 0.5
        pts = np.stack([self.axes[d][nodes[:, d]] for d in range(self.dimension)], axis=-1)
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        return np.clip(pts + jitter * spacing, lo, hi)


InitialLaw = GaussianMixture | GridLaw


@dataclass(frozen=True)
class DiffusionProblem:
    """The data ``(V, Sigma, A, T, P_0)`` on a truncated box."""

    potential: PotentialSpec
    sigma: SpdMatrixField
    metric: MetricSpec
    horizon: float
    dimension: int
    initial_law: InitialLaw
    domain_box: tuple[tuple[float, float], ...]
    name: str = "problem"

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ModelError(f"dimension must be 1 or 2, got {self.dimension}")
        if not self.horizon > 0:
            raise ModelError("horizon must be positive")
        box = tuple((float(lo), float(hi)) for lo, hi in self.domain_box)
        if len(box) != self.dimension or any(hi <= lo for lo, hi in box):
            raise ModelError(f"invalid domain box {self.domain_box}")
        object.__setattr__(self, "domain_box", box)
        if self.initial_law.dimension != self.dimension:
            raise ModelError("initial law dimension does not match problem")

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.domain_box])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.domain_box])

    def describe(self) -> dict:
        """Plain-data description used for report digests."""
        law = self.initial_law
        if isinstance(law, GaussianMixture):
            law_desc = {"kind": "gaussian_mixture", "weights": law.weights.tolist(),
                        "means": law.means.tolist(), "covs": law.covs.tolist()}
        else:
            law_desc = {"kind": "grid", "shape": list(law.values.shape),
                        "checksum": float(np.sum(law.values))}
        return {
            "name": self.name,
            "potential": {"name": self.potential.name, **self.potential.params},
            "sigma": {"name": self.sigma.name, **self.sigma.params},
            "metric": {"name": self.metric.a_field.name, **self.metric.a_field.params},
            "horizon": self.horizon,
            "dimension": self.dimension,
            "initial_law": law_desc,
            "domain_box": [list(b) for b in self.domain_box],
        }


def drift(problem: DiffusionProblem, x) -> np.ndarray:
    """Drift ``div Sigma(x) - Sigma(x) grad V(x)``; returns ``(m, n)``."""
    x = as_batch(x, problem.dimension)
    div = problem.sigma.div(x)
    if not np.all(np.isfinite(div)):
        raise ModelError(f"sigma divergence '{problem.sigma.name}' is not finite")
    gv = problem.potential.grad(x)
    if not np.all(np.isfinite(gv)):
        raise ModelError(f"potential gradient '{problem.potential.name}' is not finite")
    s = problem.sigma(x)
    if not np.all(np.isfinite(s)):
        raise ModelError(f"sigma '{problem.sigma.name}' is not finite")
    return div - np.einsum("kij,kj->ki", s, gv)


def invariant_density(problem: DiffusionProblem, x) -> np.ndarray:
    """Unnormalized invariant density ``q = exp(-V)``."""
    return np.exp(-problem.potential(as_batch(x, problem.dimension)))


def suggest_box(law: GaussianMixture, upper_ellipticity: float, horizon: float,
                tail_mass: float = 1e-8) -> tuple[tuple[float, float], ...]:
    """Box whose complement carries less than ``tail_mass`` under a Gaussian-tail bound.

    The spread at time ``T`` is bounded by the initial variance plus
    ``2 C T`` per axis; drift towards the origin only helps.
    """
    from scipy.stats import norm

    n = law.dimension
    z = norm.isf(tail_mass / (2 * n))
    box = []
    for d in range(n):
        sd = math.sqrt(float(np.max(law.covs[:, d, d])) + 2.0 * upper_ellipticity * horizon)
        lo = float(np.min(law.means[:, d])) - z * sd
        hi = float(np.max(law.means[:, d])) + z * sd
        box.append((lo, hi))
    return tuple(box)


# ---------------------------------------------------------------------------
# Admissibility


@dataclass(frozen=True)
class ConditionResult:
    index: str
    name: str
    status: str  # "pass", "fail" or "assumed"
    detail: str = ""
    witness: tuple | None = None


@dataclass(frozen=True)
class AdmissibilityReport:
    conditions: tuple[ConditionResult, ...]
    measured_bounds: tuple[float, float]
    metric_bounds: tuple[float, float]

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.conditions)

    @property
    def failures(self) -> list[ConditionResult]:
        return [c for c in self.conditions if c.status == "fail"]

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "measured_bounds": list(self.measured_bounds),
            "metric_bounds": list(self.metric_bounds),
            "conditions": [
                {"index": c.index, "name": c.name, "status": c.status, "detail": c.detail,
                 "witness": None if c.witness is None else list(c.witness)}
                for c in self.conditions
            ],
        }


def _probe_points(problem: DiffusionProblem, count: int, seed: int) -> np.ndarray:
    n = problem.dimension
    lo, hi = problem.lower, problem.upper
    m = max(1, math.ceil(math.log2(count)))
    sob = qmc.Sobol(d=n, scramble=True, seed=seed).random_base2(m)[:count]
    pts = qmc.scale(sob, lo, hi)
    # Deterministic probes: the centre, the origin if inside, and axis lines through it.
    extra = [0.5 * (lo + hi)]
    if np.all(lo <= 0) and np.all(hi >= 0):
        extra.append(np.zeros(n))
        for d in range(n):
            line = np.zeros((17, n))
            line[:, d] = np.linspace(lo[d], hi[d], 17)
            extra.extend(line)
    return np.vstack([pts, np.asarray(extra)])


def _directions(count: int, n: int, seed: int) -> np.ndarray:
    if n == 1:
        return np.ones((count, 1))
    m = max(1, math.ceil(math.log2(count)))
    theta = 2 * np.pi * qmc.Sobol(d=1, scramble=True, seed=seed + 1).random_base2(m)[:count, 0]
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def _field_checks(fld: SpdMatrixField, x: np.ndarray, xi: np.ndarray, label: str,
                  prefix: str) -> tuple[list[ConditionResult], tuple[float, float]]:
    out = []
    m = fld.value(x)
    if not np.all(np.isfinite(m)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(m.reshape(len(x), -1)), axis=1))[0])
        out.append(ConditionResult(f"{prefix}i", f"{label} symmetric positive definite", "fail",
                                   "non-finite entries", tuple(x[bad])))
        return out, (float("nan"), float("nan"))
    asym = np.max(np.abs(m - np.swapaxes(m, 1, 2)), axis=(1, 2))
    eig = np.linalg.eigvalsh(_sym(m))
    lam_min, lam_max = eig[:, 0], eig[:, -1]
    k_asym = int(np.argmax(asym))
    k_min = int(np.argmin(lam_min))
    if asym[k_asym] > 1e-12 or lam_min[k_min] <= 0:
        k = k_asym if asym[k_asym] > 1e-12 else k_min
        out.append(ConditionResult(f"{prefix}i", f"{label} symmetric positive definite", "fail",
                                   f"asymmetry {asym[k]:.3e}, smallest eigenvalue {lam_min[k]:.3e}",
                                   tuple(x[k])))
    else:
        out.append(ConditionResult(f"{prefix}i", f"{label} symmetric positive definite", "pass"))

    # Smoothness proxy: analytic divergence against central differences.
    if fld.divergence is not None:
        ana = fld.divergence(x)
        num = fld.fd_divergence(x)
        err = np.abs(ana - num) / np.maximum(1.0, np.abs(num))
        k = int(np.unravel_index(np.argmax(err), err.shape)[0])
        status = "pass" if err.max() <= 1e-5 else "fail"
        out.append(ConditionResult(f"{prefix}ii", f"{label} divergence consistent with differences",
                                   status, f"max error {err.max():.3e}",
                                   None if status == "pass" else tuple(x[k])))
    else:
        out.append(ConditionResult(f"{prefix}ii", f"{label} smoothness", "assumed",
                                   "divergence by finite differences"))

    quad = np.einsum("ki,kij,kj->k", xi, m, xi) / np.einsum("ki,ki->k", xi, xi)
    measured = (float(min(lam_min.min(), quad.min())), float(max(lam_max.max(), quad.max())))
    if fld.bounds is not None:
        c, C = fld.bounds
        tol = 1e-12 * max(1.0, C)
        lo_bad = np.flatnonzero(np.minimum(lam_min, quad) < c - tol)
        hi_bad = np.flatnonzero(np.maximum(lam_max, quad) > C + tol)
        if c <= 0 or lo_bad.size or hi_bad.size:
            k = int(lo_bad[0]) if lo_bad.size else (int(hi_bad[0]) if hi_bad.size else 0)
            out.append(ConditionResult(f"{prefix}iii", f"{label} uniform ellipticity", "fail",
                                       f"declared ({c}, {C}), measured {measured}", tuple(x[k])))
        else:
            out.append(ConditionResult(f"{prefix}iii", f"{label} uniform ellipticity", "pass",
                                       f"declared ({c}, {C}), measured {measured}"))
    else:
        k = int(np.argmin(lam_min))
        ok = measured[0] > 1e-8 * max(1.0, measured[1])
        out.append(ConditionResult(f"{prefix}iii", f"{label} uniform ellipticity",
                                   "pass" if ok else "fail", f"measured {measured}",
                                   None if ok else tuple(x[k])))
    return out, measured


def check_admissibility(problem: DiffusionProblem, sample_count: int = 512,
                        rng_seed: int = 0) -> AdmissibilityReport:
    """Test the numerically checkable admissibility conditions.

    Conditions (i)-(iii) are probed on quasi-random points of the box, (vii)
    by grid quadrature of the initial relative entropy.  The existence
    statements (iv)-(vi) are recorded as assumed.
    """
    if sample_count < 100:
        raise ValueError("sample_count must be at least 100")
    x = _probe_points(problem, sample_count, rng_seed)
    xi = _directions(x.shape[0], problem.dimension, rng_seed)
    conds, measured = _field_checks(problem.sigma, x, xi, "sigma", "")
    a_conds, a_measured = _field_checks(problem.metric.a_field, x, xi, "A", "A-")
    conds += a_conds

    # Ellipticity transfer to G = A^{-1}.
    g = problem.metric.g(x)
    a = problem.metric.a(x)
    ident = np.max(np.abs(np.einsum("kij,kjl->kil", g, a) - np.eye(problem.dimension)))
    g_eig = np.linalg.eigvalsh(_sym(g))
    if np.isfinite(a_measured[0]) and a_measured[0] > 0:
        lo_ok = g_eig.min() >= (1 / a_measured[1]) * (1 - 1e-10)
        hi_ok = g_eig.max() <= (1 / a_measured[0]) * (1 + 1e-10)
        ok = ident <= 1e-10 and lo_ok and hi_ok
        conds.append(ConditionResult("G", "metric tensor bounds", "pass" if ok else "fail",
                                     f"|GA - I| = {ident:.2e}, eig(G) in [{g_eig.min():.4g}, {g_eig.max():.4g}]"))
    else:
        conds.append(ConditionResult("G", "metric tensor bounds", "fail", "A is not positive definite"))

    # Potential gradient against differences.
    gp = problem.potential.grad(x)
    fd = problem.potential.fd_gradient(x)
    err = np.abs(gp - fd) / np.maximum(1.0, np.abs(fd))
    status = "pass" if err.max() <= 1e-5 else "fail"
    k = int(np.unravel_index(np.argmax(err), err.shape)[0])
    conds.append(ConditionResult("V", "potential gradient consistent with differences", status,
                                 f"max error {err.max():.3e}", None if status == "pass" else tuple(x[k])))

    conds.append(ConditionResult("iv", "strong solution exists", "assumed"))
    conds.append(ConditionResult("v", "classical density solution exists", "assumed"))
    conds.append(ConditionResult("vi", "absolutely continuous Wasserstein curve", "assumed"))

    conds.append(_initial_entropy_condition(problem))
    conds.append(_integrability_condition(problem))
    return AdmissibilityReport(tuple(conds), measured, a_measured)


def _quadrature_nodes(problem: DiffusionProblem, per_axis: int):
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in problem.domain_box]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    w = np.ones(per_axis)
    w[0] = w[-1] = 0.5
    weights = w
    for d in range(1, problem.dimension):
        weights = np.multiply.outer(weights, w)
    cell = np.prod([(hi - lo) / (per_axis - 1) for lo, hi in problem.domain_box])
    return pts, weights.ravel() * cell


def _initial_entropy_condition(problem: DiffusionProblem) -> ConditionResult:
    per_axis = 1025 if problem.dimension == 1 else 257
    pts, w = _quadrature_nodes(problem, per_axis)
    p = problem.initial_law.pdf(pts)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        k = int(np.flatnonzero((p < 0) | ~np.isfinite(p))[0])
        return ConditionResult("vii", "finite initial relative entropy", "fail",
                               "initial density invalid", tuple(pts[k]))
    v = problem.potential(pts)
    pos = p > 0
    integrand = np.zeros_like(p)
    integrand[pos] = p[pos] * (np.log(p[pos]) + v[pos])
    h0 = float(np.sum(w * integrand))
    mass = float(np.sum(w * p))
    ok = np.isfinite(h0) and abs(mass - 1) < 1e-3
    return ConditionResult("vii", "finite initial relative entropy", "pass" if ok else "fail",
                           f"H(P0|Q) = {h0:.6g}, box mass {mass:.8f}")


def _integrability_condition(problem: DiffusionProblem) -> ConditionResult:
    per_axis = 1025 if problem.dimension == 1 else 257
    pts, w = _quadrature_nodes(problem, per_axis)
    val = float(np.sum(w * np.exp(-np.sum(pts**2, axis=1) - problem.potential(pts))))
    ok = np.isfinite(val)
    return ConditionResult("1.5", "integrability of exp(-|x|^2 - V)", "pass" if ok else "fail",
                           f"box integral {val:.6g}")


# ---------------------------------------------------------------------------
# Built-in registry


def _zero(n: int) -> PotentialSpec:
    return PotentialSpec("zero", lambda x: np.zeros(x.shape[0]), lambda x: np.zeros_like(x))


def _quadratic(n: int, kappa: float = 1.0) -> PotentialSpec:
    kappa = float(kappa)
    return PotentialSpec("quadratic", lambda x: 0.5 * kappa * np.sum(x * x, axis=1),
                         lambda x: kappa * x, {"kappa": kappa})


def _double_well(n: int, a: float = 1.0, b: float = 1.0) -> PotentialSpec:
    a, b = float(a), float(b)
    return PotentialSpec("double_well", lambda x: a * np.sum((x * x - b) ** 2, axis=1),
                         lambda x: 4.0 * a * x * (x * x - b), {"a": a, "b": b})


def _scaled_identity(n: int, s: Callable, ds: Callable, name: str, bounds, params) -> SpdMatrixField:
    eye = np.eye(n)

    def value(x):
        return s(x)[:, None, None] * eye

    return SpdMatrixField(name, value, ds, bounds, False, params)


def _identity(n: int, scale: float = 1.0) -> SpdMatrixField:
    scale = float(scale)
    eye = np.eye(n) * scale
    return SpdMatrixField("identity", lambda x: np.broadcast_to(eye, (x.shape[0], n, n)).copy(),
                          lambda x: np.zeros_like(x), (scale, scale), True, {"scale": scale})


def _diagonal(n: int, values: Sequence[float] = (1.0,)) -> SpdMatrixField:
    vals = np.broadcast_to(np.asarray(values, dtype=np.float64), (n,)).copy()
    mat = np.diag(vals)
    return SpdMatrixField("diagonal", lambda x: np.broadcast_to(mat, (x.shape[0], n, n)).copy(),
                          lambda x: np.zeros_like(x), (float(vals.min()), float(vals.max())), True,
                          {"values": vals.tolist()})


def _scalar_sine(n: int, base: float = 2.0, amp: float = 1.0, freq: float = 1.0) -> SpdMatrixField:
    base, amp, freq = float(base), float(amp), float(freq)

    def s(x):
        return base + amp * np.sin(freq * x[:, 0])

    def ds(x):
        out = np.zeros_like(x)
        out[:, 0] = amp * freq * np.cos(freq * x[:, 0])
        return out

    return _scaled_identity(n, s, ds, "scalar_sine", (base - abs(amp), base + abs(amp)),
                            {"base": base, "amp": amp, "freq": freq})


def _diag_trig(n: int, base: float = 2.0, amp: float = 1.0) -> SpdMatrixField:
    base, amp = float(base), float(amp)

    def value(x):
        out = np.zeros((x.shape[0], n, n))
        out[:, 0, 0] = base + amp * np.sin(x[:, 0])
        if n == 2:
            out[:, 1, 1] = base + amp * np.cos(x[:, 1])
        return out

    def divergence(x):
        out = np.zeros_like(x)
        out[:, 0] = amp * np.cos(x[:, 0])
        if n == 2:
            out[:, 1] = -amp * np.sin(x[:, 1])
        return out

    return SpdMatrixField("diag_trig", value, divergence, (base - abs(amp), base + abs(amp)), False,
                          {"base": base, "amp": amp})


def _gaussian_bump(n: int, base: float = 1.0, amp: float = 1.0, width: float = 1.0) -> SpdMatrixField:
    base, amp, width = float(base), float(amp), float(width)

    def s(x):
        return base + amp * np.exp(-0.5 * np.sum(x * x, axis=1) / width**2)

    def ds(x):
        e = np.exp(-0.5 * np.sum(x * x, axis=1) / width**2)
        return -(amp / width**2) * e[:, None] * x

    bounds = (min(base, base + amp), max(base, base + amp))
    return _scaled_identity(n, s, ds, "gaussian_bump", bounds,
                            {"base": base, "amp": amp, "width": width})


@dataclass
class Registry:
    """Named factories ``(dimension, **params) -> component``."""

    potentials: dict[str, Callable] = field(default_factory=dict)
    volatilities: dict[str, Callable] = field(default_factory=dict)

    def register_potential(self, name: str, factory: Callable) -> None:
        if name in self.potentials:
            raise KeyError(f"potential '{name}' already registered")
        self.potentials[name] = factory

    def register_volatility(self, name: str, factory: Callable) -> None:
        if name in self.volatilities:
            raise KeyError(f"volatility '{name}' already registered")
        self.volatilities[name] = factory

    def potential(self, name: str, dimension: int, **params) -> PotentialSpec:
        try:
            factory = self.potentials[name]
        except KeyError:
            raise KeyError(f"unknown potential '{name}'; known: {sorted(self.potentials)}") from None
        return factory(dimension, **params)

    def volatility(self, name: str, dimension: int, **params) -> SpdMatrixField:
        try:
            factory = self.volatilities[name]
        except KeyError:
            raise KeyError(f"unknown volatility '{name}'; known: {sorted(self.volatilities)}") from None
        return factory(dimension, **params)

    def listing(self) -> list[tuple[str, str, list[str]]]:
        import inspect

        rows = []
        for kind, table in (("potential", self.potentials), ("volatility", self.volatilities)):
            for name in sorted(table):
                sig = inspect.signature(table[name])
                params = [p.name if p.default is inspect.Parameter.empty else f"{p.name}={p.default!r}"
                          for p in list(sig.parameters.values())[1:]]
                rows.append((kind, name, params))
        return rows


def default_registry() -> Registry:
    reg = Registry()
    reg.register_potential("zero", _zero)
    reg.register_potential("quadratic", _quadratic)
    reg.register_potential("double_well", _double_well)
    reg.register_volatility("identity", _identity)
    reg.register_volatility("scalar_sine", _scalar_sine)
    reg.register_volatility("diag_trig", _diag_trig)
    reg.register_volatility("gaussian_bump", _gaussian_bump)
    reg.register_volatility("diagonal", _diagonal)
    return reg


def potential(name: str, dimension: int = 1, **params) -> PotentialSpec:
    return default_registry().potential(name, dimension, **params)


def volatility(name: str, dimension: int = 1, **params) -> SpdMatrixField:
    return default_registry().volatility(name, dimension, **params)


def gaussian(mean, var) -> GaussianMixture:
    """Single Gaussian; ``var`` is a variance (1-D) or covariance matrix."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.asarray(var, dtype=np.float64)
    if cov.ndim == 0:
        cov = cov * np.eye(mean.size)
    return GaussianMixture(np.ones(1), mean.reshape(1, -1), cov.reshape(1, mean.size, mean.size))
