"""Executable checks of the entropy, energy, martingale and reversal identities.

Every checker returns an :class:`IdentityReport`.  A report may bundle
several sub-tests ("parts"); its residual is then the largest ratio
``part.residual / part.tol`` and its tolerance is 1, so the verdict is
``pass`` exactly when every part passes.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.stats import energy_distance

from . import rng
from .fokker_planck import (DensityPath, FokkerPlanckSolver, Grid, backward_residual, initial_density,
                            likelihood_path, likelihood_ratio)
from .functionals import cumulative_fisher, fisher_integrand, flow_series
from .model import DiffusionProblem, GaussianMixture
from .sde import ParticleEnsemble, StepConfig, grid_score, initial_ensemble, run
from .wasserstein import metric_derivative, metric_derivative_fd

ATOL = 1e-8
GRID_TOL = 1e-3
ENERGY_TOL = 2e-3
FD_TOL = 0.05
MC_SIGMAS = 3.0


@dataclass(frozen=True)
class Part:
    name: str
    residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tol)

    def as_dict(self) -> dict:
        return {"name": self.name, "residual": self.residual, "tol": self.tol,
                "verdict": "pass" if self.passed else "fail"}


@dataclass(frozen=True)
class IdentityReport:
    name: str
    lhs: float
    rhs: float | dict
    residual_abs: float
    residual_rel: float
    residual: float
    tolerance: float
    verdict: str
    inputs_digest: str
    inputs: dict
    details: dict
    runtime_seconds: float

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def as_dict(self, include_runtime: bool = True) -> dict:
        out = {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "residual": self.residual,
            "residual_abs": self.residual_abs,
            "residual_rel": self.residual_rel,
            "tol": self.tolerance,
            "verdict": self.verdict,
            "inputs_digest": self.inputs_digest,
            "inputs": self.inputs,
            "details": self.details,
        }
        if include_runtime:
            out["runtime_seconds"] = self.runtime_seconds
        return jsonable(out)

    def to_json(self, include_runtime: bool = True) -> str:
        return json.dumps(self.as_dict(include_runtime), indent=2, sort_keys=True, allow_nan=False)


class ReportLog:
    """Append-only, thread-safe collection of reports."""

    def __init__(self):
        self._reports: list[IdentityReport] = []
        self._lock = threading.Lock()

    def append(self, report: IdentityReport) -> None:
        with self._lock:
            self._reports.append(report)

    def __iter__(self):
        with self._lock:
            return iter(list(self._reports))

    def __len__(self) -> int:
        return len(self._reports)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self)


def jsonable(obj):
    """Convert numpy values to plain JSON types; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def inputs_digest(inputs: dict) -> str:
    blob = json.dumps(jsonable(inputs), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _report(name, lhs, rhs, residual_abs, residual_rel, parts, inputs, details, start) -> IdentityReport:
    if len(parts) == 1:
        residual, tol = parts[0].residual, parts[0].tol
    else:
        ratios = [p.residual / p.tol if p.tol > 0 else (0.0 if p.residual <= 0 else math.inf)
                  for p in parts]
        residual, tol = max(ratios), 1.0
    if not all(p.passed for p in parts):
        verdict = "fail"
    else:
        verdict = "pass" if residual <= tol else "fail"
    if verdict == "fail" and residual <= tol:
        residual = math.inf  # keeps pass <=> residual <= tol when a NaN part failed
    details = dict(details)
    details["parts"] = [p.as_dict() for p in parts]
    return IdentityReport(name, float(lhs), rhs, float(residual_abs), float(residual_rel),
                          float(residual), float(tol), verdict, inputs_digest(inputs), jsonable(inputs),
                          jsonable(details), time.perf_counter() - start)


def _inputs(problem: DiffusionProblem, **kw) -> dict:
    return {"model": problem.describe(), **kw}


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), ATOL)


def solve_path(problem: DiffusionProblem, nodes, times) -> DensityPath:
    grid = Grid.uniform(problem.domain_box, nodes)
    solver = FokkerPlanckSolver(problem, grid)
    return solver.solve(initial_density(problem, grid), times)


def _subpath(path: DensityPath, times) -> DensityPath:
    idx = [path.index(t) for t in times]
    return DensityPath(path.grid, path.times[idx], path.values[idx], path.dt)


def sigma_metric_relation(problem: DiffusionProblem, points: np.ndarray) -> tuple[str, float]:
    """Classify ``Sigma`` against ``A``: ``equal``, ``proportional`` (with the factor) or ``general``."""
    S = problem.sigma(points)
    A = problem.metric.a(points)
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(S - A)) <= 1e-12 * scale:
        return "equal", 1.0
    c = float(np.sum(S * A) / np.sum(A * A))
    if c > 0 and np.max(np.abs(S - c * A)) <= 1e-12 * max(scale, c * scale):
        return "proportional", c
    return "general", math.nan


def _uniform_times(t0: float, t1: float, k: int) -> np.ndarray:
    return np.linspace(t0, t1, k)


# ---------------------------------------------------------------------------
# Deterministic identities


def check_entropy_identity(problem: DiffusionProblem, t0: float = 0.0, t1: float | None = None,
                           nodes: int = 2048, checkpoints: int = 65, particles: int = 0,
                           seed: int = 0, dt: float = 1e-3) -> IdentityReport:
    """Entropy drop over ``[t0, t1]`` against the time integral of the Sigma-weighted Fisher form.

    With ``particles > 0`` the right-hand side is also estimated by Monte
    Carlo along simulated paths and compared within three standard errors.
    """
    start = time.perf_counter()
    t1 = problem.horizon if t1 is None else t1
    times = _uniform_times(t0, t1, checkpoints)
    path = solve_path(problem, nodes, times)
    series = flow_series(path, problem)
    lhs = series.entropy[0] - series.entropy[-1]
    rhs = float(simpson(series.fisher_sigma, x=times))
    parts = [Part("entropy_identity", _rel(lhs, rhs), GRID_TOL),
             Part("monotonicity", max(0.0, float(np.max(np.diff(series.entropy)))), 1e-8)]
    details = {"times": times, "entropy": series.entropy, "fisher_sigma": series.fisher_sigma,
               "internal_energy": series.internal, "potential_energy": series.potential}
    if particles:
        mc, se = _particle_fisher_integral(problem, path, particles, seed, dt)
        parts.append(Part("particle_coherence", abs(mc - rhs) / max(se, 1e-300), MC_SIGMAS))
        details.update(particle_rhs=mc, particle_stderr=se)
    return _report("entropy_identity", lhs, rhs, abs(lhs - rhs), _rel(lhs, rhs), parts,
                   _inputs(problem, nodes=nodes, checkpoints=checkpoints, t0=t0, t1=t1,
                           particles=particles, seed=seed, dt=dt), details, start)


def _aligned_dt(spacing: float, dt_max: float) -> float:
    return spacing / math.ceil(spacing / dt_max - 1e-9)


def _particle_fisher_integral(problem, path: DensityPath, particles: int, seed: int, dt: float):
    times = path.times
    step = _aligned_dt(float(times[1] - times[0]), dt)
    lik = likelihood_path(path, problem)
    ens = initial_ensemble(problem, particles, seed)
    if times[0] > 0:
        ens = run(ens, problem, StepConfig(step), float(times[0]))
    ens = run(ens, problem, StepConfig(step), float(times[-1]), store_times=times)
    _, hist = ens.stacked_history()
    vals = np.stack([fisher_integrand(problem, lik.field(k), hist[k]) for k in range(len(times))])
    per_particle = simpson(vals, x=times, axis=0)
    return float(per_particle.mean()), float(per_particle.std(ddof=1) / math.sqrt(particles))


def check_energy_identity(problem: DiffusionProblem, t0: float = 0.0, t1: float | None = None,
                          nodes: int = 2048, checkpoints: int = 65, fd_times=None, h_list=None,
                          fd_solver: str = "quantile", coarse_nodes: int | None = None) -> IdentityReport:
    """Energy identity for ``Sigma = A`` and the Cauchy-Schwarz inequality otherwise.

    For ``Sigma = A`` the entropy drop is compared with half the integrated
    Fisher information plus half the integrated squared metric derivative,
    and the metric derivative is cross-checked against finite-difference
    Wasserstein ratios.  For ``Sigma = c A`` the inequality must be an
    equality.  For general ``Sigma`` the slack of the inequality is reported
    together with an error bound built from a half-resolution rerun and the
    entropy identity defect.
    """
    start = time.perf_counter()
    T = problem.horizon
    t1 = T if t1 is None else t1
    times = _uniform_times(t0, t1, checkpoints)
    grid = Grid.uniform(problem.domain_box, nodes)
    relation, factor = sigma_metric_relation(problem, grid.points)
    if relation == "equal" and fd_times is None:
        fd_times = [t0 + c * (t1 - t0) for c in np.arange(1, 10) / 10]
    fd_times = [] if fd_times is None or relation != "equal" else list(fd_times)
    if h_list is None:
        h_list = tuple(c * T for c in (0.08, 0.04, 0.02, 0.01))
    extra = [t + h for t in fd_times for h in h_list] + list(fd_times)
    path = solve_path(problem, nodes, np.concatenate([times, extra]))
    lhs, sums, series = _energy_sums(problem, _subpath(path, times), times)
    parts: list[Part] = []
    details = {"relation": relation, "factor": factor, "times": times,
               "fisher_a": series.fisher_a, "metric_derivative": np.sqrt(series.fisher_sigma_g_sigma),
               "entropy": series.entropy, **sums}
    residual_abs = residual_rel = 0.0
    if relation in ("equal", "proportional"):
        parts.append(Part("cauchy_schwarz_equality", _rel(lhs, sums["cauchy_schwarz"]), ENERGY_TOL))
        residual_abs = abs(lhs - sums["cauchy_schwarz"])
        residual_rel = _rel(lhs, sums["cauchy_schwarz"])
    if relation == "equal":
        energy = sums["half_fisher"] + sums["half_speed_sq"]
        parts.insert(0, Part("energy_identity", _rel(lhs, energy), ENERGY_TOL))
        residual_abs, residual_rel = abs(lhs - energy), _rel(lhs, energy)
        table = []
        for t in fd_times:
            fd = metric_derivative_fd(problem, path, t, h_list, fd_solver)
            formula = metric_derivative(problem, likelihood_ratio(path.at(t), problem))
            gap = abs(fd.extrapolated - formula) / max(formula, ATOL)
            table.append({"t": t, "ratios": list(fd.ratios), "h": list(fd.h_list),
                          "extrapolated": fd.extrapolated, "formula": formula, "relative_gap": gap})
            parts.append(Part(f"metric_derivative_fd_t={t:.6g}", gap, FD_TOL))
        details["fd_table"] = table
    if relation == "general":
        cn = coarse_nodes or (nodes + 1) // 2
        cpath = solve_path(problem, cn, times)
        lhs_c, sums_c, _ = _energy_sums(problem, cpath, times)
        err = (abs(lhs - lhs_c) + abs(sums["cauchy_schwarz"] - sums_c["cauchy_schwarz"])
               + abs(lhs - sums["entropy_rhs"]))
        slack = sums["cauchy_schwarz"] - abs(lhs)
        details.update(slack=slack, error_bound=err, slack_over_error=slack / err if err > 0 else math.inf,
                       coarse_nodes=cn)
        parts.append(Part("inequality", max(0.0, abs(lhs) - sums["cauchy_schwarz"]), err))
        residual_abs = max(0.0, abs(lhs) - sums["cauchy_schwarz"])
        residual_rel = residual_abs / max(abs(lhs), ATOL)
    rhs = {k: sums[k] for k in ("half_fisher", "half_speed_sq", "cauchy_schwarz", "entropy_rhs")}
    return _report("energy_identity", lhs, rhs, residual_abs, residual_rel, parts,
                   _inputs(problem, nodes=nodes, checkpoints=checkpoints, t0=t0, t1=t1,
                           fd_times=fd_times, h_list=list(h_list), fd_solver=fd_solver), details, start)


def _energy_sums(problem, path, times):
    series = flow_series(path, problem)
    speed_sq = series.fisher_sigma_g_sigma
    sums = {
        "half_fisher": 0.5 * float(simpson(series.fisher_a, x=times)),
        "half_speed_sq": 0.5 * float(simpson(speed_sq, x=times)),
        "cauchy_schwarz": float(simpson(np.sqrt(series.fisher_a * speed_sq), x=times)),
        "entropy_rhs": float(simpson(series.fisher_sigma, x=times)),
    }
    return float(series.entropy[0] - series.entropy[-1]), sums, series


def centred_derivative(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Three-point derivative at interior points of a possibly nonuniform grid."""
    h1 = times[1:-1] - times[:-2]
    h2 = times[2:] - times[1:-1]
    return (-h2 / (h1 * (h1 + h2)) * values[:-2] + (h2 - h1) / (h1 * h2) * values[1:-1]
            + h1 / (h2 * (h1 + h2)) * values[2:])


def check_debruijn(problem: DiffusionProblem, t_grid=None, nodes: int = 2048,
                   checkpoints: int = 65) -> IdentityReport:
    """Dissipation rate ``-dH/dt`` against the Riemannian Fisher information for ``Sigma = A``."""
    start = time.perf_counter()
    grid = Grid.uniform(problem.domain_box, nodes)
    if sigma_metric_relation(problem, grid.points)[0] != "equal":
        raise ValueError("the dissipation identity is checked for Sigma = A only")
    times = np.asarray(t_grid if t_grid is not None else _uniform_times(0.0, problem.horizon, checkpoints))
    if times.size < 5:
        raise ValueError("need at least 5 entropy samples")
    path = solve_path(problem, nodes, times)
    series = flow_series(path, problem)
    rate = -centred_derivative(times, series.entropy)
    fisher = series.fisher_a[1:-1]
    gaps = np.abs(rate - fisher) / np.maximum(fisher, ATOL)
    k = int(np.argmax(gaps))
    parts = [Part("dissipation_rate", float(gaps.max()), GRID_TOL)]
    return _report("debruijn", float(rate[k]), float(fisher[k]), float(np.max(np.abs(rate - fisher))),
                   float(gaps.max()), parts,
                   _inputs(problem, nodes=nodes, times=times),
                   {"times": times, "entropy": series.entropy, "dissipation_rate": rate,
                    "fisher_a": series.fisher_a, "relative_gaps": gaps}, start)


# ---------------------------------------------------------------------------
# Monte Carlo identities


def regression_basis(x: np.ndarray) -> tuple[np.ndarray, list[str]]:
    """Fixed least-squares basis: constants, coordinates, squares and a Gaussian bump."""
    x = np.asarray(x).reshape(len(x), -1)
    r2 = np.sum(x * x, axis=1)
    if x.shape[1] == 1:
        cols = [np.ones(len(x)), x[:, 0], x[:, 0] ** 2, np.exp(-0.5 * r2)]
        return np.stack(cols, axis=1), ["1", "x", "x^2", "exp(-x^2/2)"]
    cols = [np.ones(len(x)), x[:, 0], x[:, 1], x[:, 0] ** 2, x[:, 1] ** 2, x[:, 0] * x[:, 1],
            np.exp(-0.5 * r2)]
    return np.stack(cols, axis=1), ["1", "x1", "x2", "x1^2", "x2^2", "x1*x2", "exp(-|x|^2/2)"]


def robust_ols(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares coefficients with heteroskedasticity-robust (HC0) standard errors."""
    XtX_inv = np.linalg.inv(X.T @ X)
    beta = XtX_inv @ (X.T @ y)
    e = y - X @ beta
    meat = (X * (e * e)[:, None]).T @ X
    cov = XtX_inv @ meat @ XtX_inv
    return beta, np.sqrt(np.maximum(np.diag(cov), 0.0))


def _step_times(T: float, dt: float) -> np.ndarray:
    steps = round(T / dt)
    if abs(steps * dt - T) > 1e-9 * T:
        raise ValueError(f"horizon {T} is not a multiple of dt={dt}")
    return np.linspace(0.0, T, steps + 1)


def check_martingale(problem: DiffusionProblem, N: int = 100_000, seed: int = 0, dt: float = 1e-3,
                     intervals: int = 16, nodes: int = 2048, chunk: int = 5000) -> IdentityReport:
    """Martingale property and L2 identity of the compensated reversed log-likelihood.

    ``M_s = log l_{T-s}(X_{T-s}) - log l_T(X_T) - F_s`` is evaluated at
    ``intervals + 1`` equally spaced reversed times.  Tested: zero mean at each
    checkpoint, zero coefficients when regressing increments on the basis of
    the current reversed state (pooled over intervals, robust errors), and
    ``mean(M_T^2)/2`` against the grid entropy drop.
    """
    start = time.perf_counter()
    T = problem.horizon
    step_times = _step_times(T, dt)
    path = solve_path(problem, nodes, step_times)
    lik = likelihood_path(path, problem)
    rev = np.linspace(0.0, T, intervals + 1)
    fwd_idx = [int(round((T - s) / dt)) for s in rev]
    M = np.empty((rev.size, N))
    Xc = np.empty((rev.size, N, problem.dimension))
    F_T = np.empty(N)
    cfg = StepConfig(dt, store_every=1)
    for lo in range(0, N, chunk):
        ids = np.arange(lo, min(N, lo + chunk))
        ens = run(initial_ensemble(problem, particle_ids=ids, seed=seed), problem, cfg, T)
        times, hist = ens.stacked_history()
        cf = cumulative_fisher(times, hist, lik, problem)
        last = len(times) - 1
        log_T = lik.field(last).log_at(hist[last])
        for j, k in enumerate(fwd_idx):
            Fs = cf.values[last - k]
            M[j, ids] = lik.field(k).log_at(hist[k]) - log_T - Fs
            Xc[j, ids] = hist[k]
        F_T[ids] = cf.values[-1]
    parts = []
    means = M.mean(axis=1)
    ses = M.std(axis=1, ddof=1) / math.sqrt(N)
    for j in range(1, rev.size):
        parts.append(Part(f"mean_s={rev[j]:.6g}", abs(means[j]) / max(ses[j], 1e-300), MC_SIGMAS))
    dM = (M[1:] - M[:-1]).ravel()
    X, names = regression_basis(Xc[:-1].reshape(-1, problem.dimension))
    beta, beta_se = robust_ols(X, dM)
    for name, b, s in zip(names, beta, beta_se):
        parts.append(Part(f"increment_coefficient[{name}]", abs(b) / max(s, 1e-300), MC_SIGMAS))
    half_sq = 0.5 * M[-1] ** 2
    lhs = float(half_sq.mean())
    h0 = flow_series(_subpath(path, [0.0, T]), problem).entropy
    rhs = float(h0[0] - h0[1])
    l2_se = float(half_sq.std(ddof=1) / math.sqrt(N))
    parts.append(Part("l2_identity", abs(lhs - rhs) / l2_se, MC_SIGMAS))
    details = {"reversed_times": rev, "means": means, "stderrs": ses, "coefficients": beta,
               "coefficient_stderrs": beta_se, "basis": names, "l2_stderr": l2_se,
               "mean_cumulative_fisher": float(F_T.mean()),
               "cumulative_fisher_stderr": float(F_T.std(ddof=1) / math.sqrt(N))}
    return _report("martingale", lhs, rhs, abs(lhs - rhs), _rel(lhs, rhs), parts,
                   _inputs(problem, N=N, seed=seed, dt=dt, intervals=intervals, nodes=nodes),
                   details, start)


def check_trajectorial_rate(problem: DiffusionProblem, t: float | None = None, N: int = 100_000,
                            seed: int = 0, dt: float = 1e-3, deltas=(0.04, 0.02, 0.01),
                            nodes: int = 2048, tol_fraction: float = 0.05) -> IdentityReport:
    """Conditional difference quotients of the entropy process against the pointwise rate.

    For each ``delta`` the cumulative Fisher increment over reversed times
    ``[T - t, T - t + delta]`` is divided by ``delta``, negated, and
    projected onto the regression basis of ``X_t``.  Its mean absolute
    distance from ``-<grad log l_t, Sigma grad log l_t>(X_t)`` must decrease
    with ``delta`` and end below ``tol_fraction`` times the mean absolute
    target.  The quotient built from log-likelihood differences is reported
    as a diagnostic.
    """
    start = time.perf_counter()
    T = problem.horizon
    t = 0.5 * T if t is None else float(t)
    deltas = tuple(sorted((float(d) for d in deltas), reverse=True))
    t_start = t - deltas[0]
    if t_start < -1e-12:
        raise ValueError("largest delta reaches before time 0")
    n_hist = int(round(deltas[0] / dt))
    hist_times = t_start + dt * np.arange(n_hist + 1)
    path = solve_path(problem, nodes, hist_times)
    lik = likelihood_path(path, problem)
    ens = initial_ensemble(problem, N, seed)
    ens = run(ens, problem, StepConfig(_aligned_dt(t_start, dt) if t_start > 0 else dt), t_start)
    ens = ParticleEnsemble(ens.positions, t_start, ens.particle_ids, ens.seed, ens.step, ens.stream)
    ens = run(ens, problem, StepConfig(dt, store_every=1), t)
    _, hist = ens.stacked_history()
    f = np.stack([fisher_integrand(problem, lik.field(k), hist[k]) for k in range(n_hist + 1)])
    logl = np.stack([lik.field(k).log_at(hist[k]) for k in range(n_hist + 1)])
    X, _ = regression_basis(hist[-1])
    target = -f[-1]
    scale = max(float(np.mean(np.abs(target))), ATOL)
    gaps, raw_gaps = [], []
    for d in deltas:
        m = int(round(d / dt))
        increment = dt * f[-m:].sum(axis=0)  # reversed-time left end points
        beta, *_ = np.linalg.lstsq(X, -increment / d, rcond=None)
        gaps.append(float(np.mean(np.abs(X @ beta - target))))
        raw = (logl[-1] - logl[-1 - m]) / d
        beta_raw, *_ = np.linalg.lstsq(X, raw, rcond=None)
        raw_gaps.append(float(np.mean(np.abs(X @ beta_raw - target))))
    rel = [g / scale for g in gaps]
    increase = max([0.0] + [gaps[i + 1] - gaps[i] for i in range(len(gaps) - 1)])
    parts = [Part("gaps_decreasing", increase, ATOL), Part("final_gap", rel[-1], tol_fraction)]
    return _report("trajectorial_rate", rel[-1], 0.0, gaps[-1], rel[-1], parts,
                   _inputs(problem, t=t, N=N, seed=seed, dt=dt, deltas=list(deltas), nodes=nodes),
                   {"deltas": deltas, "l1_gaps": gaps, "relative_gaps": rel,
                    "log_likelihood_quotient_gaps": raw_gaps, "mean_abs_target": scale}, start)


def energy_distance_test(x: np.ndarray, y: np.ndarray, permutations: int = 199, seed: int = 0,
                         max_points: int = 2000) -> tuple[float, float]:
    """Two-sample permutation test on the energy distance; returns ``(statistic, p_value)``."""
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    gen = np.random.default_rng(seed)
    if x.shape[1] == 1:
        stat_fn = lambda a, b: energy_distance(a[:, 0], b[:, 0])
    else:
        from scipy.spatial.distance import cdist

        if len(x) > max_points:
            x = x[gen.choice(len(x), max_points, replace=False)]
        if len(y) > max_points:
            y = y[gen.choice(len(y), max_points, replace=False)]

        def stat_fn(a, b):
            return 2 * cdist(a, b).mean() - cdist(a, a).mean() - cdist(b, b).mean()
    observed = stat_fn(x, y)
    pooled = np.vstack([x, y])
    hits = 0
    for _ in range(permutations):
        perm = gen.permutation(len(pooled))
        if stat_fn(pooled[perm[:len(x)]], pooled[perm[len(x):]]) >= observed:
            hits += 1
    return float(observed), (hits + 1) / (permutations + 1)


def check_time_reversal(problem: DiffusionProblem, N: int = 20_000, seed: int = 0, dt: float = 1e-3,
                        nodes: int = 2048, permutations: int = 199, level: float = 0.01) -> IdentityReport:
    """Reversed dynamics driven by the grid score must carry ``P_T`` back to ``P_0``.

    Tested with energy-distance permutation tests: the reversed terminal
    ensemble against fresh draws from ``P_0``, and the reversed ensemble at
    ``s = T/2`` against an independent forward ensemble at ``t = T/2``.
    """
    start = time.perf_counter()
    T = problem.horizon
    step_times = _step_times(T, dt)
    lik = likelihood_path(solve_path(problem, nodes, step_times), problem)
    cfg = StepConfig(dt)
    fwd = run(initial_ensemble(problem, N, seed), problem, cfg, T)
    rev0 = ParticleEnsemble(fwd.positions, 0.0, fwd.particle_ids, seed, 0, rng.STREAM_REVERSED)
    rev = run(rev0, problem, cfg, T, store_times=[0.5 * T], score=grid_score(lik, T))
    ref_ids = np.arange(N, 2 * N)
    reference = problem.initial_law.sample(seed, ref_ids)
    stat, p = energy_distance_test(rev.positions, reference, permutations, seed)
    mid_fwd = run(initial_ensemble(problem, particle_ids=ref_ids, seed=seed), problem, cfg, 0.5 * T)
    stat_mid, p_mid = energy_distance_test(rev.history[0], mid_fwd.positions, permutations, seed + 1)
    parts = [Part("terminal_vs_initial_law", 1.0 - p, 1.0 - level),
             Part("midpoint_marginal", 1.0 - p_mid, 1.0 - level)]
    return _report("time_reversal", p, level, stat, 1.0 - p, parts,
                   _inputs(problem, N=N, seed=seed, dt=dt, nodes=nodes, permutations=permutations),
                   {"energy_distance": stat, "p_value": p, "midpoint_energy_distance": stat_mid,
                    "midpoint_p_value": p_mid, "reflections": rev.reflections + fwd.reflections},
                   start)


def _ou_parameters(problem: DiffusionProblem) -> tuple[float, float]:
    """Return ``(kappa, c)`` for ``V = kappa |x|^2 / 2`` and ``Sigma = c I``."""
    if problem.potential.name != "quadratic" or not problem.sigma.constant:
        raise ValueError("weak-order study needs a quadratic potential and constant scalar volatility")
    S = problem.sigma(np.zeros((1, problem.dimension)))[0]
    c = float(S[0, 0])
    if np.max(np.abs(S - c * np.eye(problem.dimension))) > 0:
        raise ValueError("volatility must be a multiple of the identity")
    return float(problem.potential.params["kappa"]), c


def check_weak_order(problem: DiffusionProblem, dts=(4e-3, 2e-3, 1e-3), N: int = 100_000,
                     seed: int = 0, observation_times: int = 10, slope_range=(0.7, 1.3)) -> IdentityReport:
    """Weak convergence order of Euler-Maruyama on an Ornstein-Uhlenbeck problem.

    Each Euler-Maruyama path is paired with an exact-in-law transition
    driven by the same normal draws, so ``mean(|X_EM|^2 - |X_exact|^2)``
    estimates the weak error of the second moment with small variance.  The
    error is the maximum over ``observation_times`` equally spaced times.
    """
    start = time.perf_counter()
    kappa, c = _ou_parameters(problem)
    T = problem.horizon
    errors = []
    ses = []
    check_times = T * np.arange(1, observation_times + 1) / observation_times
    for dt in dts:
        steps = round(T / dt)
        marks = {int(round(t / dt)) for t in check_times}
        ens = initial_ensemble(problem, N, seed)
        exact = ens.positions.copy()
        decay = math.exp(-c * kappa * dt)
        spread = math.sqrt((1 - math.exp(-2 * c * kappa * dt)) / kappa)
        cfg = StepConfig(dt)
        worst, worst_se = 0.0, 0.0
        for k in range(steps):
            z = rng.normals(seed, ens.stream, ens.step, ens.particle_ids, problem.dimension)
            ens = run(ens, problem, cfg, ens.time + dt)
            exact = decay * exact + spread * z
            if k + 1 in marks:
                diff = np.sum(ens.positions**2, axis=1) - np.sum(exact**2, axis=1)
                m = abs(float(diff.mean()))
                if m > worst:
                    worst, worst_se = m, float(diff.std(ddof=1) / math.sqrt(N))
        errors.append(worst)
        ses.append(worst_se)
    slope = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
    lo, hi = slope_range
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    parts = [Part("weak_order_slope", abs(slope - mid), half)]
    return _report("weak_order", slope, mid, abs(slope - mid), abs(slope - mid) / mid, parts,
                   _inputs(problem, dts=list(dts), N=N, seed=seed, observation_times=observation_times),
                   {"dts": list(dts), "weak_errors": errors, "stderrs": ses, "slope": slope}, start)


def check_backward_residual(problem: DiffusionProblem, t: float | None = None,
                            nodes_list=(513, 1025, 2049), min_ratio: float = 3.0) -> IdentityReport:
    """Backward-equation residual of the grid likelihood ratio under spatial refinement.

    At each resolution the residual is measured on slices ``t - dt, t,
    t + dt`` with the solver's own step ``dt``; it must shrink by at least
    ``min_ratio`` per halving of the spacing.
    """
    start = time.perf_counter()
    t = 0.5 * problem.horizon if t is None else float(t)
    residuals = []
    for nodes in nodes_list:
        grid = Grid.uniform(problem.domain_box, nodes)
        solver = FokkerPlanckSolver(problem, grid)
        h = solver.dt
        path = solver.solve(initial_density(problem, grid), [t - h, t, t + h])
        residuals.append(backward_residual(likelihood_path(path, problem), problem))
    ratios = [residuals[i] / residuals[i + 1] for i in range(len(residuals) - 1)]
    worst = min(ratios)
    parts = [Part("refinement_ratio", min_ratio / worst if worst > 0 else math.inf, 1.0)]
    return _report("backward_residual", residuals[-1], 0.0, residuals[-1], min_ratio / worst, parts,
                   _inputs(problem, t=t, nodes_list=list(nodes_list)),
                   {"nodes": list(nodes_list), "residuals": residuals, "ratios": ratios}, start)


CHECKS = {
    "entropy_identity": check_entropy_identity,
    "energy_identity": check_energy_identity,
    "debruijn": check_debruijn,
    "martingale": check_martingale,
    "trajectorial_rate": check_trajectorial_rate,
    "time_reversal": check_time_reversal,
    "weak_order": check_weak_order,
    "backward_residual": check_backward_residual,
}
