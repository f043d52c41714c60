"""Relative entropy, Fisher-type quadratic forms and the cumulative Fisher process."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import irfftn, rfftn

from .fokker_planck import DensityField, GridMismatchError, LikelihoodField, LikelihoodPath
from .model import DiffusionProblem

ENTROPY_CELL_LIMIT = 1e6
WEIGHTS = ("sigma", "a_metric", "sigma_g_sigma")


@dataclass(frozen=True)
class EntropyValue:
    value: float
    estimator: str
    stderr: float | None = None
    internal: float | None = None
    potential: float | None = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


@dataclass(frozen=True)
class FisherValue:
    value: float
    weight: str
    estimator: str = "grid_quadrature"


def relative_entropy(density: DensityField, problem: DiffusionProblem) -> EntropyValue:
    """``H(P|Q) = int p log(p/q)`` by trapezoid quadrature, with its free-energy split."""
    p = density.values
    if np.any(p <= 0):
        bad = np.argwhere(p <= 0)[:10]
        raise ValueError(f"density not positive at nodes {[tuple(int(i) for i in b) for b in bad]}")
    grid = density.grid
    V = problem.potential(grid.points).reshape(grid.shape)
    w = grid.weights
    cells = w * p * (np.log(p) + V)
    if np.max(cells) > ENTROPY_CELL_LIMIT:
        return EntropyValue(math.inf, "grid_quadrature")
    internal = float(np.sum(w * p * np.log(p)))
    pot = float(np.sum(w * p * V))
    return EntropyValue(float(np.sum(cells)), "grid_quadrature", 0.0, internal, pot)


def _weight_matrices(problem: DiffusionProblem, x: np.ndarray, weight: str) -> np.ndarray:
    if weight == "sigma":
        return problem.sigma(x)
    if weight == "a_metric":
        return problem.metric.a(x)
    if weight == "sigma_g_sigma":
        s = problem.sigma(x)
        return np.einsum("kij,kjl,klm->kim", s, problem.metric.g(x), s)
    raise ValueError(f"unknown weight '{weight}', expected one of {WEIGHTS}")


def quadratic_form_at(problem: DiffusionProblem, x: np.ndarray, grad: np.ndarray,
                      weight: str = "sigma") -> np.ndarray:
    """Pointwise ``<grad, W(x) grad>`` for a batch of points."""
    n = problem.dimension
    if n == 1 and weight == "sigma" and problem.sigma.constant:
        return problem.sigma(x[:1])[0, 0, 0] * grad[:, 0] ** 2
    W = _weight_matrices(problem, x, weight)
    return np.einsum("ki,kij,kj->k", grad, W, grad)


def fisher_quadratic_form(lik: LikelihoodField, problem: DiffusionProblem,
                          weight: str = "sigma") -> FisherValue:
    """``int <grad log l, W grad log l> p dx`` for ``W`` in Sigma, A or Sigma G Sigma."""
    grid = lik.grid
    if grid.dimension != problem.dimension or lik.density.shape != grid.shape:
        raise GridMismatchError("likelihood field does not match the problem grid")
    g = lik.gradient.reshape(problem.dimension, -1).T
    integrand = quadratic_form_at(problem, grid.points, g, weight).reshape(grid.shape)
    return FisherValue(grid.integrate(integrand * lik.density), weight)


def check_same_grid(a, b) -> None:
    if not a.grid.same_as(b.grid):
        raise GridMismatchError("fields live on different grids")


# ---------------------------------------------------------------------------
# Particle estimator


def _binned_kde(x: np.ndarray, bandwidth: np.ndarray, bins: int = 4096):
    """Gaussian KDE by linear binning and FFT convolution; returns (axes, density)."""
    n = x.shape[1]
    if n == 2:
        bins = 512
    lo = x.min(axis=0) - 6 * bandwidth
    hi = x.max(axis=0) + 6 * bandwidth
    h = (hi - lo) / (bins - 1)
    # Linear binning onto the mesh.
    pos = (x - lo) / h
    base = np.floor(pos).astype(np.int64)
    base = np.clip(base, 0, bins - 2)
    frac = pos - base
    counts = np.zeros((bins,) * n)
    if n == 1:
        np.add.at(counts, base[:, 0], 1 - frac[:, 0])
        np.add.at(counts, base[:, 0] + 1, frac[:, 0])
    else:
        for dx in (0, 1):
            wx = frac[:, 0] if dx else 1 - frac[:, 0]
            for dy in (0, 1):
                wy = frac[:, 1] if dy else 1 - frac[:, 1]
                np.add.at(counts, (base[:, 0] + dx, base[:, 1] + dy), wx * wy)
    counts /= x.shape[0]
    # Zero padded FFT convolution with the Gaussian kernel sampled on the mesh.
    size = [2 * bins] * n
    kern_axes = []
    for d in range(n):
        k = np.arange(2 * bins)
        k = np.where(k < bins, k, k - 2 * bins) * h[d]
        kern_axes.append(np.exp(-0.5 * (k / bandwidth[d]) ** 2) / (math.sqrt(2 * math.pi) * bandwidth[d]))
    kern = kern_axes[0]
    for d in range(1, n):
        kern = np.multiply.outer(kern, kern_axes[d])
    dens = irfftn(rfftn(counts, size) * rfftn(kern, size), size)
    dens = dens[tuple(slice(0, bins) for _ in range(n))]
    axes = [lo[d] + h[d] * np.arange(bins) for d in range(n)]
    return axes, np.maximum(dens, 1e-300)


def silverman_bandwidth(x: np.ndarray) -> np.ndarray:
    N, n = x.shape
    sd = x.std(axis=0, ddof=1)
    if n == 1:
        iqr = np.subtract(*np.percentile(x[:, 0], [75, 25]))
        sd = np.array([min(sd[0], iqr / 1.349)])
        return 0.9 * sd * N ** (-0.2)
    return sd * (4.0 / ((n + 2) * N)) ** (1.0 / (n + 4))


def particle_entropy(positions: np.ndarray, problem: DiffusionProblem,
                     bandwidth: np.ndarray | None = None) -> EntropyValue:
    """Resubstitution estimate ``mean(log p_hat(X) + V(X))`` with a Gaussian KDE."""
    x = np.asarray(positions, dtype=np.float64).reshape(len(positions), -1)
    bw = silverman_bandwidth(x) if bandwidth is None else np.broadcast_to(bandwidth, (x.shape[1],))
    axes, dens = _binned_kde(x, np.asarray(bw, dtype=np.float64))
    if x.shape[1] == 1:
        phat = np.interp(x[:, 0], axes[0], dens)
    else:
        from scipy.interpolate import RegularGridInterpolator

        phat = RegularGridInterpolator(axes, dens)(x)
    V = problem.potential(x)
    terms = np.log(phat) + V
    internal = float(np.mean(np.log(phat)))
    return EntropyValue(float(terms.mean()), "particle_kde",
                        float(terms.std(ddof=1) / math.sqrt(len(terms))), internal, float(V.mean()))


# ---------------------------------------------------------------------------
# Cumulative Fisher information along reversed trajectories


@dataclass(frozen=True)
class CumulativeFisher:
    """Per-particle ``F_bar`` at reversed times ``s_k = T - t_k``.

    ``values[k]`` holds ``F_bar_{s_k}`` for every particle; ``forward_times``
    lists the matching forward times, decreasing.
    """

    reversed_times: np.ndarray
    forward_times: np.ndarray
    values: np.ndarray  # (K, N)


def fisher_integrand(problem: DiffusionProblem, lik: LikelihoodField, x: np.ndarray) -> np.ndarray:
    """``<grad log l, Sigma grad log l>`` at particle positions."""
    return quadratic_form_at(problem, x, lik.grad_at(x), "sigma")


def cumulative_fisher(history_times, history, lik_path: LikelihoodPath,
                      problem: DiffusionProblem) -> CumulativeFisher:
    """Left-endpoint sums of the Fisher integrand along reversed trajectories.

    Parameters
    ----------
    history_times : array_like, shape (K,)
        Forward times of the stored snapshots, increasing and ending at T.
    history : ndarray, shape (K, N, n)
        Particle positions at those times.
    lik_path : LikelihoodPath
        Must carry a slice at every snapshot time.
    """
    t = np.asarray(history_times, dtype=np.float64)
    hist = np.asarray(history)
    if hist.shape[0] != t.size:
        raise ValueError("history and time stamps have different lengths")
    try:
        idx = [lik_path.index(tk) for tk in t]
    except KeyError as exc:
        raise ValueError(f"trajectory checkpoints misaligned with likelihood slices: {exc}") from None
    T = t[-1]
    order = np.arange(t.size)[::-1]  # reversed time runs backwards through the snapshots
    s = T - t[order]
    K, N = t.size, hist.shape[1]
    vals = np.zeros((K, N))
    for j in range(K - 1):
        k = order[j]
        # Left endpoint in reversed time is the later forward time.
        f = fisher_integrand(problem, lik_path.field(idx[k]), hist[k])
        vals[j + 1] = vals[j] + f * (s[j + 1] - s[j])
    return CumulativeFisher(s, t[order], vals)


@dataclass(frozen=True)
class FlowSeries:
    """Entropy and Fisher-type quantities along a density path."""

    times: np.ndarray
    entropy: np.ndarray
    internal: np.ndarray
    potential: np.ndarray
    fisher_sigma: np.ndarray
    fisher_a: np.ndarray
    fisher_sigma_g_sigma: np.ndarray

    def rows(self):
        for k, t in enumerate(self.times):
            yield (float(t), float(self.entropy[k]), float(self.fisher_sigma[k]),
                   float(self.fisher_a[k]), float(self.fisher_sigma_g_sigma[k]))


def flow_series(path, problem: DiffusionProblem) -> FlowSeries:
    """Relative entropy and the three Fisher forms at every slice of ``path``."""
    from .fokker_planck import likelihood_ratio

    K = len(path)
    out = {k: np.empty(K) for k in ("H", "U", "P", "s", "a", "g")}
    for k, dens in enumerate(path):
        h = relative_entropy(dens, problem)
        lik = likelihood_ratio(dens, problem)
        out["H"][k], out["U"][k], out["P"][k] = h.value, h.internal, h.potential
        out["s"][k] = fisher_quadratic_form(lik, problem, "sigma").value
        out["a"][k] = fisher_quadratic_form(lik, problem, "a_metric").value
        out["g"][k] = fisher_quadratic_form(lik, problem, "sigma_g_sigma").value
    return FlowSeries(np.asarray(path.times, dtype=np.float64), out["H"], out["U"], out["P"],
                      out["s"], out["a"], out["g"])
