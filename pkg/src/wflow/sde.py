"""Euler-Maruyama integration of the forward and time-reversed diffusions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import rng
from .model import DiffusionProblem, drift

MAX_DT = 0.1


class SDEError(RuntimeError):
    pass


class SpdError(ValueError):
    def __init__(self, message: str, smallest_eigenvalue: float):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


def sqrt_spd(m) -> np.ndarray:
    """Symmetric positive definite square root of one matrix or a batch."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-1] != m.shape[-2]:
        raise SpdError(f"matrix must be square, got {m.shape}", float("nan"))
    asym = np.max(np.abs(m - np.swapaxes(m, -1, -2))) if m.size else 0.0
    if asym > 1e-12 * max(1.0, float(np.max(np.abs(m)))):
        raise SpdError(f"matrix is not symmetric (max asymmetry {asym:.3e})", float("nan"))
    w, U = np.linalg.eigh(m)
    low = float(np.min(w))
    if low <= 0:
        raise SpdError(f"matrix is not positive definite, smallest eigenvalue {low:.6g}", low)
    return np.einsum("...ij,...j,...kj->...ik", U, np.sqrt(w), U)


@dataclass(frozen=True)
class StepConfig:
    dt: float
    scheme: str = "euler_maruyama"
    boundary: str = "reflect"
    store_every: int = 0

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if self.dt > MAX_DT:
            raise ValueError(f"dt={self.dt} exceeds the stability cap {MAX_DT}")
        if self.scheme != "euler_maruyama":
            raise ValueError(f"unsupported scheme '{self.scheme}'")
        if self.boundary != "reflect":
            raise ValueError(f"unsupported boundary '{self.boundary}'")


@dataclass(frozen=True)
class ParticleEnsemble:
    """Particle positions at one time.

    ``particle_ids`` index the counter-based noise streams, ``step`` is the
    global step counter fed to the generator and ``seed`` the master seed.
    ``history`` maps stored times to position arrays.
    """

    positions: np.ndarray
    time: float
    particle_ids: np.ndarray
    seed: int
    step: int = 0
    stream: int = rng.STREAM_FORWARD
    reflections: int = 0
    history_times: tuple = ()
    history: tuple = ()

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    def stacked_history(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.history_times), np.stack(self.history)

    def with_snapshot(self) -> "ParticleEnsemble":
        return replace(self, history_times=self.history_times + (self.time,),
                       history=self.history + (self.positions,))


def initial_ensemble(problem: DiffusionProblem, n_particles: int | None = None, seed: int = 0,
                     particle_ids=None, stream: int = rng.STREAM_FORWARD) -> ParticleEnsemble:
    """Draw ``X_0`` from the initial law using per-particle streams."""
    ids = np.arange(n_particles, dtype=np.int64) if particle_ids is None else np.asarray(particle_ids, np.int64)
    x = problem.initial_law.sample(seed, ids)
    x = reflect(x, problem.lower, problem.upper)[0]
    return ParticleEnsemble(x, 0.0, ids, int(seed), 0, stream)


def reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, int]:
    """Fold points back into the box by mirror reflection."""
    outside = (x < lo) | (x > hi)
    count = int(np.count_nonzero(outside))
    if not count:
        return x, 0
    L = np.broadcast_to(hi - lo, x.shape)
    base = np.broadcast_to(lo, x.shape)
    y = np.mod(x[outside] - base[outside], 2 * L[outside])
    out = x.copy()
    out[outside] = base[outside] + L[outside] - np.abs(y - L[outside])
    return out, count


def _noise_factor(problem: DiffusionProblem, x: np.ndarray) -> np.ndarray:
    s = problem.sigma(x)
    if x.shape[1] == 1:
        if np.any(s[:, 0, 0] <= 0):
            k = int(np.argmin(s[:, 0, 0]))
            raise SpdError(f"volatility not positive at {x[k]}", float(s[k, 0, 0]))
        return np.sqrt(2.0 * s)
    return sqrt_spd(2.0 * s)


def _advance(ens: ParticleEnsemble, problem: DiffusionProblem, cfg: StepConfig,
             extra_drift: np.ndarray | None = None) -> ParticleEnsemble:
    x = ens.positions
    b = drift(problem, x)
    if extra_drift is not None:
        b = b + extra_drift
    z = rng.normals(ens.seed, ens.stream, ens.step, ens.particle_ids, x.shape[1])
    S = _noise_factor(problem, x)
    sq = math.sqrt(cfg.dt)
    if x.shape[1] == 1:
        new = x + b * cfg.dt + S[:, :, 0] * (sq * z)
    else:
        new = x + b * cfg.dt + np.einsum("kij,kj->ki", S, z) * sq
    bad = ~np.all(np.isfinite(new), axis=1)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise SDEError(f"non-finite update for particle {int(ens.particle_ids[k])} "
                       f"at t={ens.time:.6g}, state {x[k]}")
    new, hits = reflect(new, problem.lower, problem.upper)
    return replace(ens, positions=new, time=ens.time + cfg.dt, step=ens.step + 1,
                   reflections=ens.reflections + hits)


def step_forward(ens: ParticleEnsemble, problem: DiffusionProblem, cfg: StepConfig) -> ParticleEnsemble:
    """One Euler-Maruyama step ``x + b(x) dt + sqrt(2 Sigma(x) dt) xi``."""
    if ens.time + cfg.dt > problem.horizon * (1 + 1e-12):
        raise SDEError(f"step would pass the horizon T={problem.horizon}")
    return _advance(ens, problem, cfg)


Score = Callable[[np.ndarray, float], np.ndarray]


def step_reversed(ens: ParticleEnsemble, problem: DiffusionProblem, score: Score,
                  cfg: StepConfig) -> ParticleEnsemble:
    """One Euler-Maruyama step of the reversed dynamics in reversed time ``s = ens.time``.

    The drift is ``div Sigma - Sigma grad V + 2 Sigma score(x, s)``.
    """
    if ens.time + cfg.dt > problem.horizon * (1 + 1e-12):
        raise SDEError(f"reversed step would pass s=T={problem.horizon}")
    x = ens.positions
    g = np.asarray(score(x, ens.time), dtype=np.float64)
    if not np.all(np.isfinite(g)):
        k = int(np.flatnonzero(~np.all(np.isfinite(g), axis=1))[0])
        raise SDEError(f"score is not finite at x={x[k]}, s={ens.time:.6g}")
    extra = 2.0 * np.einsum("kij,kj->ki", problem.sigma(x), g)
    return _advance(ens, problem, cfg, extra)


def _step_count(span: float, dt: float) -> int:
    k = round(span / dt)
    if abs(k * dt - span) > 1e-9 * max(1.0, span):
        raise ValueError(f"interval {span} is not a multiple of dt={dt}")
    return int(k)


def run(ens: ParticleEnsemble, problem: DiffusionProblem, cfg: StepConfig, t_end: float,
        store_times=(), score: Score | None = None) -> ParticleEnsemble:
    """Advance ``ens`` to ``t_end`` storing snapshots at ``store_times``.

    Forward dynamics are used unless ``score`` is given.  Store times must
    lie on the step lattice; with ``cfg.store_every > 0`` every that many
    steps is stored as well.
    """
    steps = _step_count(t_end - ens.time, cfg.dt)
    wanted = {_step_count(t - ens.time, cfg.dt) for t in store_times if t >= ens.time - 1e-12}
    if cfg.store_every:
        wanted |= set(range(0, steps + 1, cfg.store_every))
    if 0 in wanted:
        ens = ens.with_snapshot()
    t0 = ens.time
    for k in range(1, steps + 1):
        if score is None:
            ens = step_forward(ens, problem, cfg)
        else:
            ens = step_reversed(ens, problem, score, cfg)
        # Clock from the step count so stored times do not accumulate rounding.
        ens = replace(ens, time=t_end if k == steps else t0 + k * cfg.dt)
        if k in wanted:
            ens = ens.with_snapshot()
    return ens


def grid_score(lik_path, horizon: float) -> Score:
    """Reversed-time score ``(x, s) -> grad log l_{T-s}(x)`` from stored grid slices."""

    def score(x, s):
        return lik_path.field(lik_path.index(horizon - s)).grad_at(x)

    return score
