"""Riemannian ground distances on coarse lattices."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from ..fokker_planck import Grid
from ..model import MetricSpec

DEFAULT_STENCIL_RADIUS = 3


@dataclass(frozen=True)
class GroundMetric:
    """Pairwise distances between coarse OT nodes.

    ``nodes`` has shape ``(K, n)``; ``axes`` holds the coarse coordinates per
    axis so that measures can be aggregated onto the lattice.
    """

    grid: Grid
    axes: tuple[np.ndarray, ...]
    nodes: np.ndarray
    distances: np.ndarray
    method: str

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)


def coarse_axes(grid: Grid, max_nodes: int) -> tuple[np.ndarray, ...]:
    """Uniform sub-lattices of the grid axes with at most ``max_nodes`` points in total."""
    n = grid.dimension
    per_axis = int(math.floor(max_nodes ** (1.0 / n) + 1e-9))
    axes = []
    for a in grid.axes:
        k = min(a.size, per_axis)
        axes.append(np.linspace(a[0], a[-1], k))
    return tuple(axes)


def _primitive_offsets(radius: int) -> list[tuple[int, int]]:
    out = []
    for i in range(-radius, radius + 1):
        for j in range(-radius, radius + 1):
            if (i, j) != (0, 0) and math.gcd(abs(i), abs(j)) == 1:
                out.append((i, j))
    return out


def _edge_lengths(metric: MetricSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    v = b - a
    G = metric.g(0.5 * (a + b))
    sq = np.einsum("ki,kij,kj->k", v, G, v)
    if np.any(~(sq > 0)):
        k = int(np.flatnonzero(~(sq > 0))[0])
        raise ValueError(f"metric tensor is not positive definite near {0.5 * (a[k] + b[k])}")
    return np.sqrt(sq)


def ground_distance(metric: MetricSpec, grid: Grid, max_nodes: int = 4000,
                    stencil_radius: int = DEFAULT_STENCIL_RADIUS) -> GroundMetric:
    """Geodesic distance of ``G = A^{-1}`` between coarse lattice nodes.

    A constant metric uses the closed form ``sqrt(<G(x - y), x - y>)``.
    Otherwise, in one dimension the distance is the integral of ``sqrt(G)``
    along the segment (midpoint rule per lattice edge), and in two
    dimensions it is the shortest path on a lattice graph whose edges join
    every node to the primitive offsets within ``stencil_radius``, weighted
    by the Riemannian length of the straight edge under the midpoint metric.
    """
    axes = coarse_axes(grid, max_nodes)
    for a in axes:
        if a.size < 2:
            raise ValueError("coarse lattice needs at least 2 nodes per axis")
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    n = grid.dimension
    g_nodes = metric.g(nodes)
    if np.any(np.linalg.eigvalsh(0.5 * (g_nodes + np.swapaxes(g_nodes, 1, 2)))[:, 0] <= 0):
        raise ValueError("metric tensor is not positive definite on the lattice")

    if metric.constant:
        G = g_nodes[0]
        L = np.linalg.cholesky(G)
        y = nodes @ L
        diff = y[:, None, :] - y[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        return GroundMetric(grid, axes, nodes, dist, "euclidean_closed_form")

    if n == 1:
        x = axes[0]
        seg = _edge_lengths(metric, x[:-1, None], x[1:, None])
        phi = np.concatenate([[0.0], np.cumsum(seg)])
        dist = np.abs(phi[:, None] - phi[None, :])
        return GroundMetric(grid, axes, nodes, dist, "graph_geodesic")

    shape = tuple(a.size for a in axes)
    index = np.arange(nodes.shape[0]).reshape(shape)
    rows, cols, vals = [], [], []
    for di, dj in _primitive_offsets(stencil_radius):
        if (di, dj) < (0, 0):
            continue  # each undirected edge once
        src = index[max(0, -di):shape[0] - max(0, di), max(0, -dj):shape[1] - max(0, dj)].ravel()
        dst = index[max(0, di):shape[0] - max(0, -di), max(0, dj):shape[1] - max(0, -dj)].ravel()
        if src.size == 0:
            continue
        rows.append(src)
        cols.append(dst)
        vals.append(_edge_lengths(metric, nodes[src], nodes[dst]))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    graph = coo_matrix((vals, (rows, cols)), shape=(nodes.shape[0],) * 2).tocsr()
    dist = dijkstra(graph, directed=False)
    dist = 0.5 * (dist + dist.T)
    return GroundMetric(grid, axes, nodes, dist, "graph_geodesic")
