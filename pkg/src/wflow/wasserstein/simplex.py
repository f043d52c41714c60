"""Network simplex for the balanced transportation problem.

The solver works on the complete bipartite graph between supply nodes
``0..n-1`` and demand nodes ``n..n+m-1`` plus an artificial root joined to
every node.  Arcs are uncapacitated, so non-basic arcs carry zero flow and
only the ``n + m`` spanning-tree arcs need flow storage.  Cycling is
prevented with Cunningham's strongly feasible tree rule; entering arcs are
chosen by block search pricing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

MASS_TOLERANCE = 1e-8


class TransportError(ValueError):
    """Raised for infeasible or malformed transport problems."""


@dataclass(frozen=True)
class SimplexResult:
    cost: float
    rows: np.ndarray
    cols: np.ndarray
    flows: np.ndarray
    u: np.ndarray
    v: np.ndarray
    pivots: int

    def dense_plan(self, n: int, m: int) -> np.ndarray:
        plan = np.zeros((n, m))
        plan[self.rows, self.cols] = self.flows
        return plan


@nb.njit(cache=True)
def _rebuild(n_nodes, root, arc_src, arc_dst, arc_cost, tree_arc,
             parent, pred, up, depth, pot, head, nxt, adj_slot, queue):
    # Adjacency of the current spanning tree as linked lists.
    head[:] = -1
    n_slots = tree_arc.shape[0]
    for s in range(n_slots):
        a = tree_arc[s]
        x = arc_src[a]
        y = arc_dst[a]
        e = 2 * s
        adj_slot[e] = s
        nxt[e] = head[x]
        head[x] = e
        adj_slot[e + 1] = s
        nxt[e + 1] = head[y]
        head[y] = e + 1
    parent[root] = -1
    pred[root] = -1
    depth[root] = 0
    pot[root] = 0.0
    qh = 0
    qt = 1
    queue[0] = root
    while qh < qt:
        x = queue[qh]
        qh += 1
        e = head[x]
        while e != -1:
            s = adj_slot[e]
            if s != pred[x]:
                a = tree_arc[s]
                if arc_src[a] == x:
                    y = arc_dst[a]
                    up[y] = False
                    pot[y] = pot[x] + arc_cost[a]
                else:
                    y = arc_src[a]
                    up[y] = True
                    pot[y] = pot[x] - arc_cost[a]
                parent[y] = x
                pred[y] = s
                depth[y] = depth[x] + 1
                queue[qt] = y
                qt += 1
            e = nxt[e]
    return qt


@nb.njit(cache=True)
def _network_simplex(a, b, C, big_m, tol, max_pivots):
    n = a.shape[0]
    m = b.shape[0]
    n_real = n * m
    root = n + m
    n_nodes = n + m + 1
    n_art = n + m

    # Only artificial arcs need explicit endpoint storage; real arcs are
    # addressed as k -> (k // m, n + k % m).
    arc_src = np.empty(n_real + n_art, dtype=np.int64)
    arc_dst = np.empty(n_real + n_art, dtype=np.int64)
    arc_cost = np.empty(n_real + n_art)
    for k in range(n_real):
        arc_src[k] = k // m
        arc_dst[k] = n + k % m
        arc_cost[k] = C[k // m, k % m]
    for i in range(n):
        arc_src[n_real + i] = i
        arc_dst[n_real + i] = root
        arc_cost[n_real + i] = big_m
    for j in range(m):
        arc_src[n_real + n + j] = root
        arc_dst[n_real + n + j] = n + j
        arc_cost[n_real + n + j] = big_m

    n_slots = n + m
    tree_arc = np.empty(n_slots, dtype=np.int64)
    tree_flow = np.empty(n_slots)
    for i in range(n):
        tree_arc[i] = n_real + i
        tree_flow[i] = a[i]
    for j in range(m):
        tree_arc[n + j] = n_real + n + j
        tree_flow[n + j] = b[j]

    parent = np.empty(n_nodes, dtype=np.int64)
    pred = np.empty(n_nodes, dtype=np.int64)
    up = np.empty(n_nodes, dtype=np.bool_)
    depth = np.empty(n_nodes, dtype=np.int64)
    pot = np.empty(n_nodes)
    head = np.empty(n_nodes, dtype=np.int64)
    nxt = np.empty(2 * n_slots, dtype=np.int64)
    adj_slot = np.empty(2 * n_slots, dtype=np.int64)
    queue = np.empty(n_nodes, dtype=np.int64)
    _rebuild(n_nodes, root, arc_src, arc_dst, arc_cost, tree_arc,
             parent, pred, up, depth, pot, head, nxt, adj_slot, queue)

    block = max(int(np.sqrt(n_real)), 10)
    cursor = 0
    pivots = 0
    status = 0
    while True:
        # Block search pricing over the real arcs.
        best = -tol
        enter = -1
        scanned = 0
        while scanned < n_real:
            stop = min(block, n_real - scanned)
            for _ in range(stop):
                k = cursor
                i = k // m
                j = k % m
                rc = C[i, j] + pot[i] - pot[n + j]
                if rc < best:
                    best = rc
                    enter = k
                cursor += 1
                if cursor == n_real:
                    cursor = 0
            scanned += stop
            if enter >= 0:
                break
        if enter < 0:
            break
        if pivots >= max_pivots:
            status = 1
            break
        pivots += 1

        u = enter // m
        v = n + enter % m
        # Join node of the cycle closed by the entering arc.
        x = u
        y = v
        while depth[x] > depth[y]:
            x = parent[x]
        while depth[y] > depth[x]:
            y = parent[y]
        while x != y:
            x = parent[x]
            y = parent[y]
        join = x

        # The cycle is traversed join -> u -> v -> join.  On the u side,
        # flow goes parent -> child; on the v side, child -> parent.  The
        # leaving arc is the last blocking arc in that order.
        delta_u = np.inf
        leave_u = -1
        x = u
        while x != join:
            if up[x]:
                f = tree_flow[pred[x]]
                if f < delta_u:
                    delta_u = f
                    leave_u = x
            x = parent[x]
        delta_v = np.inf
        leave_v = -1
        x = v
        while x != join:
            if not up[x]:
                f = tree_flow[pred[x]]
                if f <= delta_v:
                    delta_v = f
                    leave_v = x
            x = parent[x]
        if delta_v <= delta_u:
            delta = delta_v
            leave_node = leave_v
        else:
            delta = delta_u
            leave_node = leave_u
        if leave_node < 0:
            status = 2
            break

        if delta > 0.0:
            x = u
            while x != join:
                s = pred[x]
                if up[x]:
                    tree_flow[s] = max(tree_flow[s] - delta, 0.0)
                else:
                    tree_flow[s] += delta
                x = parent[x]
            x = v
            while x != join:
                s = pred[x]
                if up[x]:
                    tree_flow[s] += delta
                else:
                    tree_flow[s] = max(tree_flow[s] - delta, 0.0)
                x = parent[x]
        slot = pred[leave_node]
        tree_arc[slot] = enter
        tree_flow[slot] = delta
        _rebuild(n_nodes, root, arc_src, arc_dst, arc_cost, tree_arc,
                 parent, pred, up, depth, pot, head, nxt, adj_slot, queue)

    return tree_arc, tree_flow, pot, pivots, status


def network_simplex(a, b, C, max_pivots: int | None = None) -> SimplexResult:
    """Exact minimum of ``sum(plan * C)`` over couplings of ``a`` and ``b``.

    Parameters
    ----------
    a, b : array_like
        Nonnegative marginal weights with equal total mass.
    C : array_like, shape (len(a), len(b))
        Ground cost matrix.
    max_pivots : int, optional
        Safety cap on simplex pivots.

    Returns
    -------
    SimplexResult
        Optimal cost, the sparse optimal plan and dual potentials ``u``, ``v``
        with ``u[i] + v[j] <= C[i, j]`` up to rounding.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or C.shape != (a.size, b.size):
        raise TransportError(f"shape mismatch: a{a.shape}, b{b.shape}, C{C.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(C))):
        raise TransportError("non-finite weights or costs")
    if np.any(a < 0) or np.any(b < 0):
        raise TransportError("negative marginal weights")
    gap = abs(a.sum() - b.sum())
    if gap > MASS_TOLERANCE * max(1.0, a.sum()):
        raise TransportError(f"infeasible marginals: mass mismatch {gap:.3e}")

    # Zero-mass nodes would break strong feasibility of the initial tree.
    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    a_red = a[rows]
    b_red = b[cols] * (a_red.sum() / b[cols].sum())
    C_red = np.ascontiguousarray(C[np.ix_(rows, cols)])
    cmax = float(np.max(np.abs(C_red))) if C_red.size else 0.0
    big_m = (cmax + 1.0) * (rows.size + cols.size + 1)
    tol = 1e-12 * max(cmax, 1.0)
    if max_pivots is None:
        max_pivots = 200 * (rows.size + cols.size) + 100_000
    tree_arc, tree_flow, pot, pivots, status = _network_simplex(
        a_red, b_red, C_red, big_m, tol, max_pivots)
    if status == 1:
        raise TransportError(f"network simplex hit the pivot cap ({max_pivots})")
    if status == 2:
        raise TransportError("unbounded pivot in network simplex")

    n, m = rows.size, cols.size
    real = tree_arc < n * m
    art_flow = tree_flow[~real]
    if np.any(art_flow > MASS_TOLERANCE * a_red.sum()):
        raise TransportError("artificial arcs carry flow at optimum")
    k = tree_arc[real]
    flows = tree_flow[real]
    keep = flows > 0
    i_red = k[keep] // m
    j_red = k[keep] % m
    flows = flows[keep]
    cost = float(np.sum(flows * C_red[i_red, j_red]))
    # pot_j - pot_i = C_ij on basic arcs; u_i + v_j <= C_ij is dual feasibility.
    u = np.full(a.size, np.nan)
    v = np.full(b.size, np.nan)
    u[rows] = -pot[:n]
    v[cols] = pot[n:n + m]
    return SimplexResult(cost, rows[i_red], cols[j_red], flows, u, v, int(pivots))
