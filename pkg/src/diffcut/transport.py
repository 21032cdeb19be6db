"""Earth mover's distance between cutting-spring clouds and parameter transfer.

The transport problem between ``m`` uniform source points and ``n`` uniform
target points is solved exactly with a transportation (network) simplex over
integer flows: every source supplies ``n`` units and every target demands
``m`` units, so optimal flows are integers and ``flow / (m n)`` is the flow
matrix with marginals ``1/m`` and ``1/n``. Degenerate pivots are avoided by
the classical perturbation of the supplies, which makes every basic solution
strictly positive and rules out cycling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

logger = logging.getLogger(__name__)


class TransportError(ValueError):
    pass


@dataclass(frozen=True)
class SpringCloud:
    """2D coordinates of cutting springs on the cut interface with uniform weights."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or len(pts) == 0:
            raise TransportError("a spring cloud needs a nonempty (n, d) coordinate array")
        object.__setattr__(self, "points", pts)

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self.points), 1.0 / len(self.points))

    @classmethod
    def from_cut(cls, cut) -> "SpringCloud":
        return cls(cut.spring_coordinates_2d())


@dataclass(frozen=True)
class EMDResult:
    flow: np.ndarray  # (m, n), entries sum to 1
    cost: float
    units: np.ndarray  # integer flow in units of 1 / (m n)
    pivots: int


def squared_distances(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = p[:, None, :] - q[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _northwest_corner(supply: np.ndarray, demand: np.ndarray):
    """Initial basic solution as (row, col, flow) arrays of length m + n - 1."""
    m, n = len(supply), len(demand)
    rows, cols, flows = [], [], []
    s, d = supply.copy(), demand.copy()
    i = j = 0
    while i < m and j < n:
        q = min(s[i], d[j])
        rows.append(i)
        cols.append(j)
        flows.append(q)
        s[i] -= q
        d[j] -= q
        if s[i] == 0 and i < m - 1:
            i += 1
        elif d[j] == 0:
            j += 1
        else:
            i += 1
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(flows, dtype=np.int64)


@njit(cache=True)
def _simplex(cost, brow, bcol, bflow, tol, limit):
    """Transportation simplex with block pricing on a spanning-tree basis.

    Nodes ``0..m-1`` are sources and ``m..m+n-1`` targets; basis cell ``e``
    joins ``brow[e]`` and ``m + bcol[e]``. Returns the pivot count, or -1 when
    ``limit`` is exceeded.
    """
    m, n = cost.shape
    nn = m + n
    ne = len(brow)
    deg = np.zeros(nn + 1, dtype=np.int64)
    adj_node = np.empty(2 * ne, dtype=np.int64)
    adj_edge = np.empty(2 * ne, dtype=np.int64)
    parent = np.empty(nn, dtype=np.int64)
    pedge = np.empty(nn, dtype=np.int64)
    depth = np.empty(nn, dtype=np.int64)
    pot = np.empty(nn)
    stack = np.empty(nn, dtype=np.int64)
    path = np.empty(nn, dtype=np.int64)
    side = np.empty(nn, dtype=np.int64)
    block = max(int(np.sqrt(m * n)), min(m * n, 64))
    cursor = 0
    pivots = 0
    while True:
        # adjacency of the basis tree (CSR)
        deg[:] = 0
        for e in range(ne):
            deg[brow[e] + 1] += 1
            deg[m + bcol[e] + 1] += 1
        for k in range(nn):
            deg[k + 1] += deg[k]
        fill = deg[:nn].copy()
        for e in range(ne):
            a, b = brow[e], m + bcol[e]
            adj_node[fill[a]] = b
            adj_edge[fill[a]] = e
            fill[a] += 1
            adj_node[fill[b]] = a
            adj_edge[fill[b]] = e
            fill[b] += 1
        # potentials u_i + v_j = c_ij along the tree, rooted at source 0
        parent[:] = -2
        parent[0] = -1
        pedge[0] = -1
        depth[0] = 0
        pot[0] = 0.0
        top = 0
        stack[0] = 0
        while top >= 0:
            a = stack[top]
            top -= 1
            for k in range(deg[a], deg[a + 1]):
                b = adj_node[k]
                if parent[b] == -2:
                    e = adj_edge[k]
                    parent[b] = a
                    pedge[b] = e
                    depth[b] = depth[a] + 1
                    pot[b] = cost[brow[e], bcol[e]] - pot[a]
                    top += 1
                    stack[top] = b
        # block pricing: scan cells cyclically from where the last scan
        # stopped and take the best candidate of the first block holding one
        best = -tol
        i0, j0 = -1, -1
        scanned = 0
        while scanned < m * n:
            stop = min(scanned + block, m * n)
            for k in range(scanned, stop):
                c = (cursor + k) % (m * n)
                i, j = c // n, c % n
                r = cost[i, j] - pot[i] - pot[m + j]
                if r < best:
                    best, i0, j0 = r, i, j
            scanned = stop
            if i0 >= 0:
                break
        cursor = (cursor + scanned) % (m * n)
        if i0 < 0:
            return pivots
        if pivots >= limit:
            return -1
        # tree path from target j0 to source i0: edges from the target side
        # in walk order, then the source side reversed
        a, b = i0, m + j0
        na, nb = 0, 0
        while a != b:
            if depth[b] >= depth[a]:
                path[nb] = pedge[b]
                nb += 1
                b = parent[b]
            else:
                side[na] = pedge[a]
                na += 1
                a = parent[a]
        for k in range(na):
            path[nb + k] = side[na - 1 - k]
        total = nb + na
        # edges at even positions lose flow
        theta = -1
        leave = -1
        for k in range(0, total, 2):
            e = path[k]
            if theta < 0 or bflow[e] < theta:
                theta = bflow[e]
                leave = e
        for k in range(total):
            e = path[k]
            if k % 2 == 0:
                bflow[e] -= theta
            else:
                bflow[e] += theta
        brow[leave] = i0
        bcol[leave] = j0
        bflow[leave] = theta
        pivots += 1


def solve_emd(source: SpringCloud, target: SpringCloud, max_pivots: int | None = None) -> EMDResult:
    """Exact EMD with squared Euclidean ground cost and uniform marginals."""
    p, q = source.points, target.points
    if p.shape[1] != q.shape[1]:
        raise TransportError("source and target dimensions differ")
    m, n = len(p), len(q)
    cost = squared_distances(p, q)
    # a basic flow is scale * f + delta with |delta| <= m, recovered exactly below
    scale = 2 * m + 1
    supply = np.full(m, n * scale + 1, dtype=np.int64)
    demand = np.full(n, m * scale, dtype=np.int64)
    demand[-1] += m
    brow, bcol, bflow = _northwest_corner(supply, demand)
    tol = 1e-12 * max(1.0, float(cost.max()))
    limit = max_pivots if max_pivots is not None else 50 * (m + n) * max(m, n) + 100
    pivots = _simplex(cost, brow, bcol, bflow, tol, limit)
    if pivots < 0:
        raise TransportError(f"network simplex did not converge in {limit} pivots")
    flow = np.zeros((m, n), dtype=np.int64)
    flow[brow, bcol] = bflow
    units = (flow + m) // scale
    total = m * n
    f = units / total
    c = float(np.sum(units * cost) / total)
    logger.debug("emd %dx%d solved in %d pivots, cost %.6g", m, n, pivots, c)
    return EMDResult(f, c, units, int(pivots))


def transfer_params(flow: np.ndarray, source_values) -> np.ndarray:
    """Barycentric transfer ``target_j = sum_i f_ij s_i / sum_i f_ij``."""
    f = np.asarray(flow, dtype=float)
    s = np.asarray(source_values, dtype=float)
    if len(s) != f.shape[0]:
        raise TransportError(f"flow has {f.shape[0]} source rows but {len(s)} source values were given")
    col = f.sum(axis=0)
    if np.any(col <= 0):
        raise TransportError("a target spring receives no mass")
    # offsets from the source minimum make a constant field copy bit-exactly
    base = s.min(axis=0)
    out = np.tensordot(f, s - base, axes=(0, 0))
    return base + out / col.reshape((-1,) + (1,) * (s.ndim - 1))


def average_transfer(source_values, n_target: int) -> np.ndarray:
    """Broadcast the source mean to every target spring."""
    s = np.asarray(source_values, dtype=float)
    if len(s) == 0:
        raise TransportError("empty source parameters")
    return np.broadcast_to(s.mean(axis=0), (n_target,) + s.shape[1:]).copy()


def transfer_between(source_cut, source_values, target_cut) -> np.ndarray:
    """Transfer per-spring values between two cut meshes through their interface EMD."""
    res = solve_emd(SpringCloud.from_cut(source_cut), SpringCloud.from_cut(target_cut))
    return transfer_params(res.flow, source_values)
