"""Analytic knife signed distance field and edge closest-point search.

The blade cross-section lives in the local (x, y) plane: a flat cutting edge
of width ``edge_dim`` at y = 0, a short bevel up to ``tip_height`` where the
width reaches ``spine_dim``, and straight flanks up to ``spine_height``. The
section is extruded along z over ``depth``. The knife position is the centre
of the cutting edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit

from diffcut.autodiff.tape import tape_of, value

MM = 1e-3
# how far the open flank of a half knife is pushed out (m)
HALF_KNIFE_REACH = 1.0


@dataclass(frozen=True)
class KnifeGeometry:
    edge_dim: float = 0.08 * MM
    spine_dim: float = 2.0 * MM
    spine_height: float = 40.0 * MM
    tip_height: float = 0.04 * MM
    depth: float = 150.0 * MM
    infinite: bool = False

    def __post_init__(self):
        dims = (self.edge_dim, self.spine_dim, self.spine_height, self.tip_height, self.depth)
        if min(dims) <= 0:
            raise ValueError(f"knife dimensions must be positive, got {dims}")
        if self.edge_dim >= self.spine_dim:
            raise ValueError("edge_dim must be smaller than spine_dim")
        if self.tip_height >= self.spine_height:
            raise ValueError("tip_height must be smaller than spine_height")

    def polygon(self, side: int = 0) -> np.ndarray:
        """Counter-clockwise cross-section vertices.

        ``side`` = -1 keeps only the flank facing -x and pushes the other one
        far away (and vice versa for +1). Material on one side of the cut only
        ever sees its own flank that way, even at the blade centre.
        """
        e, s = self.edge_dim / 2, self.spine_dim / 2
        tip, top = self.tip_height, self.spine_height
        if side == 0:
            pts = [(-e, 0), (e, 0), (s, tip), (s, top), (-s, top), (-s, tip)]
        elif side < 0:
            w = HALF_KNIFE_REACH
            pts = [(-e, 0), (w, 0), (w, top), (-s, top), (-s, tip)]
        else:
            w = HALF_KNIFE_REACH
            pts = [(-w, 0), (e, 0), (s, tip), (s, top), (-w, top)]
        return np.array(pts, dtype=float)


@dataclass
class KnifePose:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))


@lru_cache(maxsize=32)
def _polygon_table(geom: KnifeGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Vertices of the full and both half cross-sections, padded to a common length."""
    polys = [geom.polygon(s) for s in (-1, 0, 1)]
    table = np.zeros((3, max(len(p) for p in polys), 2))
    counts = np.zeros(3, dtype=np.int64)
    for k, p in enumerate(polys):
        table[k, : len(p)] = p
        counts[k] = len(p)
    return table, counts


@njit(cache=True)
def _polygon_point(px, py, poly, count, out):
    """Signed distance of one point to a convex CCW polygon.

    Fills ``out`` with (d, gx, gy, hxx, hxy, hyy, tie).
    """
    best_plane = -np.inf
    second = -np.inf
    bnx = 0.0
    bny = 0.0
    inside = True
    for k in range(count):
        ax, ay = poly[k, 0], poly[k, 1]
        kb = k + 1 if k + 1 < count else 0
        ex, ey = poly[kb, 0] - ax, poly[kb, 1] - ay
        el = np.sqrt(ex * ex + ey * ey)
        nx, ny = ey / el, -ex / el
        s = (px - ax) * nx + (py - ay) * ny
        if s > 0.0:
            inside = False
        if s > best_plane:
            second = best_plane
            best_plane = s
            bnx, bny = nx, ny
        elif s > second:
            second = s
    if inside:
        out[0] = best_plane
        out[1] = bnx
        out[2] = bny
        out[3] = 0.0
        out[4] = 0.0
        out[5] = 0.0
        out[6] = 1.0 if best_plane == second else 0.0
        return
    best = np.inf
    bdx = 0.0
    bdy = 0.0
    corner = False
    for k in range(count):
        ax, ay = poly[k, 0], poly[k, 1]
        kb = k + 1 if k + 1 < count else 0
        ex, ey = poly[kb, 0] - ax, poly[kb, 1] - ay
        rx, ry = px - ax, py - ay
        t = (rx * ex + ry * ey) / (ex * ex + ey * ey)
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        dx, dy = rx - t * ex, ry - t * ey
        dist = np.sqrt(dx * dx + dy * dy)
        if dist < best:
            best = dist
            bdx, bdy = dx, dy
            corner = t == 0.0 or t == 1.0
    gx, gy = bdx / best, bdy / best
    out[0] = best
    out[1] = gx
    out[2] = gy
    if corner:
        out[3] = (1.0 - gx * gx) / best
        out[4] = -gx * gy / best
        out[5] = (1.0 - gy * gy) / best
    else:
        out[3] = 0.0
        out[4] = 0.0
        out[5] = 0.0
    out[6] = 0.0


@njit(cache=True)
def _prism_point(qx, qy, qz, poly, count, half_depth, infinite, n, h, work):
    """SDF of the extruded section at one point; writes the normal into ``n`` and Hessian into ``h``.

    Returns (d, singular).
    """
    _polygon_point(qx, qy, poly, count, work)
    d2, g2x, g2y = work[0], work[1], work[2]
    hxx, hxy, hyy = work[3], work[4], work[5]
    tie = work[6] != 0.0
    for i in range(3):
        n[i] = 0.0
        for j in range(3):
            h[i, j] = 0.0
    if infinite:
        d = d2
        n[0], n[1] = g2x, g2y
        h[0, 0], h[0, 1], h[1, 0], h[1, 1] = hxx, hxy, hxy, hyy
    else:
        sz = -1.0 if qz < 0.0 else 1.0
        dz = abs(qz) - half_depth
        if d2 > 0.0 and dz > 0.0:
            d = np.sqrt(d2 * d2 + dz * dz)
            n[0], n[1], n[2] = g2x * d2 / d, g2y * d2 / d, sz * dz / d
            a = (g2x, g2y, 0.0)
            c = (0.0, 0.0, sz)
            for i in range(3):
                for j in range(3):
                    h[i, j] = (a[i] * a[j] + c[i] * c[j] - n[i] * n[j]) / d
            h[0, 0] += d2 * hxx / d
            h[0, 1] += d2 * hxy / d
            h[1, 0] += d2 * hxy / d
            h[1, 1] += d2 * hyy / d
        elif d2 > 0.0:
            d = d2
            n[0], n[1] = g2x, g2y
            h[0, 0], h[0, 1], h[1, 0], h[1, 1] = hxx, hxy, hxy, hyy
        elif dz > 0.0:
            d = dz
            n[2] = sz
        elif dz > d2:
            d = dz
            n[2] = sz
        else:
            d = d2
            n[0], n[1] = g2x, g2y
            if dz == d2:
                tie = True
    singular = tie and d < 0.0
    if singular:
        n[0], n[1], n[2] = 0.0, 1.0, 0.0
        for i in range(3):
            for j in range(3):
                h[i, j] = 0.0
    return d, singular


@njit(cache=True)
def _prism_batch(q, side, table, counts, half_depth, infinite, d, n, h, singular):
    work = np.empty(7)
    hh = np.empty((3, 3))
    for m in range(q.shape[0]):
        k = side[m] + 1
        dm, sm = _prism_point(q[m, 0], q[m, 1], q[m, 2], table[k], counts[k], half_depth, infinite, n[m], hh, work)
        d[m] = dm
        singular[m] = sm
        for i in range(3):
            for j in range(3):
                h[m, i, j] = hh[i, j]


@njit(cache=True)
def _frank_wolfe_batch(a, b, side, table, counts, half_depth, infinite, iters, u_out):
    work = np.empty(7)
    hh = np.empty((3, 3))
    nn = np.empty(3)
    for m in range(a.shape[0]):
        k = side[m] + 1
        ex, ey, ez = b[m, 0] - a[m, 0], b[m, 1] - a[m, 1], b[m, 2] - a[m, 2]
        u = 0.5
        for i in range(iters + 1):
            _prism_point(a[m, 0] + u * ex, a[m, 1] + u * ey, a[m, 2] + u * ez, table[k], counts[k], half_depth, infinite, nn, hh, work)
            delta = nn[0] * ex + nn[1] * ey + nn[2] * ez
            s = 1.0 if delta < 0.0 else 0.0
            u = u + (2.0 / (2.0 + i)) * (s - u)
        u_out[m] = u


def _sides(side, m: int) -> np.ndarray:
    return np.ascontiguousarray(np.broadcast_to(np.asarray(side, dtype=np.int64), (m,)))


def prism_sdf(geom: KnifeGeometry, q: np.ndarray, side=0, want_hessian: bool = False):
    """SDF of the extruded knife for local points ``q`` (M, 3).

    ``side`` is a scalar or one value per point selecting the full knife (0)
    or a half knife (-1, +1). Returns ``(d, n, hessian, singular)``; the
    Hessian is None unless requested.
    """
    q = np.ascontiguousarray(q, dtype=float).reshape(-1, 3)
    m = len(q)
    table, counts = _polygon_table(geom)
    d = np.empty(m)
    n = np.empty((m, 3))
    h = np.empty((m, 3, 3))
    singular = np.empty(m, dtype=np.bool_)
    _prism_batch(q, _sides(side, m), table, counts, geom.depth / 2, geom.infinite, d, n, h, singular)
    return d, n, (h if want_hessian else None), singular


def sdf_eval(geom: KnifeGeometry, pose: KnifePose, p) -> np.ndarray:
    """Signed distance (m) from point(s) ``p`` to the knife."""
    p = np.asarray(p, dtype=float)
    d, _, _, _ = prism_sdf(geom, p.reshape(-1, 3) - pose.position)
    return d.reshape(p.shape[:-1])


def sdf_grad(geom: KnifeGeometry, pose: KnifePose, p):
    """Unit SDF gradient at ``p`` and a flag marking the fallback (+y) at singular points."""
    p = np.asarray(p, dtype=float)
    _, n, _, singular = prism_sdf(geom, p.reshape(-1, 3) - pose.position)
    return n.reshape(p.shape), singular.reshape(p.shape[:-1])


def knife_sdf(q, geom: KnifeGeometry, side=0):
    """Differentiable ``(d, n)`` at local points ``q`` (Var or array, shape (M, 3)).

    The adjoint uses ``dd/dq = n`` and ``dn/dq = H`` (the SDF Hessian, which
    is symmetric).
    """
    qv = value(q)
    tape = tape_of(q)
    d, n, hess, _ = prism_sdf(geom, qv, side, want_hessian=tape is not None)
    if tape is None:
        return d, n

    def vjp(gs):
        gd, gn = gs
        gq = np.zeros_like(qv)
        if gd is not None:
            gq = gq + np.asarray(gd)[:, None] * n
        if gn is not None:
            gq = gq + np.einsum("mij,mj->mi", hess, gn)
        return (gq,)

    return tape.record_multi((d, n), (q,), vjp)


def closest_point_frank_wolfe(geom: KnifeGeometry, pose: KnifePose, p1, p2, max_iters: int = 20, side=0):
    """Barycentric coordinate of the lowest-SDF point on edge(s) ``(p1, p2)``.

    Vectorized over leading dimensions. The loop runs for ``i = 0..max_iters``
    with step ``2 / (2 + i)``, so the final step size is ``2 / (2 + max_iters)``.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    shape = p1.shape[:-1]
    a = p1.reshape(-1, 3) - pose.position
    b = p2.reshape(-1, 3) - pose.position
    return frank_wolfe_local(geom, a, b, max_iters, side).reshape(shape)


def frank_wolfe_local(geom: KnifeGeometry, a: np.ndarray, b: np.ndarray, max_iters: int = 20, side=0) -> np.ndarray:
    """Frank-Wolfe on knife-local edge endpoints ``a``, ``b`` of shape (M, 3)."""
    a = np.ascontiguousarray(a, dtype=float).reshape(-1, 3)
    b = np.ascontiguousarray(b, dtype=float).reshape(-1, 3)
    table, counts = _polygon_table(geom)
    u = np.empty(len(a))
    _frank_wolfe_batch(a, b, _sides(side, len(a)), table, counts, geom.depth / 2, geom.infinite, int(max_iters), u)
    return u
