"""Penalty contact with the knife and the ground, cutting springs and damage."""

from __future__ import annotations

import numpy as np

from diffcut.autodiff import ops
from diffcut.autodiff.tape import tape_of, value
from diffcut.knife import KnifeGeometry, frank_wolfe_local, knife_sdf, prism_sdf
from diffcut.mesh import CutMesh

Y_AXIS = np.array([0.0, 1.0, 0.0])
TANGENT_MASK = np.array([1.0, 0.0, 1.0])


def friction(fn, vt, mu, kf):
    """Smooth Coulomb friction ``-mu |fn| tanh(kf |vt|) vt / |vt|``.

    ``fn`` has shape (M,), ``vt`` (M, 3); ``mu`` and ``kf`` are scalars or
    (M,). The force is taken as ``-mu |fn| s(r) vt`` with ``s(r) = tanh(kf r)/r``,
    which is smooth through ``vt = 0``.
    """
    fnv, vtv = np.asarray(value(fn), dtype=float), np.asarray(value(vt), dtype=float)
    muv, kfv = np.asarray(value(mu), dtype=float), np.asarray(value(kf), dtype=float)
    r = np.sqrt(np.einsum("mc,mc->m", vtv, vtv))
    z = kfv * r
    small = z < 1e-4
    r_safe = np.where(small, 1.0, r)
    th = np.tanh(z)
    s = np.where(small, kfv * (1.0 - z * z / 3.0), th / r_safe)
    mag = muv * np.abs(fnv)
    out = -(mag * s)[:, None] * vtv

    tape = tape_of(fn, vt, mu, kf)
    if tape is None:
        return out

    sech2 = 1.0 - th * th
    # (ds/dr) / r, with the series limit near zero
    ds_over_r = np.where(small, -2.0 / 3.0 * kfv**3, (kfv * sech2 * r_safe - th) / r_safe**3)
    ds_dkf = sech2

    def vjp(g):
        g = np.asarray(g)
        gv_dot = np.einsum("mc,mc->m", g, vtv)
        gvt = -(mag * s)[:, None] * g - (mag * ds_over_r * gv_dot)[:, None] * vtv
        common = -s * gv_dot
        gfn = common * muv * np.sign(fnv)
        gmu = ops.unbroadcast(common * np.abs(fnv), np.shape(muv))
        gkf = ops.unbroadcast(-mag * ds_dkf * gv_dot, np.shape(kfv))
        return gfn, gvt, gmu, gkf

    return tape.record(out, (fn, vt, mu, kf), vjp)


def normal_magnitude(pen, vn, ke, kd, damping: bool = True):
    """``max(0, ke pen^2 - kd pen vn)``; scaling damping by ``pen`` keeps it continuous at contact onset."""
    f = ke * ops.square(pen)
    if damping:
        f = f - kd * pen * vn
    return ops.relu(f)


def gravity_forces(mass: np.ndarray, g: float) -> np.ndarray:
    f = np.zeros((len(mass), 3))
    f[:, 1] = -g * mass
    return f


def ground_forces(x, v, prm: dict, damping: bool = True, with_friction: bool = True, skip=None):
    """Half-space ground at y = 0 against vertex spheres of radius ``ground_radius``.

    Only vertices below the contact radius are evaluated (the force is exactly
    zero elsewhere); ``skip`` masks out vertices whose force is irrelevant.
    """
    xv = value(x)
    n = len(xv)
    near = xv[:, 1] < value(prm["ground_radius"])
    if skip is not None:
        near &= ~skip
    idx = np.nonzero(near)[0]
    if len(idx) == 0:
        return np.zeros((n, 3))
    xs, vs = ops.take_rows(x, idx), ops.take_rows(v, idx)
    y = ops.getitem(xs, (slice(None), 1))
    vy = ops.getitem(vs, (slice(None), 1))
    pen = ops.relu(prm["ground_radius"] - y)
    fn = normal_magnitude(pen, vy, prm["ground_ke"], prm["ground_kd"], damping)
    f = ops.mul(ops.reshape(fn, (-1, 1)), Y_AXIS)
    if with_friction:
        vt = ops.mul(vs, TANGENT_MASK)
        f = f + friction(fn, vt, prm["ground_mu"], prm["ground_kf"])
    return ops.add_rows(f, idx, n)


def touching_ground(x: np.ndarray, ground_radius: float) -> np.ndarray:
    return x[:, 1] < ground_radius


def boundary_mask(x: np.ndarray, cut_x: float, ground_radius: float, distance: float = 0.01) -> np.ndarray:
    """Vertices that touch the ground and lie at least ``distance`` from the cutting plane."""
    return touching_ground(x, ground_radius) & (np.abs(x[:, 0] - cut_x) >= distance)


def _per_section(p, idx):
    return p if np.ndim(value(p)) == 0 else ops.take_rows(p, idx)


class KnifeContact:
    """Knife contact on the material-filled sections of every cut edge."""

    def __init__(self, cut: CutMesh, geom: KnifeGeometry, fw_iters: int = 20, damping: bool = True, with_friction: bool = True):
        self.cut = cut
        self.geom = geom
        self.fw_iters = fw_iters
        self.damping = damping
        self.with_friction = with_friction
        self.parents = cut.vn_parents
        self.lo = cut.sec_range[:, 0]
        self.hi = cut.sec_range[:, 1]
        self.side = cut.vn_side
        self.spring = cut.vn_edge
        self.n_vertices = cut.base.n_vertices
        self.n_springs = cut.n_springs

    def active_sections(self, xv: np.ndarray, knife_pos: np.ndarray, radius) -> tuple[np.ndarray, np.ndarray]:
        """Indices of sections that may touch the contact shell, and their FW edge coordinate."""
        if len(self.lo) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        xi = xv[self.parents[:, 0]]
        xj = xv[self.parents[:, 1]]
        a = xi + self.lo[:, None] * (xj - xi) - knife_pos
        b = xi + self.hi[:, None] * (xj - xi) - knife_pos
        d1 = prism_sdf(self.geom, a, self.side)[0]
        d2 = prism_sdf(self.geom, b, self.side)[0]
        length = np.linalg.norm(b - a, axis=1)
        r = np.broadcast_to(np.asarray(radius, dtype=float), (self.n_springs,))[self.spring]
        # lower bound of the SDF on the segment from its 1-Lipschitz property
        active = np.nonzero(0.5 * (d1 + d2 - length) <= r)[0]
        if len(active) == 0:
            return active, np.zeros(0)
        u = frank_wolfe_local(self.geom, a[active], b[active], self.fw_iters, self.side[active])
        t = self.lo[active] + u * (self.hi[active] - self.lo[active])
        return active, t

    def forces(self, x, v, knife_pos, knife_vel, prm: dict, sections=None):
        """Vertex forces, per-spring knife force magnitude and the knife reaction force.

        ``sections`` may carry a precomputed ``(active, t)`` pair for the same
        primal state, which skips the section search on taped replays.
        """
        if sections is None:
            sections = self.active_sections(value(x), value(knife_pos), value(prm["sdf_radius"]))
        active, t = sections
        if len(active) == 0:
            return np.zeros((self.n_vertices, 3)), np.zeros(self.n_springs), np.zeros(3)
        idx = self.parents[active]
        w = np.stack([1.0 - t, t], axis=1)
        sidx = self.spring[active]

        p = ops.combine(x, idx, w)
        pv = ops.combine(v, idx, w)
        d, n = knife_sdf(ops.sub(p, knife_pos), self.geom, self.side[active])
        pen = ops.relu(_per_section(prm["sdf_radius"], sidx) - d)
        vrel = ops.sub(pv, knife_vel)
        vn = ops.dot_rows(vrel, n)
        fn = normal_magnitude(pen, vn, _per_section(prm["sdf_ke"], sidx), _per_section(prm["sdf_kd"], sidx), self.damping)
        f = ops.mul(ops.reshape(fn, (-1, 1)), n)
        if self.with_friction:
            vt = vrel - ops.mul(ops.reshape(vn, (-1, 1)), n)
            f = f + friction(fn, vt, _per_section(prm["sdf_mu"], sidx), _per_section(prm["sdf_kf"], sidx))

        vertex_f = ops.distribute(f, idx, w, self.n_vertices)
        spring_f = ops.add_rows(ops.norm_rows(f), sidx, self.n_springs)
        reaction = -ops.sum(f, axis=0)
        return vertex_f, spring_f, reaction


def damage(k, spring_force, softness):
    """Linear stiffness loss ``max(0, k - softness * |f_knife|)``."""
    return ops.relu(k - softness * spring_force)


class CuttingSprings:
    """Zero-rest-length spring-dampers between paired virtual nodes."""

    def __init__(self, cut: CutMesh):
        self.n_vertices = cut.base.n_vertices
        a, b = cut.springs[:, 0], cut.springs[:, 1]
        self.idx_a, self.idx_b = cut.vn_parents[a], cut.vn_parents[b]
        self.w_a = np.stack([1.0 - cut.vn_u[a], cut.vn_u[a]], axis=1)
        self.w_b = np.stack([1.0 - cut.vn_u[b], cut.vn_u[b]], axis=1)
        self.idx = np.concatenate([self.idx_a, self.idx_b])
        self.w = np.concatenate([self.w_a, self.w_b])

    def extension(self, x):
        return ops.combine(x, self.idx_a, self.w_a) - ops.combine(x, self.idx_b, self.w_b)

    def forces(self, x, v, k, kd):
        if len(self.idx_a) == 0:
            return np.zeros((self.n_vertices, 3))
        dx = self.extension(x)
        dv = ops.combine(v, self.idx_a, self.w_a) - ops.combine(v, self.idx_b, self.w_b)
        fa = -(ops.reshape(k, (-1, 1)) * dx) - ops.mul(_column(kd), dv)
        both = ops.concatenate([fa, -fa], axis=0)
        return ops.distribute(both, self.idx, self.w, self.n_vertices)

    def energy(self, x: np.ndarray, k: np.ndarray) -> float:
        if len(self.idx_a) == 0:
            return 0.0
        dx = self.extension(x)
        return float(0.5 * np.sum(k * np.einsum("sc,sc->s", dx, dx)))


def _column(p):
    return p if np.ndim(value(p)) == 0 else ops.reshape(p, (-1, 1))
