"""Stable Neo-Hookean elasticity with strain-rate damping on tetrahedra.

Strain energy density::

    psi(F) = mu/2 (I_C - 3) + lam/2 (J - alpha)^2 - mu/2 log(I_C + 1)

with ``alpha = 1 + 3 mu / (4 lam)``, the value for which the first
Piola-Kirchhoff stress vanishes at ``F = I``. Writing ``lam (J - alpha)`` as
``lam (J - 1) - 3 mu / 4`` keeps the alpha dependence explicit when
differentiating with respect to the Lame parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from diffcut.autodiff.tape import tape_of, value
from diffcut.mesh import TetMesh, edge_matrices
from diffcut.params import MATERIALS


class InversionError(FloatingPointError):
    def __init__(self, element: int, j: float, step: int | None = None) -> None:
        at = "" if step is None else f" at step {step}"
        super().__init__(f"element {element} inverted (J = {j:.3e}){at}")
        self.element = element
        self.step = step


def lame(young, poisson):
    """Lame parameters ``(lam, mu)``; works on Vars as well as floats."""
    lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    mu = young / (2.0 * (1.0 + poisson))
    return lam, mu


def rest_alpha(lam, mu):
    return 1.0 + 0.75 * mu / lam


@dataclass(frozen=True)
class Material:
    young: float
    poisson: float
    density: float

    def __post_init__(self):
        if not 0.0 < self.poisson < 0.5:
            raise ValueError(f"Poisson ratio must be in (0, 0.5), got {self.poisson}")
        if self.young <= 0 or self.density <= 0:
            raise ValueError("Young's modulus and density must be positive")

    @classmethod
    def preset(cls, name: str) -> "Material":
        m = MATERIALS[name]
        return cls(m["young"], m["poisson"], m["density"])

    @property
    def lam(self) -> float:
        return lame(self.young, self.poisson)[0]

    @property
    def mu(self) -> float:
        return lame(self.young, self.poisson)[1]

    @property
    def alpha(self) -> float:
        return rest_alpha(self.lam, self.mu)


def deformation_gradient(x: np.ndarray, mesh: TetMesh) -> np.ndarray:
    """Per-tet ``F = Ds Dm^-1``."""
    return edge_matrices(x, mesh.tets) @ mesh.dm_inv


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross moves axes around and dominates the step time on small meshes
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _cofactor(f: np.ndarray) -> np.ndarray:
    a, b, c = f[..., 0], f[..., 1], f[..., 2]
    return np.stack([_cross(b, c), _cross(c, a), _cross(a, b)], axis=-1)


def energy_density(f: np.ndarray, lam: float, mu: float) -> np.ndarray:
    ic = np.sum(f * f, axis=(-2, -1))
    j = np.linalg.det(f)
    alpha = rest_alpha(lam, mu)
    return 0.5 * mu * (ic - 3.0) + 0.5 * lam * (j - alpha) ** 2 - 0.5 * mu * np.log(ic + 1.0)


def first_piola(f: np.ndarray, lam: float, mu: float) -> np.ndarray:
    ic = np.sum(f * f, axis=(-2, -1))
    cof = _cofactor(f)
    j = np.sum(f[..., 0] * cof[..., 0], axis=-1)
    r = 1.0 / (ic + 1.0)
    return (mu * (1.0 - r))[..., None, None] * f + (lam * (j - 1.0) - 0.75 * mu)[..., None, None] * cof


def elastic_energy(x: np.ndarray, mesh: TetMesh, lam: float, mu: float) -> float:
    """Total weighted strain energy ``sum_e w_e V_e psi(F_e)``."""
    psi = energy_density(deformation_gradient(x, mesh), lam, mu)
    return float(np.sum(mesh.tet_weight * mesh.rest_volume * psi))


@njit(cache=True)
def _tet_frames(x, v, tets, dm_inv, e):
    f = np.zeros((3, 3))
    fd = np.zeros((3, 3))
    i0 = tets[e, 0]
    for c in range(3):
        ic = tets[e, c + 1]
        for r in range(3):
            dx = x[ic, r] - x[i0, r]
            dv = v[ic, r] - v[i0, r]
            for k in range(3):
                f[r, k] += dx * dm_inv[e, c, k]
                fd[r, k] += dv * dm_inv[e, c, k]
    return f, fd


@njit(cache=True)
def _cof3(f):
    cof = np.empty((3, 3))
    for col in range(3):
        a, b = (col + 1) % 3, (col + 2) % 3
        cof[0, col] = f[1, a] * f[2, b] - f[2, a] * f[1, b]
        cof[1, col] = f[2, a] * f[0, b] - f[0, a] * f[2, b]
        cof[2, col] = f[0, a] * f[1, b] - f[1, a] * f[0, b]
    return cof


@njit(cache=True)
def _elastic_kernel(x, v, tets, dm_inv, scale, lam, mu, kd):
    n = x.shape[0]
    out = np.zeros((n, 3))
    bad, bad_j = -1, 0.0
    for e in range(tets.shape[0]):
        f, fd = _tet_frames(x, v, tets, dm_inv, e)
        cof = _cof3(f)
        j = f[0, 0] * cof[0, 0] + f[1, 0] * cof[1, 0] + f[2, 0] * cof[2, 0]
        if j <= 0.0 and bad < 0:
            bad, bad_j = e, j
        ic = 0.0
        for r in range(3):
            for k in range(3):
                ic += f[r, k] * f[r, k]
        a = mu * (1.0 - 1.0 / (ic + 1.0))
        s = lam * (j - 1.0) - 0.75 * mu
        p = a * f + s * cof + kd * fd
        for c in range(3):
            for r in range(3):
                h = 0.0
                for k in range(3):
                    h += p[r, k] * dm_inv[e, c, k]
                h *= scale[e]
                out[tets[e, 0], r] += h
                out[tets[e, c + 1], r] -= h
    return out, bad, bad_j


@njit(cache=True)
def _elastic_vjp_kernel(x, v, tets, dm_inv, scale, lam, mu, kd, g, want_x, want_v):
    n = x.shape[0]
    gx = np.zeros((n, 3))
    gv = np.zeros((n, 3))
    glam, gmu, gk = 0.0, 0.0, 0.0
    for e in range(tets.shape[0]):
        f, fd = _tet_frames(x, v, tets, dm_inv, e)
        cof = _cof3(f)
        j = f[0, 0] * cof[0, 0] + f[1, 0] * cof[1, 0] + f[2, 0] * cof[2, 0]
        ic = 0.0
        for r in range(3):
            for k in range(3):
                ic += f[r, k] * f[r, k]
        rr = 1.0 / (ic + 1.0)
        s = lam * (j - 1.0) - 0.75 * mu
        # cotangent of P
        gp = np.zeros((3, 3))
        i0 = tets[e, 0]
        for c in range(3):
            ic1 = tets[e, c + 1]
            for r in range(3):
                gh = scale[e] * (g[i0, r] - g[ic1, r])
                for k in range(3):
                    gp[r, k] += gh * dm_inv[e, c, k]
        fg, cg, dg = 0.0, 0.0, 0.0
        for r in range(3):
            for k in range(3):
                fg += f[r, k] * gp[r, k]
                cg += cof[r, k] * gp[r, k]
                dg += fd[r, k] * gp[r, k]
        glam += (j - 1.0) * cg
        gmu += (1.0 - rr) * fg - 0.75 * cg
        gk += dg
        if want_x:
            gf = mu * (1.0 - rr) * gp + 2.0 * mu * rr * rr * fg * f + lam * cg * cof
            for col in range(3):
                a, b = (col + 1) % 3, (col + 2) % 3
                for r in range(3):
                    r1, r2 = (r + 1) % 3, (r + 2) % 3
                    gf[r, col] += s * (
                        gp[r1, a] * f[r2, b] - gp[r2, a] * f[r1, b] + f[r1, a] * gp[r2, b] - f[r2, a] * gp[r1, b]
                    )
            _scatter_edge(gx, gf, tets, dm_inv, e, 1.0)
        if want_v:
            _scatter_edge(gv, gp, tets, dm_inv, e, kd)
    return gx, gv, glam, gmu, gk


@njit(cache=True)
def _scatter_edge(out, gf, tets, dm_inv, e, w):
    for c in range(3):
        for r in range(3):
            gd = 0.0
            for k in range(3):
                gd += gf[r, k] * dm_inv[e, c, k]
            gd *= w
            out[tets[e, c + 1], r] += gd
            out[tets[e, 0], r] -= gd


def elastic_forces(x, v, lam, mu, kdamp, mesh: TetMesh, step: int | None = None):
    """Elastic plus strain-rate damping forces on every vertex.

    The damping stress is ``kdamp * dF/dt``. Any of ``x, v, lam, mu, kdamp``
    may be a Var.
    """
    xv = np.ascontiguousarray(value(x), dtype=float)
    vv = np.ascontiguousarray(value(v), dtype=float)
    lv, mv, kv = float(value(lam)), float(value(mu)), float(value(kdamp))
    scale = mesh.tet_weight * mesh.rest_volume
    out, bad, bad_j = _elastic_kernel(xv, vv, mesh.tets, mesh.dm_inv, scale, lv, mv, kv)
    if bad >= 0:
        raise InversionError(int(bad), float(bad_j), step)

    tape = tape_of(x, v, lam, mu, kdamp)
    if tape is None:
        return out

    def vjp(g):
        gx, gv, glam, gmu, gk = _elastic_vjp_kernel(
            xv, vv, mesh.tets, mesh.dm_inv, scale, lv, mv, kv,
            np.ascontiguousarray(g, dtype=float), tape_of(x) is not None, tape_of(v) is not None,
        )
        return gx, gv, glam, gmu, gk

    return tape.record(out, (x, v, lam, mu, kdamp), vjp)
