"""Tetrahedral meshes and virtual-node cut preprocessing.

The cut preprocessing runs once before simulation. Every tetrahedron crossed by
the cutting surface is duplicated: one copy keeps the material on the negative
side of the surface, the other the material on the positive side. Vertices of a
copy that lie on its empty side are replaced by ghost vertices, so the two
copies only interact through cutting springs. Springs join the two virtual
nodes that sit at the intersection of an original edge with the surface.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

logger = logging.getLogger(__name__)

MIN_TET_VOLUME = 1e-15
DEGENERATE_SHIFT = 1e-9

# local vertex pairs of the six tet edges
TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


class MeshError(ValueError):
    """Malformed or invalid mesh input."""


class InvertedElementError(MeshError):
    def __init__(self, element: int, volume: float) -> None:
        super().__init__(f"element {element} is inverted or degenerate (signed volume {volume:.3e} m^3)")
        self.element = element
        self.volume = volume


class CutError(MeshError):
    def __init__(self, element: int, message: str) -> None:
        super().__init__(f"element {element}: {message}")
        self.element = element


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Rest-state tetrahedral discretization.

    ``tet_weight`` scales the mass and elastic energy of each element; it is 1
    everywhere except for the two halves of a duplicated element.
    """

    vertices: np.ndarray
    tets: np.ndarray
    density: float
    tet_weight: np.ndarray
    dm_inv: np.ndarray
    rest_volume: np.ndarray
    vertex_mass: np.ndarray

    @classmethod
    def build(cls, vertices, tets, density: float, tet_weight=None) -> "TetMesh":
        vertices = np.ascontiguousarray(vertices, dtype=float).reshape(-1, 3)
        tets = np.ascontiguousarray(tets, dtype=np.int64).reshape(-1, 4)
        n = len(vertices)
        if len(tets) and (tets.min() < 0 or tets.max() >= n):
            bad = int(np.nonzero((tets < 0).any(axis=1) | (tets >= n).any(axis=1))[0][0])
            raise MeshError(f"element {bad} references a vertex index outside [0, {n})")
        if not density > 0:
            raise MeshError(f"density must be positive, got {density}")
        if tet_weight is None:
            tet_weight = np.ones(len(tets))
        tet_weight = np.asarray(tet_weight, dtype=float)

        dm = edge_matrices(vertices, tets)
        det = np.linalg.det(dm) if len(tets) else np.zeros(0)
        volume = det / 6.0
        bad = np.nonzero(~(volume > MIN_TET_VOLUME))[0]
        if len(bad):
            raise InvertedElementError(int(bad[0]), float(volume[bad[0]]))
        dm_inv = np.linalg.inv(dm) if len(tets) else np.zeros((0, 3, 3))

        elem_mass = density * tet_weight * volume
        mass = np.bincount(tets.ravel(), weights=np.repeat(elem_mass / 4.0, 4), minlength=n)
        for arr in (vertices, tets, tet_weight, dm_inv, volume, mass):
            arr.setflags(write=False)
        return cls(vertices, tets, float(density), tet_weight, dm_inv, volume, mass)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def total_volume(self) -> float:
        return float(np.sum(self.tet_weight * self.rest_volume))

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.vertex_mass))

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs, lexicographically ordered."""
        pairs = np.concatenate([self.tets[:, [a, b]] for a, b in TET_EDGES])
        pairs.sort(axis=1)
        return np.unique(pairs, axis=0)

    def with_density(self, density: float) -> "TetMesh":
        return TetMesh.build(self.vertices, self.tets, density, self.tet_weight)

    def translated(self, offset) -> "TetMesh":
        return TetMesh.build(self.vertices + np.asarray(offset, dtype=float), self.tets, self.density, self.tet_weight)


def edge_matrices(x: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Per-tet 3x3 matrices whose columns are ``x1 - x0, x2 - x0, x3 - x0``."""
    p = x[tets]
    return np.swapaxes(p[:, 1:] - p[:, :1], 1, 2)


def load_mesh(path, density: float) -> TetMesh:
    """Read the ASCII tet format: ``v x y z`` and ``t i j k l`` lines, ``#`` comments."""
    vertices, tets = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "v" and len(parts) == 4:
                    vertices.append([float(p) for p in parts[1:]])
                elif parts[0] == "t" and len(parts) == 5:
                    tets.append([int(p) for p in parts[1:]])
                else:
                    raise ValueError
            except ValueError:
                raise MeshError(f"{path}:{lineno}: cannot parse {raw.strip()!r}") from None
    if not vertices or not tets:
        raise MeshError(f"{path}: mesh needs at least one vertex and one tet")
    return TetMesh.build(np.array(vertices), np.array(tets), density)


def save_mesh(path, mesh: TetMesh) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {mesh.n_vertices} vertices, {mesh.n_tets} tets\n")
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for i, j, k, l in mesh.tets:
            fh.write(f"t {i} {j} {k} {l}\n")


def box_mesh(shape=(2, 2, 2), size=(0.02, 0.02, 0.02), origin=(0.0, 0.0, 0.0), density: float = 1000.0) -> TetMesh:
    """Regular grid of ``shape`` cells, each split into six tets along its main diagonal."""
    nx, ny, nz = shape
    axes = [np.linspace(o, o + s, n + 1) for o, s, n in zip(origin, size, shape)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    # Kuhn subdivision: one tet per permutation of the unit steps
    perms = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))
    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for perm in perms:
                    c = [i, j, k]
                    ids = [vid(*c)]
                    for axis in perm:
                        c[axis] += 1
                        ids.append(vid(*c))
                    tets.append(ids)
    tets = np.array(tets)
    return TetMesh.build(vertices, _orient(vertices, tets), density)


def cube_five_tets(size: float = 1.0, density: float = 1000.0) -> TetMesh:
    """A single cube split into five tets (four corners plus the central one)."""
    c = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float) * size
    # corner index = 4i + 2j + k
    tets = np.array([[0, 1, 2, 4], [3, 1, 2, 7], [5, 1, 4, 7], [6, 2, 4, 7], [1, 2, 4, 7]])
    return TetMesh.build(c, _orient(c, tets), density)


def _orient(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    det = np.linalg.det(edge_matrices(vertices, tets))
    tets = tets.copy()
    flip = det < 0
    tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
    return tets


@dataclass(frozen=True, eq=False)
class CutSurface:
    """Prescribed cutting surface as a triangle soup.

    Triangle winding defines the surface normal; the positive side is the one
    the normal points into.
    """

    triangles: np.ndarray
    plane_x: float | None = None

    @classmethod
    def plane(cls, x: float, extent: float = 10.0) -> "CutSurface":
        """Vertical plane ``x = const`` with normal +x."""
        e = extent
        quad = np.array([[x, -e, -e], [x, e, -e], [x, e, e], [x, -e, e]])
        tris = np.array([[quad[0], quad[1], quad[2]], [quad[0], quad[2], quad[3]]])
        return cls(tris, float(x))

    def shifted(self, offset: float) -> "CutSurface":
        normals = _unit_normals(self.triangles)
        tris = self.triangles + offset * normals[:, None, :]
        return CutSurface(tris, None if self.plane_x is None else self.plane_x + offset)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance to the plane of the first triangle (exact for planar surfaces)."""
        if self.plane_x is not None:
            return points[:, 0] - self.plane_x
        n = _unit_normals(self.triangles[:1])[0]
        return (points - self.triangles[0, 0]) @ n


def _unit_normals(tris: np.ndarray) -> np.ndarray:
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    return n / np.linalg.norm(n, axis=1, keepdims=True)


@dataclass(frozen=True)
class VirtualNode:
    parent_i: int
    parent_j: int
    u: float
    side: int


def virtual_node_state(node: VirtualNode, positions: np.ndarray, velocities: np.ndarray):
    """Position and velocity of a virtual node from its two parents."""
    u = node.u
    x = (1.0 - u) * positions[node.parent_i] + u * positions[node.parent_j]
    v = (1.0 - u) * velocities[node.parent_i] + u * velocities[node.parent_j]
    return x, v


@dataclass(frozen=True, eq=False)
class CutMesh:
    """A TetMesh augmented with duplicated elements, virtual nodes and springs.

    Virtual nodes are stored as parallel arrays. Node ``k`` lies on the edge
    ``vn_parents[k]`` of the duplicated mesh at coordinate ``vn_u[k]``; springs
    pair the side -1 and side +1 nodes of the same original edge. Contact
    sections are the material-filled part of each cut edge, described as the
    parameter range ``sec_range`` along ``vn_parents``.
    """

    base: TetMesh
    original: TetMesh
    surface: CutSurface
    cut_edges: np.ndarray
    vn_parents: np.ndarray
    vn_u: np.ndarray
    vn_side: np.ndarray
    vn_edge: np.ndarray
    springs: np.ndarray
    tet_side: np.ndarray
    tet_origin: np.ndarray
    fill_volume: np.ndarray
    ghost_origin: np.ndarray
    sec_vn: np.ndarray = field(init=False)
    sec_range: np.ndarray = field(init=False)

    def __post_init__(self):
        # the filled part of a cut edge runs from the side's own vertex to its virtual node
        n_orig = self.original.n_vertices
        first_is_real = self.vn_parents[:, 0] < n_orig
        lo = np.where(first_is_real, 0.0, self.vn_u)
        hi = np.where(first_is_real, self.vn_u, 1.0)
        object.__setattr__(self, "sec_vn", np.arange(len(self.vn_u)))
        object.__setattr__(self, "sec_range", np.stack([lo, hi], axis=1))

    @property
    def n_springs(self) -> int:
        return len(self.springs)

    @property
    def n_virtual_nodes(self) -> int:
        return len(self.vn_u)

    @property
    def n_duplicated(self) -> int:
        return int(np.count_nonzero(self.tet_side > 0))

    def virtual_node(self, k: int) -> VirtualNode:
        i, j = self.vn_parents[k]
        return VirtualNode(int(i), int(j), float(self.vn_u[k]), int(self.vn_side[k]))

    def virtual_positions(self, x: np.ndarray) -> np.ndarray:
        u = self.vn_u[:, None]
        return (1.0 - u) * x[self.vn_parents[:, 0]] + u * x[self.vn_parents[:, 1]]

    def spring_rest_positions(self) -> np.ndarray:
        """Rest position of each spring (the intersection point of its edge)."""
        return self.virtual_positions(self.base.vertices)[self.springs[:, 0]]

    def spring_coordinates_2d(self) -> np.ndarray:
        """(y, z) of each spring on the cutting interface."""
        return self.spring_rest_positions()[:, 1:3].copy()


def _segment_triangle_hits(p0: np.ndarray, p1: np.ndarray, tris: np.ndarray):
    """Intersection parameter of each segment with the triangle soup.

    Returns ``t`` (nan where no hit) and the orientation sign of ``p1 - p0``
    against the hit triangle's normal.
    """
    d = p1 - p0
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    normal = np.cross(e1, e2)
    t_out = np.full(len(p0), np.nan)
    sign = np.zeros(len(p0))
    for k in range(len(tris)):
        h = np.cross(d, e2[k])
        a = h @ e1[k]
        ok = np.abs(a) > 1e-300
        f = np.where(ok, 1.0 / np.where(ok, a, 1.0), 0.0)
        s = p0 - tris[k, 0]
        bu = f * np.sum(s * h, axis=1)
        q = np.cross(s, e1[k])
        bv = f * np.sum(d * q, axis=1)
        t = f * (q @ e2[k])
        hit = ok & (bu >= 0) & (bv >= 0) & (bu + bv <= 1) & (t >= 0) & (t <= 1) & np.isnan(t_out)
        t_out[hit] = t[hit]
        sign[hit] = np.sign(d[hit] @ normal[k])
    return t_out, sign


def preprocess_cut(mesh: TetMesh, surface: CutSurface) -> CutMesh:
    """Duplicate every element crossed by ``surface`` and insert virtual nodes and springs."""
    sd = surface.signed_distance(mesh.vertices)
    if surface.plane_x is not None:
        on_plane = sd == 0.0
        if on_plane.any():
            edges = mesh.edges()
            both = on_plane[edges[:, 0]] & on_plane[edges[:, 1]]
            if both.any():
                i, j = edges[np.nonzero(both)[0][0]]
                elem = int(np.nonzero(np.isin(mesh.tets, [i]).any(1) & np.isin(mesh.tets, [j]).any(1))[0][0])
                raise CutError(elem, f"edge ({i}, {j}) lies inside the cutting surface")
            warnings.warn(
                f"cutting surface passes through {int(on_plane.sum())} mesh vertices; "
                f"shifting it by {DEGENERATE_SHIFT} m",
                RuntimeWarning,
                stacklevel=2,
            )
            surface = surface.shifted(DEGENERATE_SHIFT)

    edges = mesh.edges()
    x = mesh.vertices
    t, orient = _segment_triangle_hits(x[edges[:, 0]], x[edges[:, 1]], surface.triangles)
    cut_mask = ~np.isnan(t)
    if np.any(cut_mask & ((t == 0.0) | (t == 1.0))):
        k = int(np.nonzero(cut_mask & ((t == 0.0) | (t == 1.0)))[0][0])
        i, j = edges[k]
        elem = int(np.nonzero(np.isin(mesh.tets, [i]).any(1) & np.isin(mesh.tets, [j]).any(1))[0][0])
        raise CutError(elem, f"cutting surface passes exactly through a vertex of edge ({i}, {j})")

    cut_edges = edges[cut_mask]
    cut_u = t[cut_mask]
    # vertex side labels: first endpoint is negative iff the edge runs along the normal
    n_v = mesh.n_vertices
    side = np.zeros(n_v, dtype=np.int64)
    ce_orient = orient[cut_mask]
    for (i, j), o in zip(cut_edges, ce_orient):
        si, sj = (-1, 1) if o > 0 else (1, -1)
        for v, s in ((i, si), (j, sj)):
            if side[v] not in (0, s):
                raise MeshError(f"vertex {v} lies on both sides of the cutting surface")
            side[v] = s
    edge_index = {(int(i), int(j)): k for k, (i, j) in enumerate(cut_edges)}

    # classify tets
    cut_tets = []
    for e, tet in enumerate(mesh.tets):
        n_cut = 0
        for a, b in TET_EDGES:
            key = (int(min(tet[a], tet[b])), int(max(tet[a], tet[b])))
            n_cut += key in edge_index
        if n_cut == 0:
            continue
        s = side[tet]
        if np.any(s == 0):
            raise CutError(e, "element is only partially crossed by the cutting surface")
        # every edge between opposite sides must be cut
        for a, b in TET_EDGES:
            key = (int(min(tet[a], tet[b])), int(max(tet[a], tet[b])))
            if (s[a] != s[b]) != (key in edge_index):
                raise CutError(e, "cutting surface crosses the element inconsistently")
        cut_tets.append(e)

    if not cut_tets:
        base = TetMesh.build(mesh.vertices, mesh.tets, mesh.density)
        empty2 = np.zeros((0, 2), dtype=np.int64)
        return CutMesh(
            base=base,
            original=mesh,
            surface=surface,
            cut_edges=empty2,
            vn_parents=empty2,
            vn_u=np.zeros(0),
            vn_side=np.zeros(0, dtype=np.int64),
            vn_edge=np.zeros(0, dtype=np.int64),
            springs=empty2,
            tet_side=np.zeros(mesh.n_tets, dtype=np.int64),
            tet_origin=np.arange(mesh.n_tets),
            fill_volume=mesh.rest_volume.copy(),
            ghost_origin=np.zeros(0, dtype=np.int64),
        )

    # ghost vertices, created in order of first use
    ghost: dict[tuple[int, int], int] = {}
    ghost_origin = []

    def copy_vertex(v: int, s: int) -> int:
        if side[v] == s:
            return v
        key = (v, s)
        if key not in ghost:
            ghost[key] = n_v + len(ghost_origin)
            ghost_origin.append(v)
        return ghost[key]

    tets = mesh.tets.copy()
    weight = np.ones(mesh.n_tets)
    tet_side = np.zeros(mesh.n_tets, dtype=np.int64)
    tet_origin = list(range(mesh.n_tets))
    fill = list(mesh.rest_volume)
    extra_tets, extra_side = [], []
    normal = _unit_normals(surface.triangles[:1])[0]
    for e in cut_tets:
        tet = mesh.tets[e]
        pts = x[tet]
        vol_neg = _clipped_volume(pts, normal, surface, -1)
        tets[e] = [copy_vertex(int(v), -1) for v in tet]
        weight[e] = 0.5
        tet_side[e] = -1
        fill[e] = vol_neg
        extra_tets.append([copy_vertex(int(v), 1) for v in tet])
        extra_side.append(e)
    n_extra = len(extra_tets)
    tets = np.concatenate([tets, np.array(extra_tets, dtype=np.int64)])
    weight = np.concatenate([weight, np.full(n_extra, 0.5)])
    tet_side = np.concatenate([tet_side, np.ones(n_extra, dtype=np.int64)])
    tet_origin = np.array(tet_origin + extra_side)
    fill = np.array(fill + [mesh.rest_volume[e] - fill[e] for e in extra_side])

    ghost_origin = np.array(ghost_origin, dtype=np.int64)
    vertices = np.concatenate([x, x[ghost_origin]]) if len(ghost_origin) else x.copy()
    base = TetMesh.build(vertices, tets, mesh.density, weight)

    vn_parents, vn_u, vn_side, vn_edge, springs = [], [], [], [], []
    for k, ((i, j), u) in enumerate(zip(cut_edges, cut_u)):
        ids = []
        for s in (-1, 1):
            ids.append(len(vn_u))
            vn_parents.append([copy_vertex(int(i), s), copy_vertex(int(j), s)])
            vn_u.append(u)
            vn_side.append(s)
            vn_edge.append(k)
        springs.append(ids)

    logger.debug("cut preprocessing: %d elements duplicated, %d springs", len(cut_tets), len(springs))
    return CutMesh(
        base=base,
        original=mesh,
        surface=surface,
        cut_edges=np.asarray(cut_edges, dtype=np.int64),
        vn_parents=np.array(vn_parents, dtype=np.int64),
        vn_u=np.array(vn_u, dtype=float),
        vn_side=np.array(vn_side, dtype=np.int64),
        vn_edge=np.array(vn_edge, dtype=np.int64),
        springs=np.array(springs, dtype=np.int64),
        tet_side=tet_side,
        tet_origin=tet_origin,
        fill_volume=fill,
        ghost_origin=ghost_origin,
    )


def _clipped_volume(pts: np.ndarray, normal: np.ndarray, surface: CutSurface, s: int) -> float:
    """Volume of the part of a tet on side ``s`` of the (locally planar) surface."""
    sd = surface.signed_distance(pts)
    keep = [pts[a] for a in range(4) if np.sign(sd[a]) == s]
    for a, b in TET_EDGES:
        if np.sign(sd[a]) != np.sign(sd[b]):
            t = sd[a] / (sd[a] - sd[b])
            keep.append((1 - t) * pts[a] + t * pts[b])
    return float(ConvexHull(np.array(keep)).volume)


CACHE_HEADER = "# diffcut cut-mesh cache v1"


def save_cut_mesh(path, cut: CutMesh) -> None:
    """Write a deterministic ASCII cache of a preprocessed cut mesh."""
    b = cut.base
    o = cut.original
    lines = [CACHE_HEADER, f"density {b.density:.17g}"]
    lines.append(f"original_vertices {o.n_vertices}")
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in o.vertices]
    lines.append(f"original_tets {o.n_tets}")
    lines += [" ".join(str(int(i)) for i in t) for t in o.tets]
    tris = cut.surface.triangles
    plane = "none" if cut.surface.plane_x is None else f"{cut.surface.plane_x:.17g}"
    lines.append(f"surface {len(tris)} {plane}")
    lines += [" ".join(f"{c:.17g}" for c in tri.ravel()) for tri in tris]
    lines.append(f"ghosts {len(cut.ghost_origin)}")
    lines += [str(int(g)) for g in cut.ghost_origin]
    lines.append(f"tets {b.n_tets}")
    lines += [
        f"{t[0]} {t[1]} {t[2]} {t[3]} {w:.17g} {s} {org} {fv:.17g}"
        for t, w, s, org, fv in zip(b.tets, b.tet_weight, cut.tet_side, cut.tet_origin, cut.fill_volume)
    ]
    lines.append(f"cut_edges {len(cut.cut_edges)}")
    lines += [f"{i} {j}" for i, j in cut.cut_edges]
    lines.append(f"virtual_nodes {cut.n_virtual_nodes}")
    lines += [
        f"{p[0]} {p[1]} {u:.17g} {s} {e}"
        for p, u, s, e in zip(cut.vn_parents, cut.vn_u, cut.vn_side, cut.vn_edge)
    ]
    lines.append(f"springs {cut.n_springs}")
    lines += [f"{a} {b_}" for a, b_ in cut.springs]
    Path(path).write_text("\n".join(lines) + "\n")


def load_cut_mesh(path) -> CutMesh:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != CACHE_HEADER:
        raise MeshError(f"{path}: not a cut-mesh cache")
    pos = 1

    def section(name):
        nonlocal pos
        head = text[pos].split()
        if head[0] != name:
            raise MeshError(f"{path}: expected section {name!r}, found {head[0]!r}")
        count = int(head[1])
        rows = text[pos + 1 : pos + 1 + count]
        pos += 1 + count
        return head, rows

    density = float(text[pos].split()[1])
    pos += 1
    _, rows = section("original_vertices")
    ov = np.array([[float(c) for c in r.split()] for r in rows]).reshape(-1, 3)
    _, rows = section("original_tets")
    ot = np.array([[int(c) for c in r.split()] for r in rows]).reshape(-1, 4)
    head, rows = section("surface")
    tris = np.array([[float(c) for c in r.split()] for r in rows]).reshape(-1, 3, 3)
    surface = CutSurface(tris, None if head[2] == "none" else float(head[2]))
    _, rows = section("ghosts")
    ghost_origin = np.array([int(r) for r in rows], dtype=np.int64)
    _, rows = section("tets")
    parts = [r.split() for r in rows]
    tets = np.array([[int(c) for c in p[:4]] for p in parts], dtype=np.int64).reshape(-1, 4)
    weight = np.array([float(p[4]) for p in parts])
    tet_side = np.array([int(p[5]) for p in parts], dtype=np.int64)
    tet_origin = np.array([int(p[6]) for p in parts], dtype=np.int64)
    fill = np.array([float(p[7]) for p in parts])
    _, rows = section("cut_edges")
    cut_edges = np.array([[int(c) for c in r.split()] for r in rows], dtype=np.int64).reshape(-1, 2)
    _, rows = section("virtual_nodes")
    parts = [r.split() for r in rows]
    vn_parents = np.array([[int(p[0]), int(p[1])] for p in parts], dtype=np.int64).reshape(-1, 2)
    vn_u = np.array([float(p[2]) for p in parts])
    vn_side = np.array([int(p[3]) for p in parts], dtype=np.int64)
    vn_edge = np.array([int(p[4]) for p in parts], dtype=np.int64)
    _, rows = section("springs")
    springs = np.array([[int(c) for c in r.split()] for r in rows], dtype=np.int64).reshape(-1, 2)

    original = TetMesh.build(ov, ot, density)
    vertices = np.concatenate([ov, ov[ghost_origin]]) if len(ghost_origin) else ov.copy()
    base = TetMesh.build(vertices, tets, density, weight)
    return CutMesh(
        base=base,
        original=original,
        surface=surface,
        cut_edges=cut_edges,
        vn_parents=vn_parents,
        vn_u=vn_u,
        vn_side=vn_side,
        vn_edge=vn_edge,
        springs=springs,
        tet_side=tet_side,
        tet_origin=tet_origin,
        fill_volume=fill,
        ghost_origin=ghost_origin,
    )
