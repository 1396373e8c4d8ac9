"""Triangulated Riemann surfaces Z(P) as lifted branched covers of CP^1.

Geometry is intrinsic: a :class:`SurfaceMesh` carries one length per edge
and every metric quantity (area, angles, curvature, Laplacian weights) is
computed from lengths only.  Vertex embeddings in CP^2 are kept for export
and provenance.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull

from .kostlan import HomogeneousPoly3, evaluate, gradient
from .projective import (
    BranchPoint,
    FiberSystem,
    Pencil,
    RootFindingError,
    _match,
    canonical,
    conformal_factor,
    fiber_roots_batch,
    fs_chord,
    make_fiber_system,
    sphere_to_base,
    track_batch,
)


class StructuralError(ValueError):
    """Connectivity is not a closed orientable 2-manifold."""


class LiftInconsistentError(RuntimeError):
    """Sheet gluing failed; the base triangulation should be refined."""


class SingularCurveError(RuntimeError):
    pass


# -- connectivity -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HalfEdges:
    """Half-edge connectivity of a closed triangle mesh.

    Half-edge ``h = 3 f + i`` runs from ``faces[f, i]`` to
    ``faces[f, (i + 1) % 3]``; ``next`` is implicit.
    """

    faces: np.ndarray
    n_vertices: int
    twin: np.ndarray = field(repr=False)
    edge: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, faces, n_vertices: int | None = None) -> "HalfEdges":
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        V = int(faces.max()) + 1 if n_vertices is None else int(n_vertices)
        if np.any(faces[:, 0] == faces[:, 1]) or np.any(faces[:, 1] == faces[:, 2]) or np.any(faces[:, 0] == faces[:, 2]):
            raise StructuralError("face with a repeated vertex")
        src = faces.reshape(-1)
        dst = faces[:, [1, 2, 0]].reshape(-1)
        key = src * V + dst
        order = np.argsort(key)
        skey = key[order]
        if np.any(skey[1:] == skey[:-1]):
            raise StructuralError("directed edge used twice (non-manifold or inconsistent orientation)")
        tkey = dst * V + src
        pos = np.searchsorted(skey, tkey)
        pos = np.minimum(pos, len(skey) - 1)
        if np.any(skey[pos] != tkey):
            raise StructuralError("boundary edge: mesh is not closed")
        twin = order[pos]
        lo = np.minimum(src, dst)
        hi = np.maximum(src, dst)
        canon = src < dst
        ekey = lo * V + hi
        uniq, edge = np.unique(ekey, return_inverse=True)
        edges = np.stack([uniq // V, uniq % V], axis=1)
        del canon
        used = np.zeros(V, dtype=bool)
        used[src] = True
        if not used.all():
            raise StructuralError("isolated vertex")
        he = cls(faces, V, twin, edge.reshape(-1), edges)
        he._check_vertex_links()
        return he

    @staticmethod
    def next(h):
        return 3 * (h // 3) + (h + 1) % 3

    @staticmethod
    def prev(h):
        return 3 * (h // 3) + (h + 2) % 3

    @property
    def src(self) -> np.ndarray:
        return self.faces.reshape(-1)

    @property
    def dst(self) -> np.ndarray:
        return self.faces[:, [1, 2, 0]].reshape(-1)

    def _check_vertex_links(self):
        # sigma = next o twin permutes half-edges leaving a vertex; one cycle per vertex
        H = len(self.twin)
        sigma = self.next(self.twin)
        g = coo_matrix((np.ones(H), (np.arange(H), sigma)), shape=(H, H))
        ncomp, labels = connected_components(g, directed=True, connection="weak")
        if ncomp != self.n_vertices:
            raise StructuralError(f"vertex links: {ncomp} cycles for {self.n_vertices} vertices (pinched vertex)")
        owner = np.full(ncomp, -1)
        owner[labels] = self.src
        if len(np.unique(owner)) != self.n_vertices:
            raise StructuralError("vertex with more than one link cycle")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def is_connected(self) -> bool:
        e = self.edges
        g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(self.n_vertices,) * 2)
        return connected_components(g, directed=False)[0] == 1


# -- intrinsic triangle geometry ----------------------------------------------

def corner_angles(L: np.ndarray) -> np.ndarray:
    """Corner angles from opposite edge lengths ``L`` (F, 3)."""
    a, b, c = L[:, 0], L[:, 1], L[:, 2]
    A = np.arccos(np.clip((b * b + c * c - a * a) / (2 * b * c), -1, 1))
    B = np.arccos(np.clip((a * a + c * c - b * b) / (2 * a * c), -1, 1))
    C = np.pi - A - B
    return np.stack([A, B, C], axis=1)


def heron(L: np.ndarray) -> np.ndarray:
    """Triangle areas from side lengths, Kahan's stable form of Heron."""
    s = np.sort(L, axis=1)[:, ::-1]
    a, b, c = s[:, 0], s[:, 1], s[:, 2]
    q = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
    return 0.25 * np.sqrt(np.maximum(q, 0.0))


def cotangents(L: np.ndarray) -> np.ndarray:
    """cot of each corner angle, (F, 3)."""
    a2 = L**2
    area = heron(L)
    i, j, k = 0, 1, 2
    out = np.empty_like(L)
    for c, (o1, o2) in enumerate(((1, 2), (2, 0), (0, 1))):
        out[:, c] = (a2[:, o1] + a2[:, o2] - a2[:, c]) / (4 * area)
    del i, j, k
    return out


def mixed_areas_per_corner(L: np.ndarray) -> np.ndarray:
    """Mixed Voronoi area of each corner; rows sum to the triangle area."""
    area = heron(L)
    cot = cotangents(L)
    a2 = L**2
    # Voronoi part for corner c: (|e_c,c+1|^2 cot(c+2) + |e_c,c+2|^2 cot(c+1)) / 8
    vor = np.empty_like(L)
    for c in range(3):
        n1, n2 = (c + 1) % 3, (c + 2) % 3
        # edge (c, n1) is opposite n2; edge (c, n2) is opposite n1
        vor[:, c] = (a2[:, n2] * cot[:, n2] + a2[:, n1] * cot[:, n1]) / 8
    obtuse = cot < 0
    any_obtuse = obtuse.any(axis=1)
    mixed = np.where(any_obtuse[:, None], np.where(obtuse, area[:, None] / 2, area[:, None] / 4), vor)
    return mixed


# -- the mesh -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Closed triangulated surface with intrinsic edge lengths.

    ``provenance[v] = (base vertex, sheet)``; ``embedding[v]`` is the
    canonical CP^2 point of the vertex (absent for abstract meshes).
    """

    faces: np.ndarray
    lengths: np.ndarray
    embedding: np.ndarray | None = None
    provenance: np.ndarray | None = None
    connectivity: HalfEdges | None = field(default=None, repr=False)

    def __post_init__(self):
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "faces", faces)
        he = self.connectivity or HalfEdges.build(faces)
        object.__setattr__(self, "connectivity", he)
        lengths = np.asarray(self.lengths, dtype=np.float64)
        if lengths.shape != (he.n_edges,):
            raise StructuralError(f"need {he.n_edges} edge lengths, got {lengths.shape}")
        if np.any(~(lengths > 0)):
            raise StructuralError("edge lengths must be positive")
        object.__setattr__(self, "lengths", lengths)
        L = self.face_lengths
        s = L.sum(axis=1)
        if np.any(2 * L.max(axis=1) >= s):
            bad = int(np.argmax(2 * L.max(axis=1) - s))
            raise StructuralError(f"face {bad} violates the strict triangle inequality")

    @classmethod
    def from_vertex_positions(cls, faces, positions, **kw) -> "SurfaceMesh":
        """Mesh with Euclidean edge lengths from 3D positions."""
        he = HalfEdges.build(faces)
        pos = np.asarray(positions, dtype=np.float64)
        e = he.edges
        lengths = np.linalg.norm(pos[e[:, 0]] - pos[e[:, 1]], axis=1)
        return cls(he.faces, lengths, connectivity=he, **kw)

    @property
    def n_vertices(self) -> int:
        return self.connectivity.n_vertices

    @property
    def n_edges(self) -> int:
        return self.connectivity.n_edges

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def face_lengths(self) -> np.ndarray:
        """(F, 3) with entry i the length of the edge opposite corner i."""
        el = self.lengths[self.connectivity.edge].reshape(-1, 3)
        # half-edge i goes from corner i to i+1, i.e. it is opposite corner i+2
        return el[:, [1, 2, 0]]

    @cached_property
    def face_areas(self) -> np.ndarray:
        return heron(self.face_lengths)

    @cached_property
    def angles(self) -> np.ndarray:
        return corner_angles(self.face_lengths)

    @cached_property
    def vertex_areas(self) -> np.ndarray:
        return np.bincount(
            self.faces.reshape(-1), weights=mixed_areas_per_corner(self.face_lengths).reshape(-1), minlength=self.n_vertices
        )

    def min_angle(self) -> float:
        return float(self.angles.min())

    def scaled(self, c: float) -> "SurfaceMesh":
        return SurfaceMesh(self.faces, self.lengths * c, self.embedding, self.provenance, self.connectivity)

    def relabeled(self, perm: np.ndarray) -> "SurfaceMesh":
        """Same surface with vertex ``v`` renamed ``perm[v]``."""
        perm = np.asarray(perm)
        he = HalfEdges.build(perm[self.faces], self.n_vertices)
        old = self.connectivity.edges
        lut = {(int(perm[a]), int(perm[b])): l for (a, b), l in zip(old, self.lengths)}
        lengths = np.array([lut.get((a, b), lut.get((b, a))) for a, b in he.edges])
        inv = np.argsort(perm)
        emb = None if self.embedding is None else self.embedding[inv]
        prov = None if self.provenance is None else self.provenance[inv]
        return SurfaceMesh(he.faces, lengths, emb, prov, he)


def flat_torus(nx: int, ny: int, width: float = 1.0, height: float = 1.0) -> SurfaceMesh:
    """Flat torus ``[0, width) x [0, height)`` on an ``nx`` by ``ny`` grid, one diagonal per cell."""
    if nx < 3 or ny < 3:
        raise StructuralError("flat torus grid needs at least 3 cells per direction")
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    i, j = i.ravel(), j.ravel()

    def vid(a, b):
        return (a % nx) * ny + (b % ny)

    v00, v10, v11, v01 = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
    faces = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    he = HalfEdges.build(faces, nx * ny)
    dx, dy = width / nx, height / ny
    a, b = he.edges[:, 0], he.edges[:, 1]
    di = np.abs(a // ny - b // ny)
    dj = np.abs(a % ny - b % ny)
    di = np.minimum(di, nx - di)
    dj = np.minimum(dj, ny - dj)
    lengths = np.hypot(di * dx, dj * dy)
    return SurfaceMesh(he.faces, lengths, connectivity=he)


def euler_genus(mesh: SurfaceMesh) -> tuple[int, int]:
    """(chi, genus) of a closed orientable mesh."""
    he = mesh.connectivity
    if not he.is_connected():
        raise StructuralError("mesh is not connected")
    chi = he.n_vertices - he.n_edges + he.n_faces
    if chi % 2:
        raise StructuralError(f"odd Euler characteristic {chi}")
    return chi, (2 - chi) // 2


def total_area(mesh: SurfaceMesh) -> float:
    return float(math.fsum(mesh.face_areas))


@dataclass(frozen=True, eq=False)
class CurvatureField:
    defect: np.ndarray
    area: np.ndarray
    edges: np.ndarray | None = field(default=None, repr=False)

    @property
    def pointwise(self) -> np.ndarray:
        return self.defect / self.area

    @property
    def sup(self) -> float:
        return float(self.pointwise.max())

    @property
    def inf(self) -> float:
        return float(self.pointwise.min())

    def total(self) -> float:
        return float(math.fsum(self.defect))

    def averaged(self, rings: int = 1) -> np.ndarray:
        """Total defect over total area of the closed ``rings``-neighbourhood of each vertex.

        Pointwise ratios do not converge at irregular vertices; patch averages do.
        """
        if self.edges is None:
            raise ValueError("averaging needs the edge list")
        n = len(self.defect)
        e = self.edges
        star = coo_matrix((np.ones(2 * len(e) + n), (np.r_[e[:, 0], e[:, 1], np.arange(n)], np.r_[e[:, 1], e[:, 0], np.arange(n)])), shape=(n, n)).tocsr()
        D, A = self.defect, self.area
        reach = star
        for _ in range(rings - 1):
            reach = ((reach @ star) > 0).astype(float)
        reach = (reach > 0).astype(float)
        return (reach @ D) / (reach @ A)

    @property
    def sup_averaged(self) -> float:
        return float(self.averaged().max())


def curvature(mesh: SurfaceMesh) -> CurvatureField:
    """Angle defects and mixed Voronoi areas."""
    ang = np.bincount(mesh.faces.reshape(-1), weights=mesh.angles.reshape(-1), minlength=mesh.n_vertices)
    return CurvatureField(2 * np.pi - ang, mesh.vertex_areas, mesh.connectivity.edges)


# -- intrinsic Delaunay flips -------------------------------------------------

def delaunay_flip(mesh: SurfaceMesh, tol: float = 1e-12, max_flips: int | None = None) -> tuple[SurfaceMesh, int]:
    """Flip edges whose opposite angles sum to more than pi, on lengths only."""
    faces = [list(f) for f in mesh.faces]
    length = {}
    for (a, b), l in zip(mesh.connectivity.edges, mesh.lengths):
        length[(int(a), int(b))] = float(l)
        length[(int(b), int(a))] = float(l)
    owner = {}
    for f, (a, b, c) in enumerate(faces):
        owner[(a, b)] = f
        owner[(b, c)] = f
        owner[(c, a)] = f

    def opposite(f, a, b):
        x, y, z = faces[f]
        return {(x, y): z, (y, z): x, (z, x): y}[(a, b)]

    def cot(a, b, c):
        # angle at c in triangle abc
        la, lb, lc = length[(b, c)], length[(a, c)], length[(a, b)]
        s = 0.5 * (la + lb + lc)
        ar = math.sqrt(max(s * (s - la) * (s - lb) * (s - lc), 1e-300))
        return (la * la + lb * lb - lc * lc) / (4 * ar)

    queue = deque((int(a), int(b)) for a, b in mesh.connectivity.edges)
    flips = 0
    limit = max_flips if max_flips is not None else 10 * len(faces)
    while queue and flips < limit:
        a, b = queue.popleft()
        if (a, b) not in owner or (b, a) not in owner:
            continue
        f1, f2 = owner[(a, b)], owner[(b, a)]
        c = opposite(f1, a, b)
        d = opposite(f2, b, a)
        if c == d or (c, d) in length:
            continue
        if cot(a, b, c) + cot(b, a, d) >= -tol:
            continue
        # new diagonal length from the unfolded quad
        lac, lad, lab = length[(a, c)], length[(a, d)], length[(a, b)]
        lbc, lbd = length[(b, c)], length[(b, d)]
        ang1 = math.acos(max(-1.0, min(1.0, (lab**2 + lac**2 - lbc**2) / (2 * lab * lac))))
        ang2 = math.acos(max(-1.0, min(1.0, (lab**2 + lad**2 - lbd**2) / (2 * lab * lad))))
        lcd = math.sqrt(max(lac**2 + lad**2 - 2 * lac * lad * math.cos(ang1 + ang2), 0.0))
        if not lcd > 0:
            continue
        for e in ((a, b), (b, c), (c, a)):
            owner.pop(e, None)
        for e in ((b, a), (a, d), (d, b)):
            owner.pop(e, None)
        del length[(a, b)], length[(b, a)]
        faces[f1] = [a, d, c]
        faces[f2] = [d, b, c]
        for f in (f1, f2):
            x, y, z = faces[f]
            owner[(x, y)] = f
            owner[(y, z)] = f
            owner[(z, x)] = f
        length[(c, d)] = length[(d, c)] = lcd
        flips += 1
        queue.extend([(a, d), (d, b), (b, c), (c, a)])
    if flips == 0:
        return mesh, 0
    he = HalfEdges.build(np.array(faces), mesh.n_vertices)
    lengths = np.array([length[(int(a), int(b))] for a, b in he.edges])
    return SurfaceMesh(he.faces, lengths, mesh.embedding, mesh.provenance, he), flips


# -- base sphere --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SphereMesh:
    """Triangulation of the unit sphere (CP^1 through the Hopf map)."""

    points: np.ndarray
    faces: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    def euler(self) -> int:
        he = HalfEdges.build(self.faces, len(self.points))
        return he.n_vertices - he.n_edges + he.n_faces

    def edges(self) -> np.ndarray:
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def face_diameters(self) -> np.ndarray:
        """Largest edge angle of each face (unit-sphere radians)."""
        p = self.points[self.faces]
        dots = np.stack([np.sum(p[:, i] * p[:, (i + 1) % 3], axis=1) for i in range(3)], axis=1)
        return np.arccos(np.clip(dots, -1, 1)).max(axis=1)


def _icosahedron():
    t = (1 + math.sqrt(5)) / 2
    v = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]],
        dtype=np.float64,
    )
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]],
        dtype=np.int64,
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _orient_outward(points, faces):
    p = points[faces]
    det = np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2]))
    faces = faces.copy()
    flip = det < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def _subdivide(points, faces, mark=None):
    """Insert normalized midpoints on every edge of the marked faces."""
    pts = [p for p in points]
    mid = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in mid:
            m = points[a] + points[b]
            pts.append(m / np.linalg.norm(m))
            mid[key] = len(pts) - 1
        return mid[key]

    out = []
    for n, (a, b, c) in enumerate(faces):
        if mark is not None and not mark[n]:
            out.append((a, b, c))
            continue
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return np.array(pts), np.array(out, dtype=np.int64)


def hull_triangulation(points: np.ndarray) -> np.ndarray:
    """Spherical Delaunay triangulation as the convex hull of unit vectors."""
    hull = ConvexHull(points)
    faces = _orient_outward(points, hull.simplices.astype(np.int64))
    if len(np.unique(faces)) != len(points):
        raise StructuralError("hull dropped points (duplicate or coplanar vertices)")
    return faces


def _angle(p, q):
    return np.arccos(np.clip(np.sum(p * q, axis=-1), -1, 1))


def build_base_sphere(
    level: int,
    refine_near=(),
    radius: float = 0.0,
    rounds: int = 2,
    clearance: float = 0.0,
) -> SphereMesh:
    """Icosahedral sphere subdivided ``level`` times, refined near points.

    Faces with a vertex within ``radius`` (unit-sphere angle) of a listed
    point get ``rounds`` rounds of midpoint refinement followed by a
    spherical Delaunay retriangulation.  Vertices closer than ``clearance``
    to a listed point are pushed out to that distance.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    pts, faces = _icosahedron()
    for _ in range(level):
        pts, faces = _subdivide(pts, faces)
    near = np.asarray(refine_near, dtype=np.float64).reshape(-1, 3)
    if len(near) and radius > 0:
        near = near / np.linalg.norm(near, axis=1, keepdims=True)
        for _ in range(rounds):
            dist = _angle(pts[:, None, :], near[None, :, :]).min(axis=1)
            mark = (dist[faces] <= radius).any(axis=1)
            # faces crossing the disk without a vertex in it
            cen = pts[faces].mean(axis=1)
            cen /= np.linalg.norm(cen, axis=1, keepdims=True)
            mark |= _angle(cen[:, None, :], near[None, :, :]).min(axis=1) <= radius
            if not mark.any():
                break
            pts, _ = _subdivide(pts, faces, mark)
            faces = hull_triangulation(pts)
    if len(near) and clearance > 0:
        pts = _push_away(pts, near, clearance)
        faces = hull_triangulation(pts) if len(near) else faces
    return SphereMesh(pts, _orient_outward(pts, faces))


def _push_away(pts, near, clearance):
    pts = pts.copy()
    clearance = np.broadcast_to(np.asarray(clearance, dtype=np.float64), (len(near),))
    for q, c in zip(near, clearance):
        clearance = float(c)
        ang = _angle(pts, q)
        close = ang < clearance
        for i in np.flatnonzero(close):
            v = pts[i] - np.dot(pts[i], q) * q
            nv = np.linalg.norm(v)
            if nv < 1e-14:
                v = np.cross(q, [1.0, 0.0, 0.0] if abs(q[0]) < 0.9 else [0.0, 1.0, 0.0])
                nv = np.linalg.norm(v)
            v /= nv
            pts[i] = math.cos(clearance) * q + math.sin(clearance) * v
    return pts


def graded_refine(base: SphereMesh, centers, targets, grading: float = 0.5, max_rounds: int = 40) -> SphereMesh:
    """Refine until every face diameter is at most ``max(target, grading * dist)``
    with respect to each center (angles on the unit sphere)."""
    pts, faces = base.points, base.faces
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if len(centers) == 0:
        return base
    for _ in range(max_rounds):
        mesh = SphereMesh(pts, faces)
        diam = mesh.face_diameters()
        dist = _angle(pts[faces][:, :, None, :], centers[None, None, :, :]).min(axis=1)  # (F, C)
        allowed = np.maximum(targets[None, :], grading * dist).min(axis=1)
        mark = diam > allowed
        if not mark.any():
            break
        pts, _ = _subdivide(pts, faces, mark)
        faces = hull_triangulation(pts)
    return SphereMesh(pts, faces)


def mean_edge_angle(base: SphereMesh) -> float:
    e = base.edges()
    return float(_angle(base.points[e[:, 0]], base.points[e[:, 1]]).mean())


def stretch_refine(base: SphereMesh, fs: FiberSystem, target: float, max_rounds: int = 8) -> SphereMesh:
    """Refine base faces until (largest lift stretch) x (face size) <= ``target``.

    Face size is the Fubini-Study diameter on the base, half the unit-sphere
    angle.  The stretch is the conformal factor of the projection, maximized
    over sheets, sampled at the edge midpoints and centroid.  Vertices are
    skipped: the factor blows up like r^(-1/2) at a branch point, while the
    lifted size of a face only shrinks like its square root.
    """
    pts, faces = base.points, base.faces
    wts = np.array([[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5], [1 / 3, 1 / 3, 1 / 3]])
    for _ in range(max_rounds):
        q = np.einsum("sk,fkx->fsx", wts, pts[faces]).reshape(-1, 3)
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        b = sphere_to_base(q)
        w, _ = fiber_roots_batch(fs, b)
        lam = np.nan_to_num(conformal_factor(fs, b, w).max(axis=1), nan=np.inf, posinf=np.inf)
        diam = SphereMesh(pts, faces).face_diameters()
        size = 0.5 * diam * lam.reshape(len(faces), -1).max(axis=1)
        mark = size > target
        if not mark.any():
            break
        pts, _ = _subdivide(pts, faces, mark)
        faces = hull_triangulation(pts)
    return SphereMesh(pts, _orient_outward(pts, faces))


def prepare_base(
    level: int,
    branch_points: list[BranchPoint],
    fiber_system: FiberSystem | None = None,
    rounds: int = 0,
    radius_factor: float = 3.0,
    cluster_fraction: float = 1.0 / 3.0,
    stretch_rounds: int = 8,
) -> SphereMesh:
    """Base triangulation for lifting.

    ``rounds`` rounds of midpoint refinement inside disks of
    ``radius_factor`` base-edge lengths around each branch point (off by
    default), then graded refinement so that faces near a branch point are
    smaller than ``cluster_fraction`` of its distance to the nearest other
    branch point.  The second stage is what keeps branch points from
    sharing a base face.  With a ``fiber_system``, faces whose lift is
    stretched beyond the uniform edge length of ``level`` are refined too.
    """
    base = build_base_sphere(level)
    target = 0.5 * mean_edge_angle(base)
    sph = np.array([bp.sphere for bp in branch_points]).reshape(-1, 3)
    if rounds > 0 and len(sph):
        base = build_base_sphere(level, sph, radius=radius_factor * mean_edge_angle(base), rounds=rounds)
    if fiber_system is not None:
        base = stretch_refine(base, fiber_system, target, stretch_rounds)
    if len(sph) < 2:
        return base
    sep = _angle(sph[:, None, :], sph[None, :, :]) + np.diag(np.full(len(sph), np.inf))
    return graded_refine(base, sph, cluster_fraction * sep.min(axis=1))


# -- lifting ------------------------------------------------------------------

def _edge_perms(fs: FiberSystem, reps, W, edges):
    """Sheet permutations along base edges by root tracking."""
    d = fs.degree
    if d == 1 or len(edges) == 0:
        return np.zeros((len(edges), d), dtype=np.int64)
    ba = reps[edges[:, 0]]
    bb = reps[edges[:, 1]]
    ip = np.sum(np.conj(ba) * bb, axis=1)
    phase = ip / np.abs(ip)
    bb_aligned = bb * np.conj(phase)[:, None]
    w_end, _ = track_batch(fs, ba, bb_aligned, W[edges[:, 0]])
    # the point U(bb e^{-i theta}, w) equals U(bb, e^{i theta} w)
    w_end = w_end * phase[:, None]
    perms = np.empty((len(edges), d), dtype=np.int64)
    for n in range(len(edges)):
        target = W[edges[n, 1]]
        perms[n] = _match(w_end[n], target, 1e-6 * (1 + np.abs(target).max()))
    return perms


def lift_mesh(
    P: HomogeneousPoly3,
    pencil: Pencil,
    base: SphereMesh,
    branch_points: list[BranchPoint] = (),
    flip: bool = True,
) -> SurfaceMesh:
    """Triangulate Z(P) as the d-sheeted cover of ``base``.

    Branch points are inserted as base vertices; over each one the two
    exchanged sheets meet at a single vertex placed at the ramification
    point.
    """
    fs = make_fiber_system(P, pencil)
    d = P.degree
    nb0 = base.n_vertices
    bsph = np.array([bp.sphere for bp in branch_points]).reshape(-1, 3)
    if len(bsph):
        pts = _push_away(base.points, bsph, 0.25 * np.minimum(_local_edge_angle(base, bsph), _min_sep(bsph)))
        pts = np.vstack([pts, bsph])
        faces = hull_triangulation(pts)
    else:
        pts, faces = base.points, base.faces
    nbase = len(pts)
    is_branch = np.zeros(nbase, dtype=bool)
    is_branch[nb0:] = True
    reps = sphere_to_base(pts)
    for n, bp in enumerate(branch_points):
        reps[nb0 + n] = bp.base

    # faces touching two branch vertices cannot be lifted by the fan rule
    if np.any(is_branch[faces].sum(axis=1) > 1):
        raise LiftInconsistentError("two branch points share a base face; refine the base")

    reg = np.flatnonzero(~is_branch)
    W = np.zeros((nbase, d), dtype=np.complex128)
    W[reg], _ = fiber_roots_batch(fs, reps[reg])

    f_edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    f_edges = np.unique(np.sort(f_edges, axis=1), axis=0)
    regular_edges = f_edges[~is_branch[f_edges].any(axis=1)]
    try:
        perms = _edge_perms(fs, reps, W, regular_edges)
    except RootFindingError as exc:
        raise LiftInconsistentError(str(exc)) from exc
    perm_of = {}
    for (a, b), p in zip(regular_edges, perms):
        perm_of[(int(a), int(b))] = p
        inv = np.empty_like(p)
        inv[p] = np.arange(d)
        perm_of[(int(b), int(a))] = inv

    vid = -np.ones((nbase, d), dtype=np.int64)
    vid[reg] = np.arange(len(reg) * d).reshape(-1, d)
    nreg = len(reg) * d

    # rotate branch-incident faces to (beta, a, b)
    has_branch = is_branch[faces].any(axis=1)
    fan = faces[has_branch]
    rot = np.argmax(is_branch[fan], axis=1)
    fan = np.stack([fan[np.arange(len(fan)), (rot + k) % 3] for k in range(3)], axis=1)

    # orbits of lifted link vertices, one union-find per branch vertex
    comp = {}
    for n in range(len(branch_points)):
        beta = nb0 + n
        ring = fan[fan[:, 0] == beta]
        rows = np.concatenate([vid[a] for _, a, _ in ring])
        cols = np.concatenate([vid[b, perm_of[(int(a), int(b))]] for _, a, b in ring])
        local, inv = np.unique(np.concatenate([rows, cols]), return_inverse=True)
        g = coo_matrix((np.ones(len(rows)), (inv[: len(rows)], inv[len(rows) :])), shape=(len(local),) * 2)
        _, lab = connected_components(g, directed=False)
        comp[beta] = dict(zip(local.tolist(), lab.tolist()))

    new_vertices = []  # (embedding, provenance)
    comp_vertex = {}
    next_id = nreg
    for n, bp in enumerate(branch_points):
        beta = nb0 + n
        link = np.unique(fan[fan[:, 0] == beta][:, 1:])
        labels = np.array([comp[beta][v] for v in vid[link].reshape(-1)])
        uniq, counts = np.unique(labels, return_counts=True)
        m = len(link)
        if len(uniq) != d - 1 or sorted(counts.tolist()) != sorted([m] * (d - 2) + [2 * m]):
            raise LiftInconsistentError(
                f"branch vertex {beta}: orbit sizes {sorted(counts.tolist())} for link of length {m}"
            )
        ram = uniq[np.argmax(counts)]
        others = [u for u in uniq if u != ram]
        comp_vertex[(beta, int(ram))] = next_id
        new_vertices.append((bp.point, (beta, -1)))
        next_id += 1
        if others:
            wf, _ = fiber_roots_batch(fs, bp.base[None, :], residual_tol=1e-6)
            wf = wf[0]
            simple = wf[np.argsort(np.abs(wf - bp.w))[2:]]
            spts = canonical(pencil.lift(np.broadcast_to(bp.base, (len(simple), 2)), simple))
            cost = np.zeros((len(others), len(simple)))
            for r, u in enumerate(others):
                lv = np.repeat(link, d)[labels == u]
                sheets = np.tile(np.arange(d), len(link))[labels == u]
                mp = canonical(pencil.lift(reps[lv], W[lv, sheets]))
                cost[r] = fs_chord(spts[:, None, :], mp[None, :, :]).mean(axis=1)
            ri, ci = linear_sum_assignment(cost)
            for r, c in zip(ri, ci):
                comp_vertex[(beta, int(others[r]))] = next_id
                new_vertices.append((spts[c], (beta, int(c))))
                next_id += 1

    out_faces = []
    regf = faces[~has_branch]
    for a, b, c in regf:
        pab = perm_of[(int(a), int(b))]
        pac = perm_of[(int(a), int(c))]
        pbc = perm_of[(int(b), int(c))]
        if not np.array_equal(pbc[pab], pac):
            raise LiftInconsistentError(f"nontrivial monodromy around regular base face ({a}, {b}, {c})")
        out_faces.append(np.stack([vid[a], vid[b, pab], vid[c, pac]], axis=1))
    for beta, a, b in fan:
        p = perm_of[(int(a), int(b))]
        centre = np.array([comp_vertex[(int(beta), comp[int(beta)][int(v)])] for v in vid[a]])
        out_faces.append(np.stack([centre, vid[a], vid[b, p]], axis=1))
    out_faces = np.concatenate(out_faces) if out_faces else np.zeros((0, 3), dtype=np.int64)

    emb = np.zeros((next_id, 3), dtype=np.complex128)
    prov = np.zeros((next_id, 2), dtype=np.int64)
    lv = np.repeat(reg, d)
    sh = np.tile(np.arange(d), len(reg))
    emb[:nreg] = canonical(pencil.lift(reps[lv], W[lv, sh]))
    prov[:nreg, 0] = lv
    prov[:nreg, 1] = sh
    for n, (pt, pv) in enumerate(new_vertices):
        emb[nreg + n] = pt
        prov[nreg + n] = pv

    # vertex checks: on the curve and smooth
    val = np.abs(evaluate(P, emb))
    grad = np.linalg.norm(gradient(P, emb), axis=1)
    if np.any(val > 1e-8 * P.scale):
        raise LiftInconsistentError("lifted vertex off the curve")
    if np.any(grad < 1e-8 * P.scale):
        raise SingularCurveError("gradient vanishes at a curve point; Z(P) is singular")

    try:
        he = HalfEdges.build(out_faces, next_id)
    except StructuralError as exc:
        raise LiftInconsistentError(f"lifted complex is not a manifold: {exc}") from exc
    e = he.edges
    lengths = fs_chord(emb[e[:, 0]], emb[e[:, 1]])
    try:
        mesh = SurfaceMesh(he.faces, lengths, emb, prov, he)
    except StructuralError as exc:
        raise LiftInconsistentError(str(exc)) from exc
    if flip and mesh.min_angle() < math.radians(5.0):
        mesh, _ = delaunay_flip(mesh)
    return mesh


def _local_edge_angle(base: SphereMesh, q) -> np.ndarray:
    """Mean length of the base edges at the vertex nearest to each point of ``q``."""
    e = base.edges()
    el = _angle(base.points[e[:, 0]], base.points[e[:, 1]])
    tot = np.bincount(e.ravel(), weights=np.repeat(el, 2), minlength=len(base.points))
    cnt = np.bincount(e.ravel(), minlength=len(base.points))
    near = np.argmin(_angle(base.points[None, :, :], q[:, None, :]), axis=1)
    return tot[near] / cnt[near]


def _min_sep(sph):
    if len(sph) < 2:
        return math.inf
    a = _angle(sph[:, None, :], sph[None, :, :]) + np.diag(np.full(len(sph), np.inf))
    return float(a.min())


# -- export -------------------------------------------------------------------

def export_off(mesh: SurfaceMesh) -> str:
    """OFF-style text; each vertex line holds the 6 reals of its CP^2 embedding."""
    emb = mesh.embedding if mesh.embedding is not None else np.zeros((mesh.n_vertices, 3), dtype=complex)
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} {mesh.n_edges}"]
    for x in emb:
        lines.append(" ".join(f"{v:.17g}" for z in x for v in (z.real, z.imag)))
    for f in mesh.faces:
        lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    return "\n".join(lines) + "\n"


def export_lengths(mesh: SurfaceMesh) -> str:
    lines = ["# i j length"]
    for (a, b), l in zip(mesh.connectivity.edges, mesh.lengths):
        lines.append(f"{a} {b} {l:.17g}")
    return "\n".join(lines) + "\n"


def import_mesh(off_text: str, length_text: str) -> SurfaceMesh:
    rows = [ln.split() for ln in off_text.splitlines() if ln.strip() and not ln.startswith("#")]
    if rows[0][0] != "OFF":
        raise StructuralError("not an OFF file")
    nv, nf = int(rows[1][0]), int(rows[1][1])
    vals = np.array([[float(x) for x in r] for r in rows[2 : 2 + nv]]).reshape(nv, 3, 2)
    emb = vals[..., 0] + 1j * vals[..., 1]
    faces = np.array([[int(x) for x in r[1:4]] for r in rows[2 + nv : 2 + nv + nf]], dtype=np.int64)
    he = HalfEdges.build(faces, nv)
    lut = {}
    for ln in length_text.splitlines():
        if not ln.strip() or ln.startswith("#"):
            continue
        a, b, l = ln.split()
        lut[(int(a), int(b))] = float(l)
    lengths = np.array([lut[(int(a), int(b))] for a, b in he.edges])
    return SurfaceMesh(he.faces, lengths, emb, None, he)
