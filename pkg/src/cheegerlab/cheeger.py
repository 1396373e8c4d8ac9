"""Cheeger constant brackets, homological systole and the isoperimetric check.

Upper bounds come from level sets of per-vertex fields interpolated
linearly on each face.  Length and enclosed area of a level set are
evaluated exactly for the piecewise-linear field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, dijkstra

from .spectral import SpectralResult
from .surface_mesh import SurfaceMesh, curvature, euler_genus, total_area

BUSER_CONVENTION = "lambda1 <= 2*a*h + 10*h^2, a = sqrt(max(0, -K_min))"


class NoCutError(ValueError):
    pass


class ShapeError(ValueError):
    pass


# -- face layouts and level sets ------------------------------------------------

def face_layout(mesh: SurfaceMesh) -> np.ndarray:
    """(F, 3, 2) planar coordinates of each face's corners, isometric to its lengths."""
    L = mesh.face_lengths
    A0 = mesh.angles[:, 0]
    xy = np.zeros((mesh.n_faces, 3, 2))
    xy[:, 1, 0] = L[:, 2]
    xy[:, 2, 0] = L[:, 1] * np.cos(A0)
    xy[:, 2, 1] = L[:, 1] * np.sin(A0)
    return xy


@dataclass(frozen=True, eq=False)
class _FaceSweep:
    f: np.ndarray  # (F, 3) sorted values
    corner: np.ndarray  # (F, 3) vertex ids in that order
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    area: np.ndarray


def _face_sweep(mesh: SurfaceMesh, g: np.ndarray) -> _FaceSweep:
    vals = g[mesh.faces]
    order = np.argsort(vals, axis=1, kind="stable")
    f = np.take_along_axis(vals, order, axis=1)
    xy = np.take_along_axis(face_layout(mesh), order[:, :, None], axis=1)
    corner = np.take_along_axis(mesh.faces, order, axis=1)
    A = mesh.face_areas
    f0, f1, f2 = f[:, 0], f[:, 1], f[:, 2]
    p0, p1, p2 = xy[:, 0], xy[:, 1], xy[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        d10, d20, d21 = f1 - f0, f2 - f0, f2 - f1
        r1 = d10 > 0
        r2 = d21 > 0
        alpha = np.where(r1, np.linalg.norm((p1 - p0) / d10[:, None] - (p2 - p0) / d20[:, None], axis=1), 0.0)
        beta = np.where(r1, A / (d10 * d20), 0.0)
        gamma = np.where(r2, np.linalg.norm((p1 - p2) / d21[:, None] - (p0 - p2) / d20[:, None], axis=1), 0.0)
        delta = np.where(r2, A / (d21 * d20), 0.0)
    return _FaceSweep(f, corner, alpha, beta, gamma, delta, A)


def _profile(fs: _FaceSweep, T: np.ndarray):
    """Level-set length and area of {g < t} for each sorted threshold in ``T``."""
    f0, f1, f2 = fs.f[:, 0], fs.f[:, 1], fs.f[:, 2]
    # faces entirely below t (f2 <= t)
    by_top = np.argsort(f2, kind="stable")
    csum = np.concatenate([[0.0], np.cumsum(fs.area[by_top])])
    below = csum[np.searchsorted(f2[by_top], T, side="right")]
    length = np.zeros(len(T))
    # faces crossed by t: f0 <= t < f2
    lo = np.searchsorted(T, f0, side="left")
    hi = np.searchsorted(T, f2, side="left")
    cnt = np.maximum(hi - lo, 0)
    total = int(cnt.sum())
    if total:
        face = np.repeat(np.arange(len(f0)), cnt)
        start = np.concatenate([[0], np.cumsum(cnt)[:-1]])
        ti = lo[face] + (np.arange(total) - np.repeat(start, cnt))
        t = T[ti]
        low = t < f1[face]
        s_lo = t - f0[face]
        s_hi = f2[face] - t
        seg = np.where(low, fs.alpha[face] * s_lo, fs.gamma[face] * s_hi)
        part = np.where(low, fs.beta[face] * s_lo**2, fs.area[face] - fs.delta[face] * s_hi**2)
        length += np.bincount(ti, weights=seg, minlength=len(T))
        below += np.bincount(ti, weights=part, minlength=len(T))
    return length, below


@dataclass(frozen=True, eq=False)
class Cut:
    """Level set {f = level} as one straight segment per crossed face.

    Segment endpoint ``(u, v, s)`` denotes the point ``(1 - s) u + s v`` on
    mesh edge ``uv``.
    """

    level: float
    faces: np.ndarray = field(repr=False)
    ends: np.ndarray = field(repr=False)  # (m, 2, 2) vertex ids
    params: np.ndarray = field(repr=False)  # (m, 2)
    seg_lengths: np.ndarray = field(repr=False)
    length: float
    area_below: float
    area_above: float
    below: np.ndarray = field(repr=False)  # per-vertex side indicator

    @property
    def side_areas(self) -> tuple[float, float]:
        return self.area_below, self.area_above

    @property
    def ratio(self) -> float:
        return self.length / min(self.area_below, self.area_above)

    def loops(self) -> tuple[int, bool]:
        """(number of connected components, whether every node has degree 2)."""
        keys = {}

        def key(u, v, s):
            if s <= 0.0:
                return ("v", int(u))
            if s >= 1.0:
                return ("v", int(v))
            return ("e", min(int(u), int(v)), max(int(u), int(v)))

        rows, cols = [], []
        for (a, b), (sa, sb), ln in zip(self.ends, self.params, self.seg_lengths):
            if ln <= 0:
                continue
            ka = keys.setdefault(key(a[0], a[1], sa), len(keys))
            kb = keys.setdefault(key(b[0], b[1], sb), len(keys))
            rows.append(ka)
            cols.append(kb)
        if not keys:
            return 0, False
        n = len(keys)
        g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        ncomp, _ = connected_components(g, directed=False)
        deg = np.bincount(np.concatenate([rows, cols]), minlength=n)
        return int(ncomp), bool(np.all(deg == 2))

    def export(self) -> str:
        """Polyline as ``face u v s u' v' s'`` lines."""
        out = [f"# level {self.level:.17g} length {self.length:.17g}", "# face u v s u v s"]
        for f, (a, b), (sa, sb) in zip(self.faces, self.ends, self.params):
            out.append(f"{f} {a[0]} {a[1]} {sa:.17g} {b[0]} {b[1]} {sb:.17g}")
        return "\n".join(out) + "\n"


def _normalize(f) -> tuple[np.ndarray, float, float]:
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    lo, hi = float(f.min()), float(f.max())
    if not hi > lo or (hi - lo) <= 1e-14 * max(abs(lo), abs(hi)):
        raise NoCutError("field is constant: no level set separates the surface")
    return (f - lo) / (hi - lo), lo, hi


def level_cut(mesh: SurfaceMesh, f, t: float) -> Cut:
    """The cut {f = t} for a field ``f`` and raw level ``t``."""
    g, lo, hi = _normalize(f)
    return _cut_at(mesh, g, _face_sweep(mesh, g), (t - lo) / (hi - lo), t)


def _cut_at(mesh: SurfaceMesh, g, fs: _FaceSweep, tn: float, level: float) -> Cut:
    length, below = _profile(fs, np.array([tn]))
    f0, f1, f2 = fs.f[:, 0], fs.f[:, 1], fs.f[:, 2]
    act = np.flatnonzero((f0 <= tn) & (tn < f2))
    c = fs.corner[act]
    low = tn < f1[act]
    with np.errstate(divide="ignore", invalid="ignore"):
        s_a = np.where(low, (tn - f0[act]) / (f1[act] - f0[act]), (f2[act] - tn) / (f2[act] - f1[act]))
        s_b = np.where(low, (tn - f0[act]) / (f2[act] - f0[act]), (f2[act] - tn) / (f2[act] - f0[act]))
    s_a = np.nan_to_num(s_a)
    s_b = np.nan_to_num(s_b)
    # low regime: c0->c1 and c0->c2; high regime: c2->c1 and c2->c0
    ea = np.where(low[:, None], c[:, [0, 1]], c[:, [2, 1]])
    eb = np.where(low[:, None], c[:, [0, 2]], c[:, [2, 0]])
    seg = np.where(low, fs.alpha[act] * (tn - f0[act]), fs.gamma[act] * (f2[act] - tn))
    A = total_area(mesh)
    return Cut(
        level=float(level),
        faces=act,
        ends=np.stack([ea, eb], axis=1),
        params=np.stack([s_a, s_b], axis=1),
        seg_lengths=seg,
        length=float(length[0]),
        area_below=float(below[0]),
        area_above=float(A - below[0]),
        below=g < tn,
    )


@dataclass(frozen=True, eq=False)
class SweepResult:
    h_upper: float
    cut: Cut
    n_thresholds: int


def sweep_cut(mesh: SurfaceMesh, f, n_levels: int = 256) -> SweepResult:
    """Best ratio length / min(side areas) over level sets of ``f``.

    Thresholds are all vertex values plus ``n_levels`` uniform levels.
    """
    g, lo, hi = _normalize(f)
    fs = _face_sweep(mesh, g)
    T = np.unique(np.concatenate([g, np.linspace(0.0, 1.0, n_levels)]))
    length, below = _profile(fs, T)
    A = total_area(mesh)
    small = np.minimum(below, A - below)
    ok = (small > 1e-12 * A) & (length > 0)
    if not ok.any():
        raise NoCutError("no threshold splits the surface into two sides of positive area")
    ratio = np.full(len(T), np.inf)
    ratio[ok] = length[ok] / small[ok]
    best = int(np.argmin(ratio))
    cut = _cut_at(mesh, g, fs, float(T[best]), lo + float(T[best]) * (hi - lo))
    return SweepResult(float(ratio[best]), cut, len(T))


# -- lower bound and the bracket ------------------------------------------------

def buser_lower(lambda1: float, curvature_floor: float) -> float:
    """Positive root of 10 h^2 + 2 a h - lambda1, a = sqrt(max(0, -K_min))."""
    if not lambda1 > 0:
        raise ValueError("lambda1 must be positive")
    a = math.sqrt(max(0.0, -curvature_floor))
    # stable form of (-a + sqrt(a^2 + 10 lambda1)) / 10
    return lambda1 / (a + math.sqrt(a * a + 10.0 * lambda1))


@dataclass(frozen=True, eq=False)
class CheegerEstimate:
    h_upper: float
    h_lower: float
    cut: Cut = field(repr=False)
    curvature_floor: float
    lambda1: float
    eigen_index: int
    convention: str = BUSER_CONVENTION


def estimate_cheeger(
    mesh: SurfaceMesh,
    spec: SpectralResult,
    curvature_floor: float | None = None,
    n_levels: int = 256,
    n_functions: int | None = None,
) -> CheegerEstimate:
    """Bracket h between the Buser-type bound and the best eigenfunction sweep."""
    if curvature_floor is None:
        curvature_floor = curvature(mesh).inf
    k = spec.eigenfunctions.shape[1]
    last = k if n_functions is None else min(k, 1 + n_functions)
    best = None
    for i in range(1, last):
        res = sweep_cut(mesh, spec.eigenfunctions[:, i], n_levels)
        if best is None or res.h_upper < best[0].h_upper:
            best = (res, i)
    lam1 = float(spec.eigenvalues[1])
    return CheegerEstimate(best[0].h_upper, buser_lower(lam1, curvature_floor), best[0].cut, float(curvature_floor), lam1, best[1])


@dataclass(frozen=True)
class CheegerInequalityReport:
    lambda1: float
    h_upper: float
    h_lower: float
    upper_gap: float  # lambda1 - h_upper^2 / 4, either sign
    lower_gap: float  # lambda1 - h_lower^2 / 4, must be >= -tol
    bracket_ok: bool
    lower_ok: bool


def cheeger_inequality_report(h_upper: float, lambda1: float, h_lower: float = 0.0, tol: float = 1e-12) -> CheegerInequalityReport:
    upper_gap = lambda1 - h_upper**2 / 4
    lower_gap = lambda1 - h_lower**2 / 4
    return CheegerInequalityReport(
        lambda1, h_upper, h_lower, upper_gap, lower_gap, h_lower <= h_upper, lower_gap >= -tol * max(1.0, lambda1)
    )


# -- homological systole ----------------------------------------------------------

def homology_signatures(mesh: SurfaceMesh) -> tuple[np.ndarray, int]:
    """Z2 cohomology classes of edges as bitmasks, from a tree-cotree split.

    A closed edge path is homologically nontrivial mod 2 iff the XOR of
    its edge masks is nonzero.
    """
    he = mesh.connectivity
    _, genus = euler_genus(mesh)
    V, E = mesh.n_vertices, mesh.n_edges
    e = he.edges
    ekey = e[:, 0] * V + e[:, 1]
    G = csr_matrix((np.ones(E), (e[:, 0], e[:, 1])), shape=(V, V))
    order, pred = breadth_first_order(G, 0, directed=False, return_predecessors=True)
    kids = order[1:]
    par = pred[kids]
    tree = np.zeros(E, dtype=bool)
    tree[np.searchsorted(ekey, np.minimum(kids, par) * V + np.maximum(kids, par))] = True

    # the two faces on each edge
    ef = np.empty((E, 2), dtype=np.int64)
    ef[he.edge, np.where(he.src < he.dst, 0, 1)] = np.arange(3 * mesh.n_faces) // 3
    face_edges = he.edge.reshape(-1, 3)
    parent_edge = np.full(mesh.n_faces, -1)
    seen = np.zeros(mesh.n_faces, dtype=bool)
    seen[0] = True
    bfs = [0]
    for f in bfs:
        for ed in face_edges[f]:
            if tree[ed]:
                continue
            g = ef[ed, 0] if ef[ed, 1] == f else ef[ed, 1]
            if not seen[g]:
                seen[g] = True
                parent_edge[g] = ed
                bfs.append(int(g))
    cotree = np.zeros(E, dtype=bool)
    cotree[parent_edge[parent_edge >= 0]] = True
    left = np.flatnonzero(~tree & ~cotree)
    if len(left) != 2 * genus:
        raise ShapeError(f"tree-cotree leaves {len(left)} edges, expected {2 * genus}")
    if len(left) > 64:
        raise ValueError("homology rank above 64 is not supported")
    mask = np.zeros(E, dtype=np.uint64)
    mask[left] = np.left_shift(np.uint64(1), np.arange(len(left), dtype=np.uint64))
    for f in reversed(bfs[1:]):
        pe = parent_edge[f]
        others = face_edges[f][face_edges[f] != pe]
        mask[pe] = mask[others[0]] ^ mask[others[1]]
    return mask, genus


@dataclass(frozen=True, eq=False)
class SystoleResult:
    length: float | None
    cycle: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)  # edge ids
    certificate: int = 0  # XOR of cohomology masks; nonzero for a nontrivial class
    kind: str = "homological"

    @property
    def present(self) -> bool:
        return self.length is not None


def systole(mesh: SurfaceMesh, sources=None, chunk: int = 128) -> SystoleResult:
    """Shortest homologically nontrivial edge cycle (None for a sphere).

    For every source, a shortest-path tree is grown; each non-tree edge
    closes a cycle whose class is read off from path signatures.
    """
    mask, genus = homology_signatures(mesh)
    if genus == 0:
        return SystoleResult(None)
    V = mesh.n_vertices
    e = mesh.connectivity.edges
    ekey = e[:, 0] * V + e[:, 1]
    w = mesh.lengths
    G = csr_matrix((np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))), shape=(V, V))
    src_all = np.arange(V) if sources is None else np.asarray(sources, dtype=np.int64)
    best = (np.inf, -1, -1, None)
    steps = max(1, int(math.ceil(math.log2(max(V, 2)))) + 1)
    for s0 in range(0, len(src_all), chunk):
        src = src_all[s0 : s0 + chunk]
        dist, pred = dijkstra(G, directed=False, indices=src, return_predecessors=True)
        rows = np.arange(len(src))[:, None]
        is_root = pred < 0
        anc = np.where(is_root, np.arange(V)[None, :], pred)
        lo = np.minimum(anc, np.arange(V)[None, :])
        hi = np.maximum(anc, np.arange(V)[None, :])
        pe = np.searchsorted(ekey, lo * V + hi)
        pe = np.minimum(pe, len(ekey) - 1)
        sig = np.where(is_root, np.uint64(0), mask[pe])
        for _ in range(steps):
            sig = sig ^ sig[rows, anc]
            anc = anc[rows, anc]
        cls = sig[:, e[:, 0]] ^ sig[:, e[:, 1]] ^ mask[None, :]
        tot = dist[:, e[:, 0]] + dist[:, e[:, 1]] + w[None, :]
        tot = np.where(cls != 0, tot, np.inf)
        i, j = np.unravel_index(np.argmin(tot), tot.shape)
        if tot[i, j] < best[0]:
            best = (float(tot[i, j]), int(j), int(src[i]), pred[i].copy())
    _, edge_id, _, pred = best
    used = np.zeros(len(ekey), dtype=np.int64)
    used[edge_id] += 1
    for start in e[edge_id]:
        v = int(start)
        while pred[v] >= 0:
            p = int(pred[v])
            used[np.searchsorted(ekey, min(v, p) * V + max(v, p))] += 1
            v = p
    cyc = np.flatnonzero(used % 2)
    cert = int(np.bitwise_xor.reduce(mask[cyc])) if len(cyc) else 0
    return SystoleResult(float(math.fsum(w[cyc])), cyc, cert)


# -- isoperimetric check ------------------------------------------------------------

def _side_euler(mesh: SurfaceMesh, side: np.ndarray) -> tuple[int, int]:
    """(components, Euler characteristic) of the full subcomplex on ``side``."""
    e = mesh.connectivity.edges
    ein = side[e[:, 0]] & side[e[:, 1]]
    fin = side[mesh.faces].all(axis=1)
    nv = int(side.sum())
    chi = nv - int(ein.sum()) + int(fin.sum())
    idx = np.flatnonzero(side)
    lut = np.full(mesh.n_vertices, -1)
    lut[idx] = np.arange(nv)
    ee = e[ein]
    g = coo_matrix((np.ones(len(ee)), (lut[ee[:, 0]], lut[ee[:, 1]])), shape=(nv, nv))
    ncomp = connected_components(g, directed=False)[0] if nv else 0
    return int(ncomp), chi


@dataclass(frozen=True)
class IsoperimetricRecord:
    length: float
    disk_area: float
    curvature_sup: float
    slack: float
    tolerance: float
    graph_radius: float
    in_class: bool
    ok: bool


def isoperimetric_slack(length: float, area: float, curvature_sup: float) -> float:
    return length**2 - area * (4 * math.pi - curvature_sup * area)


def isoperimetric_check(
    mesh: SurfaceMesh,
    cut: Cut,
    curvature_sup: float,
    radius: float | None = None,
    tolerance: float | None = None,
) -> IsoperimetricRecord:
    """Slack of length^2 >= A (4 pi - K+ A) for a loop bounding a disk of area A.

    ``radius`` is the ball radius defining the oval class; membership uses
    graph distance from the loop's vertices to the best center vertex.
    The inequality is only asserted (``ok``) for loops in the class.
    """
    ncomp, closed = cut.loops()
    if ncomp != 1 or not closed:
        raise ShapeError(f"cut is not a single closed loop ({ncomp} components)")
    sides = []
    for side, area in ((cut.below, cut.area_below), (~cut.below, cut.area_above)):
        comp, chi = _side_euler(mesh, side)
        if comp == 1 and chi == 1:
            sides.append(area)
    if not sides:
        raise ShapeError("neither side of the cut is a disk")
    A = min(sides)
    slack = isoperimetric_slack(cut.length, A, curvature_sup)
    if tolerance is None:
        tolerance = 2.0 * float(mesh.lengths.max()) * cut.length
    loop_v = np.unique(cut.ends.reshape(-1))
    e = mesh.connectivity.edges
    V = mesh.n_vertices
    G = csr_matrix((mesh.lengths, (e[:, 0], e[:, 1])), shape=(V, V))
    dist = dijkstra(G, directed=False, indices=loop_v)
    rad = float(dist.max(axis=0).min())
    in_class = radius is None or rad <= radius
    return IsoperimetricRecord(cut.length, A, curvature_sup, slack, tolerance, rad, in_class, (not in_class) or slack >= -tolerance)
