"""Fubini-Study geometry of CP^2 and the branched-cover substrate.

Normalization: the distance between projective points is
``arccos |<p, q>|`` for unit representatives, so a projective line is a
round sphere of radius 1/2 (curvature 4, area pi).

A :class:`Pencil` is a unitary frame ``U``.  Its center is ``U e_2`` and the
line over a base point ``b = (b0, b1)`` of CP^1 is parametrized by the
affine fiber coordinate ``w`` through ``x = U (b0, b1, w)``.  The
restriction of ``P`` to that line is a degree ``d`` polynomial in ``w``
whose leading coefficient ``P(center)`` does not depend on ``b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.stats import unitary_group

from .kostlan import DomainError, HomogeneousPoly3, compose_linear, evaluate, multi_indices, partial


class PencilDegenerateError(RuntimeError):
    """Fiber leading coefficient vanishes or the pencil is otherwise non-generic."""


class PencilNonGenericError(PencilDegenerateError):
    """A branch point of multiplicity > 1, or branch points too close together."""


class PathTooCloseError(RuntimeError):
    pass


class StepSizeUnderflowError(RuntimeError):
    pass


class RootFindingError(RuntimeError):
    pass


# -- points -----------------------------------------------------------------

def canonical(x) -> np.ndarray:
    """Unit representative whose first nonzero coordinate is real positive."""
    x = np.asarray(x, dtype=np.complex128)
    nrm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(nrm == 0):
        raise DomainError("the zero vector is not a projective point")
    x = x / nrm
    mag = np.abs(x)
    first = np.argmax(mag > 1e-12, axis=-1)
    lead = np.take_along_axis(x, first[..., None], axis=-1)
    return x * (np.conj(lead) / np.abs(lead))


@dataclass(frozen=True, eq=False)
class ProjPoint:
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", canonical(self.coords))

    def __iter__(self):
        return iter(self.coords)


def fs_distance(p, q) -> np.ndarray | float:
    """Fubini-Study distance arccos|<p,q>| between (arrays of) points."""
    p = np.asarray(getattr(p, "coords", p), dtype=np.complex128)
    q = np.asarray(getattr(q, "coords", q), dtype=np.complex128)
    ip = np.abs(np.sum(np.conj(p) * q, axis=-1))
    ip = ip / (np.linalg.norm(p, axis=-1) * np.linalg.norm(q, axis=-1))
    d = np.arccos(np.clip(ip, 0.0, 1.0))
    return float(d) if np.ndim(d) == 0 else d


def fs_chord(p, q) -> np.ndarray:
    """Same distance as :func:`fs_distance`, computed stably for nearby points."""
    p = canonical(p)
    q = canonical(q)
    ip = np.sum(np.conj(p) * q, axis=-1)
    phase = np.where(np.abs(ip) > 0, ip / np.maximum(np.abs(ip), 1e-300), 1.0)
    # distance from p to the closest representative of q on the unit sphere
    chord = np.linalg.norm(p - q * np.conj(phase)[..., None], axis=-1)
    return 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))


# -- CP^1 <-> unit sphere (Hopf map) -----------------------------------------

def base_to_sphere(b) -> np.ndarray:
    b = np.asarray(b, dtype=np.complex128)
    n2 = np.sum(np.abs(b) ** 2, axis=-1)
    z = np.conj(b[..., 0]) * b[..., 1]
    return np.stack([2 * z.real, 2 * z.imag, np.abs(b[..., 0]) ** 2 - np.abs(b[..., 1]) ** 2], axis=-1) / n2[..., None]


def sphere_to_base(n) -> np.ndarray:
    """Unit C^2 representatives of points of the unit sphere."""
    n = np.asarray(n, dtype=np.float64)
    nx, ny, nz = n[..., 0], n[..., 1], n[..., 2]
    north = nz >= 0
    b0 = np.where(north, 1 + nz, nx - 1j * ny)
    b1 = np.where(north, nx + 1j * ny, 1 - nz)
    b = np.stack([b0, b1], axis=-1).astype(np.complex128)
    return b / np.linalg.norm(b, axis=-1, keepdims=True)


def base_distance(b, c) -> np.ndarray | float:
    """Fubini-Study distance on CP^1 (half the angle on the unit sphere)."""
    b = np.asarray(b, dtype=np.complex128)
    c = np.asarray(c, dtype=np.complex128)
    ip = np.abs(np.sum(np.conj(b) * c, axis=-1)) / (np.linalg.norm(b, axis=-1) * np.linalg.norm(c, axis=-1))
    d = np.arccos(np.clip(ip, 0.0, 1.0))
    return float(d) if np.ndim(d) == 0 else d


# -- simultaneous root finding -----------------------------------------------

def _horner(c: np.ndarray, w: np.ndarray):
    """Value and derivative of polynomials with ascending coefficients ``c``
    (shape (N, d+1)) at points ``w`` (shape (N, m))."""
    p = np.broadcast_to(c[:, -1:], w.shape).astype(np.complex128)
    dp = np.zeros_like(p)
    for k in range(c.shape[1] - 2, -1, -1):
        dp = dp * w + p
        p = p * w + c[:, k : k + 1]
    return p, dp


def _abs_scale(c: np.ndarray, w: np.ndarray) -> np.ndarray:
    aw = np.abs(w)
    s = np.broadcast_to(np.abs(c[:, -1:]), w.shape).astype(np.float64)
    for k in range(c.shape[1] - 2, -1, -1):
        s = s * aw + np.abs(c[:, k : k + 1])
    return s


def aberth(coeffs, tol: float = 1e-14, maxiter: int = 500) -> np.ndarray:
    """All roots of each polynomial in a batch by Aberth-Ehrlich iteration.

    ``coeffs`` has ascending powers along the last axis.  Starting points lie
    on a circle whose radius is a Cauchy-type bound on the root moduli.
    """
    c = np.atleast_2d(np.asarray(coeffs, dtype=np.complex128))
    n, d1 = c.shape
    d = d1 - 1
    if d < 1:
        raise DomainError("need degree >= 1")
    if np.any(c[:, -1] == 0):
        raise RootFindingError("leading coefficient is zero")
    if d == 1:
        r = (-c[:, 0] / c[:, 1])[:, None]
        return r if np.ndim(coeffs) > 1 else r[0]
    ratios = np.abs(c[:, :-1] / c[:, -1:])
    radius = np.max(ratios ** (1.0 / (d - np.arange(d))), axis=1)
    radius = np.where(radius > 0, radius, 1.0)
    angles = 2 * np.pi * np.arange(d) / d + 0.7
    z = radius[:, None] * np.exp(1j * angles)[None, :]
    active = np.ones(n, dtype=bool)
    eye = np.eye(d, dtype=bool)
    for _ in range(maxiter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        zi = z[idx]
        p, dp = _horner(c[idx], zi)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = p / dp
            diff = zi[:, :, None] - zi[:, None, :]
            diff[:, eye] = 1.0
            s = np.sum(np.where(eye, 0.0, 1.0 / diff), axis=2)
            step = ratio / (1 - ratio * s)
        step = np.where(np.isfinite(step), step, 0.0)
        zi = zi - step
        z[idx] = zi
        small = np.abs(step) <= tol * (1 + np.abs(zi))
        # a root whose residual is at rounding level cannot improve further
        floor = np.abs(p) <= 8 * np.finfo(float).eps * _abs_scale(c[idx], zi - step)
        done = np.all(small | floor, axis=1)
        active[idx[done]] = False
    return z if np.ndim(coeffs) > 1 else z[0]


# -- pencils -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pencil:
    """Projection from ``center = U[:, 2]`` onto CP^1 with unitary frame ``U``."""

    frame: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.frame, dtype=np.complex128)
        if U.shape != (3, 3) or not np.allclose(U.conj().T @ U, np.eye(3), atol=1e-12):
            raise DomainError("pencil frame must be a 3x3 unitary matrix")
        U.setflags(write=False)
        object.__setattr__(self, "frame", U)

    @property
    def center(self) -> ProjPoint:
        return ProjPoint(self.frame[:, 2])

    @classmethod
    def from_center(cls, center) -> "Pencil":
        c = np.asarray(center, dtype=np.complex128)
        c = c / np.linalg.norm(c)
        q, _ = np.linalg.qr(np.column_stack([c, np.eye(3)]))
        return cls(np.column_stack([q[:, 1], q[:, 2], c]))

    def lift(self, b, w) -> np.ndarray:
        """Points U (b0, b1, w) of CP^2 (not normalized)."""
        b = np.asarray(b, dtype=np.complex128)
        w = np.asarray(w, dtype=np.complex128)
        b0 = np.broadcast_to(b[..., 0:1], w.shape) if w.ndim == b.ndim else b[..., 0]
        b1 = np.broadcast_to(b[..., 1:2], w.shape) if w.ndim == b.ndim else b[..., 1]
        y = np.stack([b0, b1, w], axis=-1)
        return y @ self.frame.T

    def project(self, x) -> np.ndarray:
        """Base point (y0, y1) of a point of CP^2 off the center."""
        y = np.asarray(x, dtype=np.complex128) @ np.conj(self.frame)
        return y[..., :2]


@dataclass(frozen=True, eq=False)
class FiberSystem:
    """Polynomial ``P`` expressed in the frame of a pencil, ready for fiber work."""

    P: HomogeneousPoly3
    pencil: Pencil

    @cached_property
    def Q(self) -> HomogeneousPoly3:
        return compose_linear(self.P, self.pencil.frame)

    @cached_property
    def _table(self):
        # A[k, i]: coefficient of b0^i b1^(d-k-i) w^k
        d = self.P.degree
        A = np.zeros((d + 1, d + 1), dtype=np.complex128)
        for m, c in zip(multi_indices(d), self.Q.coeffs):
            A[m[2], m[0]] += c
        return A

    @property
    def degree(self) -> int:
        return self.P.degree

    @cached_property
    def leading(self) -> complex:
        return complex(self._table[self.degree, 0])

    def coeffs(self, b, derivative: bool = False):
        """Ascending fiber coefficients c_k(b), shape (..., d+1).

        With ``derivative=True`` also return d c_k / d b0 and d c_k / d b1.
        """
        b = np.asarray(b, dtype=np.complex128)
        d = self.degree
        A = self._table
        e = np.arange(d + 1)
        p0 = b[..., 0:1] ** e
        p1 = b[..., 1:2] ** e
        # T[..., k, i] = b0^i b1^(d-k-i) for i <= d-k
        kk, ii = np.meshgrid(e, e, indexing="ij")
        jj = d - kk - ii
        mask = jj >= 0
        jj = np.where(mask, jj, 0)
        T = np.where(mask, p0[..., ii] * p1[..., jj], 0)
        c = np.sum(T * A, axis=-1)
        if not derivative:
            return c
        T0 = np.where(mask, ii * p0[..., np.maximum(ii - 1, 0)] * p1[..., jj], 0)
        T1 = np.where(mask, jj * p0[..., ii] * p1[..., np.maximum(jj - 1, 0)], 0)
        return c, np.sum(T0 * A, axis=-1), np.sum(T1 * A, axis=-1)

    def center_value(self) -> complex:
        return self.leading


def make_fiber_system(P: HomogeneousPoly3, pencil: Pencil) -> FiberSystem:
    fs = FiberSystem(P, pencil)
    if abs(fs.leading) <= 1e-12 * P.scale:
        raise PencilDegenerateError("pencil center lies on the curve")
    return fs


@dataclass(frozen=True, eq=False)
class FiberRoots:
    base: np.ndarray
    roots: np.ndarray
    condition: float

    def __len__(self):
        return len(self.roots)


def _min_gap(w: np.ndarray) -> np.ndarray:
    w = np.atleast_2d(w)
    if w.shape[-1] < 2:
        return np.full(w.shape[0], np.inf)
    diff = np.abs(w[:, :, None] - w[:, None, :])
    diff[:, np.arange(w.shape[1]), np.arange(w.shape[1])] = np.inf
    return diff.min(axis=(1, 2))


def fiber_roots_batch(fs: FiberSystem, b, residual_tol: float = 1e-10):
    """Roots over many base points at once; returns (roots (N, d), gaps (N,))."""
    b = np.atleast_2d(np.asarray(b, dtype=np.complex128))
    c = fs.coeffs(b)
    if np.any(np.abs(c[:, -1]) <= 1e-14 * fs.P.scale):
        raise PencilDegenerateError("leading fiber coefficient underflow")
    w = aberth(c)
    if w.ndim == 1:
        w = w[:, None] if c.shape[0] > 1 or fs.degree == 1 else w[None, :]
    w = w.reshape(c.shape[0], fs.degree)
    p, _ = _horner(c, w)
    bad = np.abs(p) > residual_tol * _abs_scale(c, w)
    if np.any(bad):
        raise RootFindingError(f"fiber root residual above tolerance at {int(bad.any(axis=1).sum())} base points")
    return w, _min_gap(w)


def fiber_roots(P: HomogeneousPoly3, pencil: Pencil, b) -> FiberRoots:
    """The ``d`` points of Z(P) on the line of the pencil over ``b``."""
    fs = make_fiber_system(P, pencil)
    b = np.asarray(b, dtype=np.complex128)
    w, gap = fiber_roots_batch(fs, b[None, :])
    return FiberRoots(b, w[0], float(gap[0]))


def conformal_factor(fs: FiberSystem, b, w) -> np.ndarray:
    """Ratio of Fubini-Study speed on the curve to speed on the base.

    ``b`` has shape (N, 2), ``w`` the fiber roots over it, shape (N, d).
    The projection is holomorphic, so the ratio does not depend on the
    direction of motion; it blows up at ramification points.
    """
    b = np.asarray(b, dtype=np.complex128)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    w = np.asarray(w, dtype=np.complex128)
    c, c0, c1 = fs.coeffs(b, derivative=True)
    # unit tangent orthogonal to b
    t = np.stack([-np.conj(b[:, 1]), np.conj(b[:, 0])], axis=-1)
    dc = c0 * t[:, 0:1] + c1 * t[:, 1:2]
    q_b, _ = _horner(dc, w)
    _, q_w = _horner(c, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        dw = -q_b / q_w
    # x = (b, w) and x' = (t, dw) in the pencil frame, which is unitary
    nx2 = 1.0 + np.abs(w) ** 2
    nd2 = 1.0 + np.abs(dw) ** 2
    ip = np.conj(w) * dw  # <x, x'>, since <b, t> = 0
    speed2 = (nd2 * nx2 - np.abs(ip) ** 2) / nx2**2
    return np.sqrt(np.maximum(speed2, 0.0))


# -- discriminant ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BranchPoint:
    base: np.ndarray        # unit C^2 representative of the base point
    w: complex              # fiber coordinate of the ramification point w.r.t. ``base``
    point: np.ndarray       # ramification point on Z(P), canonical
    min_gap: float          # smallest gap among the d - 1 distinct fiber points
    certificate: float      # |dQ/dt * d2Q/dw2| / scale^2, nonzero for a simple branch point

    @property
    def sphere(self) -> np.ndarray:
        return base_to_sphere(self.base)


def _discriminant_values(fs: FiberSystem, b) -> np.ndarray:
    d = fs.degree
    w, _ = fiber_roots_batch(fs, b, residual_tol=1e-8)
    iu = np.triu_indices(d, 1)
    diff = w[:, iu[0]] - w[:, iu[1]]
    return fs.leading ** (2 * d - 2) * np.prod(diff**2, axis=1)


def _polish_branch(fs: FiberSystem, b0: np.ndarray, w0: complex, maxiter: int = 60):
    """Newton on (Q, dQ/dw) = 0 in the affine chart of CP^1 that contains ``b0``."""
    Q = fs.Q
    Qw = partial(Q, 2)
    Qww = partial(Qw, 2)
    chart = 0 if abs(b0[0]) >= abs(b0[1]) else 1
    t = b0[1] / b0[0] if chart == 0 else b0[0] / b0[1]
    w = w0 / b0[chart]
    free = 1 - chart
    Qt = partial(Q, free)
    Qwt = partial(Qw, free)
    scale = Q.scale
    ok = False
    for _ in range(maxiter):
        y = np.array([1.0, t, w] if chart == 0 else [t, 1.0, w], dtype=np.complex128)
        F = np.array([evaluate(Q, y), evaluate(Qw, y)])
        J = np.array([[evaluate(Qt, y), evaluate(Qw, y)], [evaluate(Qwt, y), evaluate(Qww, y)]])
        try:
            step = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            break
        t -= step[0]
        w -= step[1]
        if abs(step[0]) <= 1e-15 * (1 + abs(t)) and abs(step[1]) <= 1e-15 * (1 + abs(w)):
            ok = True
            break
        if not (np.isfinite(t) and np.isfinite(w)):
            break
    y = np.array([1.0, t, w] if chart == 0 else [t, 1.0, w], dtype=np.complex128)
    resid = max(abs(evaluate(Q, y)), abs(evaluate(Qw, y))) / (scale * max(1.0, np.linalg.norm(y)) ** fs.degree)
    if not ok and resid > 1e-12:
        raise PencilNonGenericError("ramification point polish did not converge")
    cert = abs(evaluate(Qt, y) * evaluate(Qww, y)) / scale**2
    b = y[:2]
    nb = np.linalg.norm(b)
    return b / nb, w / nb, cert


def discriminant_points(
    P: HomogeneousPoly3,
    pencil: Pencil,
    certificate_floor: float = 1e-9,
    distinct_tol: float = 1e-8,
) -> list[BranchPoint]:
    """Branch points of the projection of Z(P) from the pencil center.

    For smooth Z(P) and a generic pencil there are exactly d(d-1), all
    simple; a double branch point raises :class:`PencilNonGenericError`.
    """
    fs = make_fiber_system(P, pencil)
    d = P.degree
    if d == 1:
        return []
    nb = d * (d - 1)
    N = nb + 1
    z = np.exp(2j * np.pi * np.arange(N) / N)
    vals = _discriminant_values(fs, np.stack([np.ones(N), z], axis=-1))
    a = np.fft.fft(vals) / N
    if abs(a[-1]) <= 1e-13 * np.max(np.abs(a)):
        raise PencilNonGenericError("branch point at the chart infinity; re-randomize the pencil")
    zr = aberth(a)
    out: list[BranchPoint] = []
    for zk in np.atleast_1d(zr):
        b = np.array([1.0, zk]) / math.hypot(1.0, abs(zk))
        w, _ = fiber_roots_batch(fs, b[None, :], residual_tol=1e-6)
        w = w[0]
        diff = np.abs(w[:, None] - w[None, :]) + np.diag(np.full(d, np.inf))
        i, j = np.unravel_index(np.argmin(diff), diff.shape)
        bb, ww, cert = _polish_branch(fs, b, 0.5 * (w[i] + w[j]))
        if cert < certificate_floor:
            raise PencilNonGenericError(f"branch point with vanishing certificate {cert:.3g}")
        # distinct fiber points: the other d - 2 roots plus the double one
        wf, _ = fiber_roots_batch(fs, bb[None, :], residual_tol=1e-6)
        wf = wf[0]
        far = np.argsort(np.abs(wf - ww))[2:]
        pts = np.concatenate([[ww], wf[far]])
        gap = float(_min_gap(pts)[0]) if d > 2 else math.inf
        out.append(BranchPoint(bb, complex(ww), canonical(pencil.lift(bb, ww)), gap, float(cert)))
    bases = np.array([p.base for p in out])
    dist = base_distance(bases[:, None, :], bases[None, :, :]) + np.diag(np.full(len(out), np.inf))
    if np.min(dist) <= distinct_tol:
        raise PencilNonGenericError("discriminant root of multiplicity > 1")
    if len(out) != nb:
        raise PencilNonGenericError(f"found {len(out)} branch points, expected {nb}")
    return out


def branch_report(points: list[BranchPoint]) -> str:
    """One line per branch point: base coordinates, min root gap, certificate."""
    lines = ["# b0_re b0_im b1_re b1_im min_root_gap certificate multiplicity"]
    for p in points:
        b0, b1 = p.base
        mult = 1 if p.certificate > 0 else 2
        lines.append(
            f"{b0.real:.17g} {b0.imag:.17g} {b1.real:.17g} {b1.imag:.17g} "
            f"{p.min_gap:.17g} {p.certificate:.17g} {mult}"
        )
    return "\n".join(lines) + "\n"


def random_pencil(
    P: HomogeneousPoly3,
    rng: np.random.Generator,
    center_clearance: float = 1e-6,
    min_branch_separation: float = 1e-4,
    max_tries: int = 50,
) -> tuple[Pencil, list[BranchPoint]]:
    """Haar-random pencil, rejected until its center is off Z(P) and the
    branch points are simple and pairwise separated."""
    last = None
    for _ in range(max_tries):
        U = unitary_group.rvs(3, random_state=rng)
        pencil = Pencil(U)
        c = pencil.frame[:, 2]
        g = np.linalg.norm(np.array([evaluate(partial(P, a), c) for a in range(3)]))
        if abs(evaluate(P, c)) <= center_clearance * max(g, P.scale * 1e-12):
            last = "center near curve"
            continue
        try:
            pts = discriminant_points(P, pencil)
        except (PencilDegenerateError, RootFindingError) as exc:
            last = str(exc)
            continue
        if len(pts) > 1:
            bases = np.array([p.base for p in pts])
            dist = base_distance(bases[:, None, :], bases[None, :, :]) + np.diag(np.full(len(pts), np.inf))
            if np.min(dist) < min_branch_separation:
                last = "branch points too close"
                continue
        return pencil, pts
    raise PencilNonGenericError(f"no generic pencil after {max_tries} tries ({last})")


# -- root tracking -----------------------------------------------------------

def _segment_distance_to_points(a: np.ndarray, b: np.ndarray, pts: np.ndarray) -> float:
    """Min CP^1 distance from the geodesic segment [a, b] to ``pts`` (sphere vectors)."""
    if len(pts) == 0:
        return math.inf
    sa, sb = base_to_sphere(a), base_to_sphere(b)
    n = np.cross(sa, sb)
    nn = np.linalg.norm(n)
    best = np.minimum(np.arccos(np.clip(pts @ sa, -1, 1)), np.arccos(np.clip(pts @ sb, -1, 1)))
    if nn > 1e-15:
        n = n / nn
        proj = pts - np.outer(pts @ n, n)
        pn = np.linalg.norm(proj, axis=1)
        ok = pn > 1e-15
        proj[ok] /= pn[ok, None]
        # projection lies on the arc iff it is between sa and sb
        within = ok & (np.cross(sa, proj) @ n >= 0) & (np.cross(proj, sb) @ n >= 0)
        perp = np.arcsin(np.clip(np.abs(pts @ n), 0, 1))
        best = np.where(within, np.minimum(best, perp), best)
    return 0.5 * float(np.min(best))


def track_batch(
    fs: FiberSystem,
    b_start: np.ndarray,
    b_end: np.ndarray,
    w_start: np.ndarray,
    residual_tol: float = 1e-10,
    h_min: float = 1e-12,
    max_steps: int = 100000,
):
    """Continue the roots ``w_start`` (N, d) along b(t) = (1-t) b_start + t b_end.

    Predictor: tangent from the implicit derivative.  Corrector: Newton.
    A step is accepted when the residual is below ``residual_tol`` relative to
    the coefficient scale, every root stays farther than 3x its corrector
    displacement from every other root, and no root moves more than half of
    its distance to the nearest other root.
    Returns the roots at t = 1 and the number of accepted steps per path.
    """
    b_start = np.atleast_2d(np.asarray(b_start, dtype=np.complex128))
    b_end = np.atleast_2d(np.asarray(b_end, dtype=np.complex128))
    w = np.array(np.atleast_2d(w_start), dtype=np.complex128)
    N, d = w.shape
    db = b_end - b_start
    t = np.zeros(N)
    h = np.ones(N)
    steps = np.zeros(N, dtype=np.int64)
    active = np.ones(N, dtype=bool)

    def state(tt, ww, idx):
        b = b_start[idx] + tt[:, None] * db[idx]
        c, c0, c1 = fs.coeffs(b, derivative=True)
        ct = c0 * db[idx, 0:1] + c1 * db[idx, 1:2]
        return c, ct

    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        t0, w0, h0 = t[idx], w[idx], h[idx]
        c, ct = state(t0, w0, idx)
        p_w = _horner(c, w0)[1]
        p_t = _horner(ct, w0)[0]
        t1 = np.minimum(t0 + h0, 1.0)
        dt = (t1 - t0)[:, None]
        w_pred = w0 - dt * p_t / p_w
        c1_, _ = state(t1, w_pred, idx)
        w1 = w_pred.copy()
        for _ in range(4):
            p, dp = _horner(c1_, w1)
            w1 = w1 - p / dp
        p, _ = _horner(c1_, w1)
        disp = np.abs(w1 - w_pred)
        gap1 = np.abs(w1[:, :, None] - w1[:, None, :])
        gap1[:, np.arange(d), np.arange(d)] = np.inf
        near1 = gap1.min(axis=2) if d > 1 else np.full_like(disp, np.inf)
        gap0 = np.abs(w0[:, :, None] - w0[:, None, :])
        gap0[:, np.arange(d), np.arange(d)] = np.inf
        near0 = gap0.min(axis=2) if d > 1 else np.full_like(disp, np.inf)
        ok = (
            np.all(np.abs(p) <= residual_tol * _abs_scale(c1_, w1), axis=1)
            & np.all(near1 > 3 * disp, axis=1)
            & np.all(np.abs(w1 - w0) < 0.5 * near0, axis=1)
            & np.all(np.isfinite(w1), axis=1)
        )
        acc = idx[ok]
        rej = idx[~ok]
        t[acc] = t1[ok]
        w[acc] = w1[ok]
        steps[acc] += 1
        h[acc] = np.minimum(2 * h0[ok], 1.0)
        h[rej] = 0.5 * h0[~ok]
        if np.any(h[rej] < h_min):
            raise StepSizeUnderflowError("corrector failed to converge above the minimal step size")
        active[acc[t[acc] >= 1.0]] = False
    else:
        raise StepSizeUnderflowError("step budget exhausted")
    return w, steps


def _match(w_from: np.ndarray, w_to: np.ndarray, tol: float) -> np.ndarray:
    """Permutation ``perm`` with w_from[i] ~ w_to[perm[i]], checked for bijectivity."""
    dist = np.abs(w_from[:, None] - w_to[None, :])
    perm = np.argmin(dist, axis=1)
    if len(set(perm.tolist())) != len(perm) or np.any(dist[np.arange(len(perm)), perm] > tol):
        raise RootFindingError("tracked roots do not match the end fiber")
    return perm


def track_roots(
    P: HomogeneousPoly3,
    pencil: Pencil,
    path,
    start: FiberRoots | None = None,
    branch_points: list[BranchPoint] | None = None,
    clearance: float = 0.0,
) -> tuple[FiberRoots, np.ndarray]:
    """Continue fiber roots along a polyline of base representatives.

    Returns the end fiber (as computed by :func:`fiber_roots` at the last
    path point) and ``perm`` with start sheet ``i`` ending on sheet ``perm[i]``.
    """
    fs = make_fiber_system(P, pencil)
    path = np.asarray(path, dtype=np.complex128)
    if path.ndim != 2 or path.shape[1] != 2 or len(path) < 2:
        raise DomainError("path must be a polyline of at least two base points")
    if start is None:
        start = fiber_roots(P, pencil, path[0])
    if branch_points:
        pts = np.array([bp.sphere for bp in branch_points])
        for a, b in zip(path[:-1], path[1:]):
            if _segment_distance_to_points(a, b, pts) < clearance:
                raise PathTooCloseError("path passes within the clearance of a branch point")
    w = start.roots[None, :]
    for a, b in zip(path[:-1], path[1:]):
        w, _ = track_batch(fs, a[None, :], b[None, :], w)
    end = fiber_roots(P, pencil, path[-1])
    scale = 1 + np.max(np.abs(end.roots))
    perm = _match(w[0], end.roots, 1e-6 * scale)
    return end, perm


def cycle_type(perm) -> list[int]:
    perm = list(perm)
    seen = [False] * len(perm)
    out = []
    for i in range(len(perm)):
        if seen[i]:
            continue
        n, j = 0, i
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            n += 1
        out.append(n)
    return sorted(out, reverse=True)
