"""Discrete Laplace-Beltrami spectra on intrinsic triangle meshes.

Stiffness uses cotangent weights computed from edge lengths; mass is the
lumped mixed-Voronoi area.  The generalized problem ``S v = lam M v`` is
solved by shift-invert at zero with the constant kernel deflated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .surface_mesh import SurfaceMesh, cotangents, heron, mixed_areas_per_corner


class AssemblyError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


@dataclass(frozen=True, eq=False)
class DiscreteLaplacian:
    stiffness: sp.csr_matrix
    mass: np.ndarray  # diagonal entries

    @property
    def n(self) -> int:
        return self.stiffness.shape[0]

    @property
    def mass_matrix(self) -> sp.dia_matrix:
        return sp.diags(self.mass)


@dataclass(frozen=True, eq=False)
class SpectralResult:
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray = field(repr=False)
    residuals: np.ndarray
    iterations: int = 0
    method: str = "iterative"

    @property
    def gap(self) -> float:
        return float(self.eigenvalues[1])

    def report(self) -> dict:
        return {
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "residuals": [float(x) for x in self.residuals],
            "iterations": int(self.iterations),
            "method": self.method,
        }


def assemble(mesh: SurfaceMesh) -> DiscreteLaplacian:
    L = mesh.face_lengths
    area = heron(L)
    scale = max(float(np.max(L)) ** 2, 1e-300)
    bad = np.flatnonzero(~(area > 1e-14 * scale))
    if bad.size:
        raise AssemblyError(f"degenerate face {int(bad[0])} (area {area[bad[0]]:.3g})")
    cot = cotangents(L)
    f = mesh.faces
    # the edge opposite corner c joins corners c+1 and c+2
    i = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    j = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
    w = 0.5 * np.concatenate([cot[:, 0], cot[:, 1], cot[:, 2]])
    n = mesh.n_vertices
    W = sp.coo_matrix((w, (i, j)), shape=(n, n)).tocsr()
    W = W + W.T
    S = (sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()
    mass = np.bincount(f.reshape(-1), weights=mixed_areas_per_corner(L).reshape(-1), minlength=n)
    return DiscreteLaplacian(S, mass)


def _residuals(lap: DiscreteLaplacian, lam: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    Mv = lap.mass[:, None] * vecs
    r = lap.stiffness @ vecs - Mv * lam[None, :]
    return np.linalg.norm(r, axis=0) / np.linalg.norm(Mv, axis=0)


def dense_eigenpairs(lap: DiscreteLaplacian, k: int) -> SpectralResult:
    """Reference solve with a dense symmetric-definite eigensolver."""
    S = lap.stiffness.toarray()
    lam, vecs = scipy.linalg.eigh(S, np.diag(lap.mass), subset_by_index=[0, k - 1])
    lam[0] = max(lam[0], 0.0) if abs(lam[0]) < 1e-10 * max(1.0, abs(lam[-1])) else lam[0]
    return SpectralResult(lam, vecs, _residuals(lap, lam, vecs), 0, "dense")


def lowest_eigenpairs(
    lap: DiscreteLaplacian,
    k: int,
    seed: int = 0,
    maxiter: int = 500,
    method: str = "auto",
    tol: float = 0.0,
) -> SpectralResult:
    """The ``k`` smallest eigenpairs of ``S v = lam M v`` on a connected mesh.

    Returned eigenfunctions are mass-orthonormal; the first is constant.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    n = lap.n
    if method == "dense" or (method == "auto" and n <= max(24, 3 * k)):
        return dense_eigenpairs(lap, k)
    if k >= n - 1:
        raise ValueError("k must be much smaller than the vertex count")
    S = lap.stiffness
    m = lap.mass
    d = np.sqrt(m)
    ones = np.ones(n)
    mtot = float(m.sum())
    lu = splu(S[1:, 1:].tocsc())
    count = [0]

    def apply(u):
        u = np.asarray(u).reshape(-1)
        count[0] += 1
        z = d * u
        z = z - m * (z.sum() / mtot)
        x = np.empty(n)
        x[0] = 0.0
        x[1:] = lu.solve(z[1:])
        x -= m @ x / mtot
        return d * x

    B = LinearOperator((n, n), matvec=apply, dtype=np.float64)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    u0 = d / math.sqrt(mtot)
    v0 -= u0 * (u0 @ v0)
    ncv = min(n - 1, max(2 * k + 1, 20))
    try:
        nu, U = eigsh(B, k=k - 1, which="LA", v0=v0, ncv=ncv, maxiter=maxiter, tol=tol)
    except ArpackNoConvergence as exc:
        raise ConvergenceError("eigensolver did not converge", getattr(exc, "eigenvalues", None)) from exc
    order = np.argsort(-nu)
    nu, U = nu[order], U[:, order]
    lam = np.concatenate([[0.0], 1.0 / nu])
    vecs = np.column_stack([ones / math.sqrt(mtot), U / d[:, None]])
    # fix signs for reproducibility: largest-magnitude entry positive
    idx = np.argmax(np.abs(vecs), axis=0)
    vecs *= np.sign(vecs[idx, np.arange(vecs.shape[1])])[None, :]
    return SpectralResult(lam, vecs, _residuals(lap, lam, vecs), count[0], "iterative")


def spectrum(mesh: SurfaceMesh, k: int = 6, **kw) -> SpectralResult:
    return lowest_eigenpairs(assemble(mesh), k, **kw)


@dataclass(frozen=True)
class RescaleReport:
    factor: float
    max_relative_error: float
    passed: bool


def rescale_check(mesh: SurfaceMesh, result: SpectralResult, c: float, tol: float = 1e-8, **kw) -> RescaleReport:
    """Recompute the spectrum with lengths times ``c``; eigenvalues must scale by 1/c^2."""
    k = len(result.eigenvalues)
    scaled = lowest_eigenpairs(assemble(mesh.scaled(c)), k, **kw)
    ref = result.eigenvalues[1:] / c**2
    err = np.abs(scaled.eigenvalues[1:] - ref) / np.abs(ref)
    worst = float(err.max()) if err.size else 0.0
    return RescaleReport(c, worst, worst <= tol)


def export_field(values) -> str:
    """Per-vertex scalar field in the mesh sidecar format."""
    return "# v value\n" + "".join(f"{i} {v:.17g}\n" for i, v in enumerate(np.asarray(values)))
