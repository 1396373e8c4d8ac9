import math

import numpy as np
import pytest

from cheegerlab.kostlan import EnsembleSeed, HomogeneousPoly3, sample_kostlan
from cheegerlab.projective import make_fiber_system, random_pencil
from cheegerlab.surface_mesh import SurfaceMesh, lift_mesh, prepare_base


def tetrahedron(edge: float = 1.0) -> SurfaceMesh:
    faces = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    pos = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) * edge / math.sqrt(8)
    return SurfaceMesh.from_vertex_positions(faces, pos)


def lifted(P, level, pencil_seed=0, stretch=True):
    pencil, pts = random_pencil(P, np.random.default_rng(pencil_seed))
    fs = make_fiber_system(P, pencil) if stretch else None
    return lift_mesh(P, pencil, prepare_base(level, pts, fs), pts), pts


_cache = {}


def line_mesh(level):
    key = ("line", level)
    if key not in _cache:
        _cache[key] = lifted(HomogeneousPoly3.monomial(1, 0, 0) + HomogeneousPoly3.monomial(0, 1, 0) * 0.5 + HomogeneousPoly3.monomial(0, 0, 1) * 0.25, level, stretch=False)[0]
    return _cache[key]


def kostlan_mesh(d, level, seed=3):
    key = ("kostlan", d, level, seed)
    if key not in _cache:
        P = sample_kostlan(d, EnsembleSeed(seed, d))
        _cache[key] = (P,) + lifted(P, level, seed)
    return _cache[key]


@pytest.fixture
def tetra():
    return tetrahedron()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
