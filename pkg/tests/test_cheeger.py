import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cheegerlab.cheeger import (
    NoCutError,
    ShapeError,
    buser_lower,
    cheeger_inequality_report,
    estimate_cheeger,
    face_layout,
    homology_signatures,
    isoperimetric_check,
    isoperimetric_slack,
    level_cut,
    sweep_cut,
    systole,
)
from cheegerlab.spectral import spectrum
from cheegerlab.surface_mesh import curvature, flat_torus, total_area

from conftest import kostlan_mesh, line_mesh


def torus_x(T_nx, T_ny, W, H):
    T = flat_torus(T_nx, T_ny, W, H)
    x = (np.arange(T.n_vertices) // T_ny) * (W / T_nx)
    y = (np.arange(T.n_vertices) % T_ny) * (H / T_ny)
    return T, x, y


# -- sweep cuts ---------------------------------------------------------------------

def test_level_set_exact_on_flat_torus():
    # f depends on x only, so every level set is a pair of vertical loops
    nx, ny, W, H = 24, 8, 2.0, 1.0
    T, x, _ = torus_x(nx, ny, W, H)
    f = np.cos(2 * np.pi * x / W)
    xs = np.linspace(0, W, nx + 1)
    fx = np.cos(2 * np.pi * xs / W)
    fine = np.linspace(0, W, 400001)
    for t in (-0.73, -0.1, 0.37, 0.9):
        cut = level_cut(T, f, t)
        assert cut.length == pytest.approx(2 * H, rel=1e-12)
        below = H * W * np.mean(np.interp(fine, xs, fx) < t)
        assert cut.area_below == pytest.approx(below, rel=1e-4)
        assert cut.loops() == (2, True)


def test_segment_lengths_match_layout():
    _, m, _ = kostlan_mesh(3, 2)
    f = spectrum(m, k=3).eigenfunctions[:, 1]
    cut = level_cut(m, f, 0.1 * f.max())
    xy = face_layout(m)
    faces = m.faces[cut.faces]
    lens = []
    for fi, loc, (a, b), (sa, sb) in zip(cut.faces, faces, cut.ends, cut.params):
        pos = {int(v): xy[fi, c] for c, v in enumerate(loc)}
        pa = (1 - sa) * pos[int(a[0])] + sa * pos[int(a[1])]
        pb = (1 - sb) * pos[int(b[0])] + sb * pos[int(b[1])]
        lens.append(np.linalg.norm(pa - pb))
    assert np.allclose(lens, cut.seg_lengths, rtol=1e-9, atol=1e-14)
    assert cut.length == pytest.approx(sum(lens), rel=1e-12)


def test_flat_torus_cheeger():
    T = flat_torus(40, 20, 2.0, 1.0)
    est = estimate_cheeger(T, spectrum(T, k=4))
    assert est.h_upper == pytest.approx(2.0, rel=0.1)
    assert est.cut.loops()[0] == 2


def test_unit_square_torus_cheeger():
    # two loops of length 1 bounding area 1/2: h = 4
    T = flat_torus(30, 30, 1.0, 1.0)
    est = estimate_cheeger(T, spectrum(T, k=6))
    assert est.h_upper == pytest.approx(4.0, rel=0.1)


def test_line_cheeger():
    m = line_mesh(4)
    est = estimate_cheeger(m, spectrum(m, k=4))
    assert est.h_upper == pytest.approx(2.0, rel=0.1)
    assert est.cut.loops() == (1, True)
    assert est.h_lower <= est.h_upper


def test_sweep_symmetry_and_affine_invariance():
    _, m, _ = kostlan_mesh(3, 2)
    f = spectrum(m, k=3).eigenfunctions[:, 1]
    h = sweep_cut(m, f).h_upper
    assert sweep_cut(m, -f).h_upper == pytest.approx(h, rel=1e-12)
    assert sweep_cut(m, 3.7 * f - 11.0).h_upper == pytest.approx(h, rel=1e-12)


def test_cut_invariants():
    _, m, _ = kostlan_mesh(4, 2)
    res = sweep_cut(m, spectrum(m, k=3).eigenfunctions[:, 1])
    A = total_area(m)
    cut = res.cut
    assert cut.area_below + cut.area_above == pytest.approx(A, rel=1e-9)
    assert cut.length > 0
    assert res.h_upper == pytest.approx(cut.ratio, rel=1e-9)
    # ratio against the smaller side is at least twice length over total area
    assert res.h_upper >= 2 * cut.length / A * (1 - 1e-9)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_sweep_bounded_below_by_half_area_ratio(seed):
    T = flat_torus(8, 6, 1.3, 1.0)
    f = np.random.default_rng(seed).standard_normal(T.n_vertices)
    res = sweep_cut(T, f, n_levels=32)
    assert res.h_upper >= 2 * res.cut.length / total_area(T) * (1 - 1e-9)
    assert sum(res.cut.side_areas) == pytest.approx(total_area(T), rel=1e-9)


def test_constant_field_has_no_cut():
    T = flat_torus(5, 5)
    with pytest.raises(NoCutError):
        sweep_cut(T, np.ones(T.n_vertices))


def test_cut_export():
    T = flat_torus(10, 5, 2.0, 1.0)
    _, x, _ = torus_x(10, 5, 2.0, 1.0)
    cut = level_cut(T, np.cos(np.pi * x), 0.2)
    lines = cut.export().splitlines()
    assert lines[0].startswith("# level")
    assert len(lines) == 2 + len(cut.faces)


# -- Buser bound and the bracket -----------------------------------------------------

def test_buser_examples():
    assert buser_lower(10.0, 0.0) == pytest.approx(1.0, rel=1e-15)
    assert buser_lower(8.0, -4.0) == pytest.approx((-2 + math.sqrt(84)) / 10, rel=1e-14)
    assert buser_lower(8.0, -4.0) == pytest.approx(0.7165151389911680, rel=1e-12)
    assert buser_lower(10.0, 5.0) == buser_lower(10.0, 0.0)  # positive curvature gives a = 0
    with pytest.raises(ValueError):
        buser_lower(0.0, -1.0)


@settings(max_examples=100, deadline=None)
@given(lam=st.floats(1e-8, 1e4), floor=st.floats(-1e4, 10), bump=st.floats(1.001, 10))
def test_buser_root_and_monotonicity(lam, floor, bump):
    h = buser_lower(lam, floor)
    a = math.sqrt(max(0.0, -floor))
    assert 10 * h * h + 2 * a * h == pytest.approx(lam, rel=1e-10)
    assert buser_lower(lam * bump, floor) > h


def test_inequality_report():
    rep = cheeger_inequality_report(2.0, 8.0, buser_lower(8.0, 4.0))
    assert rep.upper_gap == pytest.approx(7.0)
    assert rep.bracket_ok and rep.lower_ok


@pytest.mark.parametrize("d", [2, 3, 4])
def test_bracket_on_samples(d):
    _, m, _ = kostlan_mesh(d, 2)
    est = estimate_cheeger(m, spectrum(m, k=6))
    rep = cheeger_inequality_report(est.h_upper, est.lambda1, est.h_lower)
    assert est.h_lower <= est.h_upper
    assert rep.lower_ok
    assert est.curvature_floor == pytest.approx(curvature(m).inf)


# -- systole -------------------------------------------------------------------------

def test_systole_absent_for_spheres():
    assert systole(line_mesh(2)).length is None
    assert systole(kostlan_mesh(2, 2)[1]).length is None


@pytest.mark.parametrize("W,H", [(2.0, 1.0), (1.0, 1.0), (1.0, 3.0)])
def test_flat_torus_systole(W, H):
    T = flat_torus(int(12 * W), int(12 * H), W, H)
    s = systole(T)
    assert s.length == pytest.approx(min(W, H), rel=0.1)
    assert s.length >= min(W, H) * (1 - 1e-12)
    assert s.certificate != 0


def test_systole_cycle_is_closed_and_nontrivial():
    _, m, _ = kostlan_mesh(3, 2)
    s = systole(m)
    e = m.connectivity.edges[s.cycle]
    deg = np.bincount(e.ravel(), minlength=m.n_vertices)
    assert np.all(deg % 2 == 0) and deg.max() == 2
    assert s.length == pytest.approx(m.lengths[s.cycle].sum(), rel=1e-12)
    mask, _ = homology_signatures(m)
    assert int(np.bitwise_xor.reduce(mask[s.cycle])) == s.certificate != 0


@settings(max_examples=5, deadline=None)
@given(c=st.floats(0.1, 10))
def test_systole_homogeneous(c):
    T = flat_torus(10, 8, 1.5, 1.0)
    assert systole(T.scaled(c)).length == pytest.approx(c * systole(T).length, rel=1e-12)


def test_sampled_sources_overestimate():
    _, m, _ = kostlan_mesh(3, 2)
    full = systole(m).length
    part = systole(m, sources=np.arange(0, m.n_vertices, 7)).length
    assert part >= full * (1 - 1e-12)


def test_homology_signatures_form_cocycle():
    for mesh in (flat_torus(6, 5), kostlan_mesh(4, 2)[1]):
        mask, g = homology_signatures(mesh)
        fe = mesh.connectivity.edge.reshape(-1, 3)
        assert np.all((mask[fe[:, 0]] ^ mask[fe[:, 1]] ^ mask[fe[:, 2]]) == 0)
        assert int(np.bitwise_or.reduce(mask)) == (1 << (2 * g)) - 1


def test_systole_under_refinement():
    coarse = systole(flat_torus(10, 5, 2.0, 1.0)).length
    fine = systole(flat_torus(20, 10, 2.0, 1.0)).length
    assert fine >= coarse - 2 * 0.2


# -- isoperimetric check -------------------------------------------------------------

def test_planar_circle_slack_near_zero():
    T, x, y = torus_x(60, 60, 1.0, 1.0)
    f = (x - 0.5) ** 2 + (y - 0.5) ** 2
    cut = level_cut(T, f, 0.2**2)
    rec = isoperimetric_check(T, cut, 0.0)
    assert rec.disk_area == pytest.approx(math.pi * 0.04, rel=0.02)
    assert rec.slack >= 0  # inscribed polygons satisfy the planar inequality strictly
    assert rec.slack <= 0.01 * cut.length**2
    assert rec.ok


def test_spherical_caps():
    m = line_mesh(4)
    p = m.embedding[np.flatnonzero(np.bincount(m.faces.ravel()) == 6)[0]]
    f = -np.abs(m.embedding @ np.conj(p)) ** 2
    Ksup = curvature(m).sup
    rel = []
    for rho in (0.6, 0.3, 0.1):
        cut = level_cut(m, f, -math.cos(rho) ** 2)
        assert cut.length == pytest.approx(math.pi * math.sin(2 * rho), rel=0.02)
        rec = isoperimetric_check(m, cut, Ksup)
        assert rec.disk_area == pytest.approx(math.pi * math.sin(rho) ** 2, rel=0.05)
        assert rec.ok and rec.slack >= -rec.tolerance
        rel.append(abs(rec.slack))
    # both sides of the inequality vanish for small caps
    assert rel[-1] < rel[0]


def test_slack_positive_for_small_area():
    assert isoperimetric_slack(1.0, 1e-6, 4.0) > 0
    assert isoperimetric_slack(math.pi * math.sin(0.8), math.pi * math.sin(0.4) ** 2, 4.0) == pytest.approx(0.0, abs=1e-12)


def test_class_radius_gates_assertion():
    m = line_mesh(3)
    p = m.embedding[0]
    f = -np.abs(m.embedding @ np.conj(p)) ** 2
    cut = level_cut(m, f, -math.cos(0.3) ** 2)
    inside = isoperimetric_check(m, cut, 4.0, radius=10.0)
    outside = isoperimetric_check(m, cut, 4.0, radius=1e-3)
    assert inside.in_class and not outside.in_class and outside.ok
    assert 0.2 < inside.graph_radius < 0.5


def test_two_loop_cut_rejected():
    T, x, _ = torus_x(12, 6, 2.0, 1.0)
    cut = level_cut(T, np.cos(np.pi * x), 0.1)
    with pytest.raises(ShapeError):
        isoperimetric_check(T, cut, 0.0)
