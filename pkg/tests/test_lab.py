import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cheegerlab import lab
from cheegerlab.kostlan import DomainError
from cheegerlab.lab import (
    COLUMNS,
    ExperimentConfig,
    UnitArea,
    SampleRecord,
    a_rule,
    bound_calculator,
    dumps_json,
    records_csv,
    run_experiment,
    summarize,
    thresholds_for,
)


# -- bounds -------------------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(d=st.integers(2, 10_000), a=st.floats(1e-6, 10), C=st.floats(1e-3, 1e3), n=st.integers(1, 6))
def test_curvature_radius_identity(d, a, C, n):
    b = bound_calculator(d, a, C, n)
    assert math.sqrt(b.k_d) * b.r_d == pytest.approx(math.sqrt(a / C), rel=1e-12)


def test_bounds_positive_and_formulas():
    b = bound_calculator(5, 0.3, 2.0, 2)
    lg = math.log(5)
    assert b.r_d == pytest.approx(0.3 / (2 * 5**2.25 * lg), rel=1e-14)
    assert b.k_d == pytest.approx(2 / 0.3 * 5**4.5 * lg**2, rel=1e-14)
    assert b.w_d == pytest.approx(2 * math.pi * (math.cosh(math.sqrt(b.k_d) * b.r_d) - 1) / b.k_d, rel=1e-12)
    assert b.systole_threshold == pytest.approx(0.3 * 5**-3.5 / (2 * math.sqrt(lg)), rel=1e-14)
    assert b.lambda_threshold == pytest.approx(0.09 / (2 * 5**9 * lg), rel=1e-14)
    assert all(v > 0 for v in (b.r_d, b.k_d, b.w_d, b.systole_threshold, b.h_threshold, b.lambda_threshold))


def test_h_threshold_exponent_for_planes():
    # n = 2: h threshold is a_d / (C d^(9/2) sqrt(log d))
    for d in (2, 7, 40):
        b = bound_calculator(d, 0.5, 1.5, 2)
        assert b.h_threshold * 1.5 * d**4.5 * math.sqrt(math.log(d)) / 0.5 == pytest.approx(1, rel=1e-13)


def test_ball_volume_vanishes():
    w = [bound_calculator(4, a, 1.0, 2).w_d for a in (1.0, 1e-2, 1e-4, 1e-8)]
    assert all(x > y for x, y in zip(w, w[1:])) and w[-1] < 1e-12
    ws = [bound_calculator(d, a_rule("inv_log", d), 1.0, 2).w_d for d in range(2, 60)]
    assert all(x > y for x, y in zip(ws, ws[1:]))


def test_bounds_domain():
    with pytest.raises(DomainError):
        bound_calculator(1, 0.5, 1.0, 2)
    with pytest.raises(DomainError):
        bound_calculator(3, 0.0, 1.0, 2)
    assert a_rule("inv_log", 3) == pytest.approx(1 / math.log(4))
    assert a_rule("0.25", 3) == 0.25


# -- units --------------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(x=st.floats(1e-6, 1e6), kind=st.sampled_from(["length", "area", "h", "lambda", "curvature"]))
def test_unit_round_trip(x, kind):
    assert UnitArea.from_unit_area(UnitArea.to_unit_area(x, kind), kind) == pytest.approx(x, rel=1e-12)


def test_unit_factors():
    assert UnitArea.to_unit_area(1.0, "h") == pytest.approx(math.sqrt(math.pi), rel=1e-15)
    assert UnitArea.to_unit_area(1.0, "lambda") == pytest.approx(math.pi, rel=1e-15)
    assert UnitArea.to_unit_area(math.pi, "area") == pytest.approx(1.0, rel=1e-15)
    # length / area ratio converts like h
    ell, A = 2.0, 3.0
    assert UnitArea.to_unit_area(ell, "length") / UnitArea.to_unit_area(A, "area") == pytest.approx(
        UnitArea.to_unit_area(ell / A, "h"), rel=1e-14
    )
    assert UnitArea.to_unit_area(None, "h") is None


# -- configuration --------------------------------------------------------------------

def test_config_from_ini(tmp_path):
    text = """
[experiment]
degrees = 2, 4
samples = 7
seed = 11
[mesh]
level = 3
[cheeger]
systole = no
sweep_levels = 64
[bounds]
C = 2.5
a_rule = 0.1
[degenerate]
eps = 0.1 0.01
[output]
csv = out/r.csv
"""
    cfg = ExperimentConfig.from_ini(text, tmp_path)
    assert cfg.degrees == (2, 4) and cfg.samples == 7 and cfg.seed == 11 and cfg.level == 3
    assert not cfg.compute_systole and cfg.sweep_levels == 64
    assert cfg.C == 2.5 and cfg.a_rule == "0.1"
    assert cfg.degenerate_eps == (0.1, 0.01)
    assert cfg.csv_path == str(tmp_path / "out/r.csv")


@pytest.mark.parametrize(
    "kw", [{"degrees": (0,)}, {"samples": 0}, {"degenerate_eps": (0.1, -1.0)}, {"degrees": ()}]
)
def test_config_validation(kw):
    with pytest.raises(DomainError):
        ExperimentConfig(**kw)


# -- experiment ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def line_records():
    cfg = ExperimentConfig(degrees=(1,), samples=3, seed=5, level=2, k=5)
    return cfg, run_experiment(cfg)


def test_line_experiment(line_records):
    _, recs = line_records
    assert len(recs) == 3
    for r in recs:
        assert r.accepted and r.genus == 0 and r.branch_count == 0
        assert r.area == pytest.approx(math.pi, rel=0.01)
        assert r.lambda1 == pytest.approx(8, rel=0.02)
        assert r.lambda1_unitarea == pytest.approx(r.lambda1 * math.pi)
        assert r.h_lower <= r.h_upper
        assert r.systole is None
        assert r.gauss_bonnet_error <= 1e-9


def test_csv_layout(line_records):
    _, recs = line_records
    text = records_csv(recs)
    lines = text.splitlines()
    assert lines[0].split(",") == list(COLUMNS)
    assert len(lines) == 4
    row = dict(zip(COLUMNS, lines[1].split(",")))
    assert float(row["lambda1"]) == recs[0].lambda1  # 17 digits round-trip exactly
    assert "times" not in COLUMNS


def test_experiment_deterministic(line_records):
    cfg, recs = line_records
    assert records_csv(run_experiment(cfg)) == records_csv(recs)


def test_rejection_is_recorded_and_resampled(monkeypatch):
    calls = {"n": 0}
    real = lab.random_pencil

    def flaky(P, rng, **kw):
        calls["n"] += 1
        if calls["n"] == 1:
            raise lab.PencilDegenerateError("forced")
        return real(P, rng, **kw)

    monkeypatch.setattr(lab, "random_pencil", flaky)
    cfg = ExperimentConfig(degrees=(1,), samples=2, seed=1, level=1, k=4)
    recs = run_experiment(cfg)
    assert [r.status for r in recs] == ["rejected", "accepted", "accepted"]
    assert "forced" in recs[0].reason and recs[1].attempt == 1 and recs[1].index == 0
    assert recs[0].stream != recs[1].stream
    row = summarize(recs)["degrees"]["1"]
    assert row["accepted"] + row["rejected"] == row["attempts"] == 3
    assert row["requested"] == 2


def test_mismatch_flags_rejection(monkeypatch):
    from cheegerlab.kostlan import EnsembleSeed, sample_kostlan

    cfg = ExperimentConfig(degrees=(3,), samples=1, level=1, k=3, compute_systole=False)
    P = sample_kostlan(3, EnsembleSeed(2))
    rec = lab.measure(P, SampleRecord("kostlan", 3, 0, 0, 0, 0), cfg, 1, np.random.default_rng(0))
    assert rec.accepted
    monkeypatch.setattr(lab, "euler_genus", lambda m: (0, 5))
    rec = lab.measure(P, SampleRecord("kostlan", 3, 0, 0, 0, 0), cfg, 1, np.random.default_rng(0))
    assert rec.status == "rejected" and rec.reason.startswith("genus 5")


def test_summary_contract():
    cfg = ExperimentConfig(degrees=(3,), samples=3, seed=2, level=2, k=4, degenerate_eps=(0.1,), degenerate_level=2, systole_sources=50)
    recs = run_experiment(cfg)
    summ = summarize(recs, thresholds_for(cfg))
    row = summ["degrees"]["3"]
    for key in ("lambda1_ge_d^-10", "h_lower_ge_d^-5", "lambda1_le_6", "bracket_ok", "h_lower_ge_h_threshold"):
        fr = row[key]["fraction"]
        assert 0 <= fr <= 1
        lo, hi = row[key]["ci95"]
        assert 0 <= lo <= fr <= hi <= 1
    assert row["lambda1_ge_d^-10"]["fraction"] == 1.0
    assert row["accepted"] + row["rejected"] == row["attempts"]
    assert len(summ["degenerate"]) == 1
    assert row["attempts"] == sum(1 for r in recs if r.kind == "kostlan")
    assert all(r.systole_kind == "homological-sampled" for r in recs if r.kind == "kostlan" and r.accepted)
    with pytest.raises(DomainError):
        summarize([])


def test_json_floats():
    text = dumps_json({"a": 0.1, "b": [1.0, float("nan")], "c": None, "d": True, "e": "x", "f": 3})
    obj = json.loads(text)
    assert obj == {"a": 0.1, "b": [1.0, None], "c": None, "d": True, "e": "x", "f": 3}
    assert "0.10000000000000001" in text and "1.0" in text
