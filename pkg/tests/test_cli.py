import json

import pytest

from cheegerlab import kostlan
from cheegerlab.cli import main


def _json(capsys):
    return json.loads(capsys.readouterr().out)


@pytest.fixture
def mesh_prefix(tmp_path, capsys):
    poly = tmp_path / "p.txt"
    assert main(["sample", "-d", "3", "--seed", "4", "-o", str(poly)]) == 0
    prefix = tmp_path / "curve"
    assert main(["mesh", str(poly), "--level", "1", "--seed", "2", "-o", str(prefix)]) == 0
    report = _json(capsys)
    assert report["genus"] == 1 and report["branch_points"] == 6
    return prefix


def test_sample_to_stdout_round_trips(capsys):
    assert main(["sample", "-d", "2", "--seed", "1", "--stream", "3"]) == 0
    P = kostlan.loads(capsys.readouterr().out)
    assert P.degree == 2
    assert kostlan.dumps(P) == kostlan.dumps(kostlan.sample_kostlan(2, kostlan.EnsembleSeed(1, 3)))


def test_mesh_writes_sidecars(mesh_prefix):
    for ext in (".off", ".lengths", ".branch"):
        assert mesh_prefix.with_suffix(ext).stat().st_size > 0
    assert mesh_prefix.with_suffix(".off").read_text().startswith("OFF")


def test_spectrum_and_fields(mesh_prefix, capsys, tmp_path):
    fields = tmp_path / "ef"
    assert main(["spectrum", str(mesh_prefix), "-k", "4", "--fields", str(fields)]) == 0
    rep = _json(capsys)
    lam = rep["eigenvalues"]
    assert len(lam) == 4 and lam[0] == 0.0 and lam[1] > 0
    assert rep["lambda1_unit_area"] == pytest.approx(lam[1] * 3.141592653589793)
    assert len(list(tmp_path.glob("ef.*.field"))) == 4


def test_cheeger_with_systole_and_cut(mesh_prefix, capsys, tmp_path):
    cut = tmp_path / "cut.txt"
    assert main(["cheeger", str(mesh_prefix), "-k", "3", "--levels", "32", "--systole", "--cut", str(cut)]) == 0
    rep = _json(capsys)
    assert 0 <= rep["h_lower"] <= rep["h_upper"]
    assert rep["systole"] > 0 and rep["systole_kind"] == "homological"
    assert cut.read_text().count("\n") > 1


def test_bounds(capsys):
    assert main(["bounds", "-d", "7", "--a", "0.5"]) == 0
    rep = _json(capsys)
    assert rep["d"] == 7 and rep["a_d"] == 0.5
    assert (rep["k_d"] ** 0.5) * rep["r_d"] == pytest.approx(0.5**0.5, rel=1e-12)


def test_experiment(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text(
        "[experiment]\ndegrees = 2\nsamples = 2\nseed = 1\n"
        "[mesh]\nlevel = 1\n[spectrum]\nk = 3\n[cheeger]\nsystole = false\n"
        f"[output]\ncsv = {tmp_path / 'r.csv'}\njson = {tmp_path / 'r.json'}\n"
    )
    assert main(["experiment", str(cfg)]) == 0
    assert "d=2 accepted=" in capsys.readouterr().out
    summary = json.loads((tmp_path / "r.json").read_text())
    assert summary["degrees"]["2"]["attempts"] >= 2
    assert (tmp_path / "r.csv").read_text().count("\n") >= 3


def test_errors_return_status_2(tmp_path, capsys):
    assert main(["bounds", "-d", "1"]) == 2
    assert main(["spectrum", str(tmp_path / "missing")]) == 2
    assert "error:" in capsys.readouterr().err
