import csv
import json
import warnings
from importlib import resources

import numpy as np
import pytest

from perfhom import cli
from perfhom.cache import cache_key, cache_lookup, load_or_build
from perfhom.coefficients import CoefficientField
from perfhom.fem import SolverError

MINIMAL = resources.files("perfhom").joinpath("presets/minimal.toml").read_text()


def _write(tmp_path, text, name="study.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _run(tmp_path, text, *extra):
    cfg = _write(tmp_path, text)
    out = tmp_path / "out"
    rc = cli.main(["run", str(cfg), "--out", str(out), "--cache", str(tmp_path / "cache"), *extra])
    return rc, out


def test_minimal_config(tmp_path):
    rc, out = _run(tmp_path, MINIMAL)
    assert rc == 0
    with open(out / "rates.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(cli.RATE_COLUMNS)
    assert len(rows) == 2
    assert rows[1][0] == "h1"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"] is True
    assert (out / "monitors.csv").exists() and (out / "run.log").exists()


def test_minimal_run_is_byte_identical(tmp_path):
    _, out = _run(tmp_path, MINIMAL)
    first = (out / "rates.csv").read_bytes()
    _, out = _run(tmp_path, MINIMAL)
    assert (out / "rates.csv").read_bytes() == first


@pytest.mark.parametrize("text,field", [
    ("[geometry]\nn = [4]\n[study]\ntau = 1.5\n", "tau"),
    ("[geometry]\nn = [8, 4]\n", "n"),
    ("[geometry]\nn = [4]\n[study]\nh_divisor = 4\n", "h_divisor"),
    ("[geometry]\nn = [4]\nradius = 0.2\n", "radius"),
    ("[geometry]\nn = [4]\n[study]\nmethod = \"lu\"\n", "method"),
])
def test_config_errors_exit_2(tmp_path, capsys, text, field):
    rc, _ = _run(tmp_path, text)
    assert rc == 2
    err = capsys.readouterr().err
    assert field in err


def test_config_error_reports_line(tmp_path, capsys):
    rc, _ = _run(tmp_path, "[geometry]\nn = [4]\n\n[study]\ntau = 1.5\n")
    assert rc == 2
    assert "study.toml:5" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.toml")]) == 2


def test_unknown_only(tmp_path):
    rc, _ = _run(tmp_path, MINIMAL, "--only", "nonsense")
    assert rc == 2


def test_solver_failure_exit_3(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise SolverError("injected")
    monkeypatch.setattr(cli, "run_pipeline", boom)
    rc, out = _run(tmp_path, MINIMAL)
    assert rc == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["failures"][0]["job"] == "eps=1/4"
    assert "injected" in capsys.readouterr().err


def test_check_cell(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL)
    rc = cli.main(["check-cell", str(cfg), "--out", str(tmp_path / "o"), "--cache", str(tmp_path / "c")])
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 7
    assert lines[0].startswith("A_hat_symmetry")
    # the flux residual limit is out of reach at cell h = 1/8
    assert "div_E_residual" in lines[-1] and lines[-1].endswith("FAIL")
    assert rc == 1


def test_cache_cold_then_warm(tmp_path, disk, lame):
    cold, hit0 = load_or_build(tmp_path, disk, lame, 1 / 16)
    warm, hit1 = load_or_build(tmp_path, disk, lame, 1 / 16)
    assert (hit0, hit1) == (False, True)
    assert np.array_equal(cold.A_hat.entries, warm.A_hat.entries)
    assert np.array_equal(cold.E, warm.E)
    assert np.array_equal(cold.Psi.values, warm.Psi.values)


def test_cache_key_depends_on_h_and_coefficients(disk, lame):
    k = cache_key(disk, lame, 1 / 16)
    assert k != cache_key(disk, lame, 1 / 32)
    assert k != cache_key(disk, CoefficientField("isotropic_lame", 2.0, 1.0), 1 / 16)
    assert cache_lookup("/nonexistent", disk, lame, 1 / 16) is None


def test_cache_rejects_bad_residual(tmp_path, disk, lame):
    load_or_build(tmp_path, disk, lame, 1 / 16)
    path = tmp_path / cache_key(disk, lame, 1 / 16) / "manifest.json"
    man = json.loads(path.read_text())
    man["diagnostics"]["cell_residual"] = 1e-3
    path.write_text(json.dumps(man))
    with pytest.warns(UserWarning, match="cell_residual"):
        cs, hit = load_or_build(tmp_path, disk, lame, 1 / 16)
    assert not hit
    # the recomputed entry replaces the bad one
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert load_or_build(tmp_path, disk, lame, 1 / 16)[1]


def test_cache_recovers_from_corrupt_files(tmp_path, disk, lame):
    load_or_build(tmp_path, disk, lame, 1 / 16)
    entry = tmp_path / cache_key(disk, lame, 1 / 16)
    (entry / "arrays.npz").write_bytes(b"garbage")
    with pytest.warns(UserWarning, match="corrupt"):
        assert not load_or_build(tmp_path, disk, lame, 1 / 16)[1]
    (entry / "manifest.json").write_text("{")
    with pytest.warns(UserWarning, match="corrupt"):
        assert not load_or_build(tmp_path, disk, lame, 1 / 16)[1]


def test_env_cache_override(tmp_path, monkeypatch):
    cfg = _write(tmp_path, MINIMAL)
    monkeypatch.setenv("PERFHOM_CACHE", str(tmp_path / "envcache"))
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert any((tmp_path / "envcache").iterdir())
