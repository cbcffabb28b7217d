import json
import subprocess
import sys

import numpy as np
import pytest

from doalab.cli import main


@pytest.fixture
def scenario(tmp_path):
    p = tmp_path / "scen.json"
    p.write_text(json.dumps({"geometry": "ula:8", "thetas": [70.0, 110.0], "snr_db": 10.0,
                             "snapshots": 200, "seed": 5}))
    return p


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0], [list(map(float, l.split(","))) for l in lines[1:]]


def test_simulate_and_estimate_roundtrip(tmp_path, scenario, capsys):
    npy = tmp_path / "x.npy"
    assert main(["simulate", "--scenario", str(scenario), "--out", str(npy)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["shape"] == [8, 200]
    assert np.load(npy).shape == (8, 200)
    out = tmp_path / "est"
    assert main(["estimate", "--snapshots", str(npy), "--geometry", "ula:8", "--n-sources",
                 "2", "--method", "ols", "--out", str(out)]) == 0
    head, rows = read_csv(out / "estimates.csv")
    assert head == "index,theta_deg"
    assert np.allclose([r[1] for r in rows], [70, 110], atol=1.0)
    head, rows = read_csv(out / "iterations.csv")
    assert head == "iteration,theta_deg,objective" and len(rows) == 2


def test_estimate_sparse_writes_pseudospectrum(tmp_path, scenario):
    out = tmp_path / "sp"
    assert main(["estimate", "--scenario", str(scenario), "--method", "sparrow",
                 "--grid-step", "1", "--out", str(out)]) == 0
    head, rows = read_csv(out / "pseudospectrum.csv")
    assert head == "angle,d" and len(rows) == 179


def test_spectrum_csv(tmp_path, scenario):
    out = tmp_path / "s.csv"
    assert main(["spectrum", "--scenario", str(scenario), "--method", "music",
                 "--grid-step", "0.5", "--out", str(out)]) == 0
    head, rows = read_csv(out)
    assert head == "angle,value"
    arr = np.array(rows)
    assert abs(arr[np.argmin(arr[:, 1]), 0] - 70) < 1 or abs(arr[np.argmin(arr[:, 1]), 0] - 110) < 1


def test_coarray_report(capsys):
    assert main(["coarray", "--geometry", "nested:3,3", "--report"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["max_sources_coarray_music"] == 11
    assert main(["coarray", "--geometry", "ula:5"]) == 0
    assert "coarray MUSIC up to N=4" in capsys.readouterr().out


def test_bench_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": {"geometry": "ula:6", "thetas": [60.0, 100.0],
                                            "snr_db": 10.0},
                               "sweep": "snapshots", "values": [50], "methods": ["music"],
                               "trials": 3, "plot": False, "record_timing": False}))
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert capsys.readouterr().out.startswith("method,sweep,rmse_deg")
    assert (tmp_path / "o" / "experiment.csv").exists()


def test_bench_preset_values(tmp_path, capsys):
    assert main(["bench", "--preset", "fig6", "--trials", "2", "--values", "20",
                 "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "sparrow,20" in out and (tmp_path / "fig6.svg").exists()


def test_surface_command(tmp_path, capsys):
    assert main(["surface", "--grid-step", "2", "--out", str(tmp_path)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert len(info["argmin"]) == 2
    assert (tmp_path / "surface_surface.csv").exists()


def test_errors_exit_2(tmp_path, capsys):
    assert main(["estimate", "--method", "music"]) == 2
    assert main(["coarray", "--geometry", "bogus:1"]) == 2
    assert main(["simulate", "--scenario", str(tmp_path / "none.json"),
                 "--out", str(tmp_path / "x.npy")]) == 2
    assert "doalab: error" in capsys.readouterr().err


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "doalab.cli", "coarray", "--geometry",
                        "coprime:2,3"], capture_output=True, text=True)
    assert r.returncode == 0 and "unique lags" in r.stdout
