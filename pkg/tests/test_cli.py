import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from spatialci.cli import main
from spatialci.gp_sim import simulate_gp
from spatialci.spatial_core import write_observations
from spatialci.variogram import VariogramModel

MID = VariogramModel("matern", 1.0, 4.0, 2.5, 1.0)


def run(*argv):
    return subprocess.run([sys.executable, "-m", "spatialci.cli", *map(str, argv)],
                          capture_output=True, text=True)


@pytest.fixture
def obs_csv(tmp_path):
    xy = np.random.default_rng(0).uniform(0, 50, (60, 2))
    p = tmp_path / "obs.csv"
    write_observations(simulate_gp(xy, MID, 2.0, seed=1), p)
    return p


def test_weights_coincident_pair(tmp_path):
    (tmp_path / "o.csv").write_text("x_km,y_km,value\n1,1,0.3\n1,1,0.5\n")
    MID.save(tmp_path / "m.json")
    assert main(["weights", str(tmp_path / "o.csv"), str(tmp_path / "m.json"),
                 "--out", str(tmp_path / "w.csv"), "--diagnostics", str(tmp_path / "d.json")]) == 0
    rows = list(csv.DictReader((tmp_path / "w.csv").open()))
    assert [float(r["weight"]) for r in rows] == pytest.approx([0.5, 0.5], abs=1e-10)
    assert len(json.loads((tmp_path / "d.json").read_text())) == 2


def test_fit_variogram(tmp_path, obs_csv):
    assert main(["fit-variogram", str(obs_csv), "--model-out", str(tmp_path / "m.json"),
                 "--empirical-out", str(tmp_path / "e.csv"), "--seed", "1"]) == 0
    m = VariogramModel.load(tmp_path / "m.json")
    assert m.family == "matern"
    assert (tmp_path / "e.csv").read_text().startswith("bin_lo,bin_hi,lag,semivariance,pair_count")


def test_calibrate_zero_iterations_equals_mse(tmp_path, obs_csv):
    spec = tmp_path / "model.json"
    spec.write_text(json.dumps({"name": "constant_mean"}))
    thetas = []
    for i, cfg in enumerate([{"max_reweight_iterations": 0, "budget": 300},
                             {"cost": "mse", "budget": 300}]):
        (tmp_path / f"c{i}.json").write_text(json.dumps(cfg))
        out = tmp_path / f"r{i}.json"
        assert main(["calibrate", str(obs_csv), str(spec), "--config", str(tmp_path / f"c{i}.json"),
                     "--out", str(out), "--seed", "4"]) == 0
        thetas.append(json.loads(out.read_text())["theta"])
    assert thetas[0] == thetas[1]


def test_experiment_schema(tmp_path):
    r = run("experiment", "fig4_clustered", "--replicates", "2", "--seed", "1",
            "--summary", tmp_path / "s.json", "--replicates-out", tmp_path / "r.csv")
    assert r.returncode == 0, r.stderr
    d = json.loads((tmp_path / "s.json").read_text())
    assert set(d["estimators"]) == {"unweighted", "weighted", "spatial_ml"}
    assert not d["estimators"]["weighted"]["mean"]["relative"]


def test_simulate_writes_datasets(tmp_path):
    r = run("simulate", "fig3_random40", "--replicates", "3", "--out-dir", tmp_path / "sim")
    assert r.returncode == 0, r.stderr
    files = sorted(p.name for p in (tmp_path / "sim").iterdir())
    assert files == ["manifest.json", "replicate_0000.csv", "replicate_0001.csv", "replicate_0002.csv"]
    r2 = run("simulate", "fig3_random40", "--replicates", "3", "--out-dir", tmp_path / "sim2")
    assert r2.returncode == 0
    for f in files:
        assert (tmp_path / "sim" / f).read_bytes() == (tmp_path / "sim2" / f).read_bytes()


def test_errors_are_json(tmp_path):
    r = run("weights", tmp_path / "missing.csv", tmp_path / "m.json", "--out", tmp_path / "w.csv")
    assert r.returncode != 0
    assert json.loads(r.stderr.strip().splitlines()[-1])["error"] == "not_found"
    (tmp_path / "bad.json").write_text("{not json")
    (tmp_path / "o.csv").write_text("x_km,y_km,value\n0,0,1\n")
    r = run("weights", tmp_path / "o.csv", tmp_path / "bad.json", "--out", tmp_path / "w.csv")
    assert r.returncode != 0
    assert json.loads(r.stderr.strip().splitlines()[-1])["error"] == "invalid_input"


def test_unknown_flag_is_usage_error():
    r = run("weights", "--bogus")
    assert r.returncode == 2
    assert "usage" in r.stderr
    assert json.loads(r.stderr.strip().splitlines()[-1])["error"] == "usage"
