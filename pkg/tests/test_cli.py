import csv
import json

import numpy as np
import pytest

from adiabatic_lumps.cli import main
from adiabatic_lumps.config import ConfigError, ExperimentConfig, default_config


def run(tmp_path, command, config=None, *extra):
    args = [command, "--output", str(tmp_path / "out")]
    if config is not None:
        tmp_path.mkdir(parents=True, exist_ok=True)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config) if isinstance(config, dict) else config)
        args += ["--config", str(path)]
    return main(args + list(extra))


def read_json(path):
    return json.loads(path.read_text())


SMALL = {"lattice": {"grid_n": 32}}


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = default_config()
        assert cfg.q0.dim == 8 and cfg.eps_ladder == [0.2, 0.1, 0.05]
        assert ExperimentConfig.from_dict(json.loads(cfg.canonical_json())).hash == cfg.hash

    def test_override(self):
        cfg = default_config().override(**{"lattice.grid_n": 32, "seed": 3})
        assert cfg.lattice.grid_n == 32 and cfg["seed"] == 3
        assert cfg.hash != default_config().hash

    @pytest.mark.parametrize("doc", [
        {"lattice": {"grid_n": 6}},
        {"eps_ladder": [0.1, 0.2]},
        {"eps_ladder": [1.5]},
        {"tau_star": 0},
        {"moduli": {"q1": [1, 2, 3]}},
        {"unknown": 1},
        {"moduli": {"q0": {"lambda": 1, "a": [[0, 0], [0.5, 0.5]], "b": [[0.2, 0.2], [0.9, 0.9]]}}},
    ])
    def test_rejections(self, doc):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(doc)


class TestExitCodes:
    def test_validate_default(self, tmp_path, capsys):
        assert run(tmp_path, "validate") == 0
        line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert line["schema"] == 1 and line["status"] == "ok"
        report = read_json(tmp_path / "out" / "validate.json")
        assert report["passed"] and set(report["suites"]) == {
            "admissibility", "sigma_oracle", "harmonic_energy", "kernel_dimensions",
            "self_adjointness", "christoffel", "static_persistence"}
        manifest = read_json(tmp_path / "out" / "manifest.json")
        assert manifest["schema"] == 1 and manifest["command"] == "validate"
        assert manifest["config_hash"] == line["config_hash"]
        assert "validate.json" in manifest["files"]

    def test_coincident_zero_and_pole(self, tmp_path):
        cfg = {"moduli": {"q0": {"lambda": [1, 0], "a": [[0.1, 0.1], [0.55, 0.6]], "b": [[0.1, 0.1]]}}}
        assert run(tmp_path, "validate", cfg) == 4
        report = read_json(tmp_path / "out" / "validate.json")
        assert not report["suites"]["admissibility"]["passed"]

    def test_grid_too_small(self, tmp_path):
        assert run(tmp_path, "validate", None, "--grid-n", "6") == 2

    def test_malformed_config(self, tmp_path):
        assert run(tmp_path, "metric", "{not json") == 2
        assert run(tmp_path, "metric", {"lattice": {"omega2": [1, 0]}}) == 2

    def test_chart_exit_is_a_numerical_failure(self, tmp_path):
        cfg = {"lattice": {"grid_n": 16},
               "moduli": {"q0": {"lambda": [1, 0], "a": [[0.1, 0.1], [0.55, 0.6]], "b": [[0.3, 0.1]]},
                          "q1": [0, 0, 4, 0, 0, 0, 0, 0]},
               "geodesic": {"tau_end": 0.2}, "dtau_geodesic": 0.002}
        assert run(tmp_path, "geodesic", cfg) == 3
        assert read_json(tmp_path / "out" / "geodesic.json")["status"] == "chart_exit"


class TestCommands:
    def test_metric(self, tmp_path):
        assert run(tmp_path, "metric", SMALL) == 0
        rows = list(csv.reader(open(tmp_path / "out" / "metric.csv")))
        gamma = np.array([[float(x) for x in r[:-1]] for r in rows[1:]])
        assert np.array_equal(gamma, gamma.T)
        assert np.linalg.eigvalsh(gamma).min() > 0
        assert np.load(tmp_path / "out" / "christoffel.npy").shape == (8, 8, 8)

    def test_geodesic_at_rest(self, tmp_path):
        cfg = dict(SMALL, moduli={"q1": [0] * 8}, geodesic={"tau_end": 0.05}, dtau_geodesic=0.01)
        assert run(tmp_path, "geodesic", cfg) == 0
        rows = list(csv.DictReader(open(tmp_path / "out" / "geodesic.csv")))
        assert len(rows) == 6
        assert all(r["q_2"] == rows[0]["q_2"] for r in rows)
        assert {r["config_hash"] for r in rows} == {read_json(tmp_path / "out" / "manifest.json")["config_hash"]}

    def test_spectrum(self, tmp_path):
        assert run(tmp_path, "spectrum") == 0
        spectra = read_json(tmp_path / "out" / "spectrum.json")["spectra"]
        assert [s["kernel_dim"] for s in spectra] == [8, 9]
        assert len(spectra[1]["eigenvalues"]) == 16

    def test_evolve_is_deterministic(self, tmp_path):
        cfg = dict(SMALL, evolve={"t_end": 0.2, "sample_every": 4})
        assert run(tmp_path / "a", "evolve", cfg, "--eps", "0.2") == 0
        assert run(tmp_path / "b", "evolve", cfg, "--eps", "0.2") == 0
        a = (tmp_path / "a" / "out" / "evolve.csv").read_bytes()
        b = (tmp_path / "b" / "out" / "evolve.csv").read_bytes()
        assert a == b
        header = a.decode().splitlines()[0].split(",")
        assert header == ["t", "T", "E", "total", "degree_raw", "unitnorm_defect", "config_hash"]
        summary = read_json(tmp_path / "a" / "out" / "evolve.json")
        assert summary["degree"] == [2] and summary["energy_drift"] < 1e-6

    def test_adiabatic_static(self, tmp_path):
        cfg = dict(SMALL, moduli={"q1": [0] * 8}, tau_star=0.1, samples=5, dtau_geodesic=0.025)
        assert run(tmp_path, "adiabatic", cfg, "--eps", "0.2", "0.1") == 0
        report = read_json(tmp_path / "out" / "adiabatic.json")
        assert report["schema"] == 1
        for row in report["rows"]:
            assert row["err_c0"] < 1e-5 and row["err_c1"] < 1e-5 and row["status"] == "ok"
        for name in ("adiabatic.csv", "adiabatic.svg", "adiabatic.gp", "adiabatic.dat",
                     "decomposition_eps_0.2.csv", "decomposition_eps_0.1.csv"):
            assert (tmp_path / "out" / name).exists()


def test_manifest_lists_overwritten_files(tmp_path):
    assert run(tmp_path, "metric", SMALL) == 0
    assert run(tmp_path, "metric", SMALL) == 0
    manifest = read_json(tmp_path / "out" / "manifest.json")
    assert {"metric.csv", "christoffel.npy", "manifest.json"} <= set(manifest["files"])
