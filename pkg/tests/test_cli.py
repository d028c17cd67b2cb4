import json
from pathlib import Path

import numpy as np

from ktlab.cli import main
from ktlab.persistence import read_csv

BASE_CONFIG = """
seed = 42

[grid]
d = 2
N = 32

[noise]
alpha = 0.25
K = 4

[drift]
kind = "cellular"

[initial]
kind = "harmonic"
modes = [[1, 0], [0, 1]]
amplitudes = [1.0, 0.5]

[solver]
epsilon = 0.0
dt = 0.01
T = 0.1
scheme = "strat_midpoint"
record_every = 5

[experiment]
kind = "evolve"

[output]
dir = "out"
"""


def _write(tmp_path, text, name="config.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _run_dir(root: Path) -> Path:
    dirs = [p for p in root.iterdir() if p.is_dir()]
    assert len(dirs) == 1
    return dirs[0]


class TestValidate:
    def test_good_config(self, tmp_path):
        cfg = _write(tmp_path, BASE_CONFIG)
        assert main(["validate", "--config", cfg]) == 0

    def test_schema_violation_exit_2(self, tmp_path):
        bad = BASE_CONFIG.replace("alpha = 0.25", "alpha = 0.7")
        cfg = _write(tmp_path, bad)
        assert main(["validate", "--config", cfg]) == 2

    def test_multiple_errors_reported(self, tmp_path, capsys):
        bad = BASE_CONFIG.replace("alpha = 0.25", "alpha = 0.7").replace("N = 32", "N = 7")
        cfg = _write(tmp_path, bad)
        assert main(["validate", "--config", cfg]) == 2
        err = capsys.readouterr().err
        assert "alpha" in err and "N" in err


class TestRun:
    def test_minimal_evolve_constant_fields(self, tmp_path):
        # eps=0 with no drift: trajectory of constant fields, exit 0
        cfg_text = BASE_CONFIG.replace('kind = "cellular"', 'kind = "zero"')
        cfg = _write(tmp_path, cfg_text)
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        run_dir = _run_dir(out)
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        first = np.fromfile(run_dir / "fields" / "snap_00000.bin")
        last = sorted((run_dir / "fields").glob("snap_*.bin"))[-1]
        assert np.allclose(np.fromfile(last), first, atol=1e-13)

    def test_same_config_seed_identical_checksums(self, tmp_path):
        cfg = _write(tmp_path, BASE_CONFIG)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["run", "--config", cfg, "--out", str(out1)]) == 0
        assert main(["run", "--config", cfg, "--out", str(out2)]) == 0
        m1 = json.loads((_run_dir(out1) / "manifest.json").read_text())
        m2 = json.loads((_run_dir(out2) / "manifest.json").read_text())
        assert m1["files"] == m2["files"]
        assert m1["config_hash"] == m2["config_hash"]

    def test_report_rows_carry_config_hash(self, tmp_path):
        cfg = _write(tmp_path, BASE_CONFIG)
        out = tmp_path / "out"
        main(["run", "--config", cfg, "--out", str(out)])
        run_dir = _run_dir(out)
        manifest = json.loads((run_dir / "manifest.json").read_text())
        rows = read_csv(run_dir / "report.csv")
        assert rows and all(r["config_hash"] == manifest["config_hash"] for r in rows)

    def test_no_writes_outside_output_dir(self, tmp_path, monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        cfg = _write(tmp_path, BASE_CONFIG)
        out = tmp_path / "sandbox_out"
        main(["run", "--config", cfg, "--out", str(out)])
        assert list(workdir.iterdir()) == []

    def test_expand_grid(self, tmp_path):
        cfg = _write(tmp_path, BASE_CONFIG)
        out = tmp_path / "out"
        rc = main(["run", "--config", cfg, "--out", str(out),
                   "--expand", "solver.dt=0.01,0.005"])
        assert rc == 0
        assert len([p for p in out.iterdir() if p.is_dir()]) == 2

    def test_numerical_abort_exit_3_with_manifest(self, tmp_path):
        # a violent constant drift trips the Courant guard -> exit 3
        bad = BASE_CONFIG.replace('kind = "cellular"', 'kind = "constant"\nvelocity = [500.0, 0.0]')
        cfg = _write(tmp_path, bad)
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 3
        manifest = json.loads((_run_dir(out) / "manifest.json").read_text())
        assert manifest["status"] == "failed"
        assert "failure" in manifest and manifest["failure"]["type"] == "StabilityError"

    def test_zero_noise_smoke(self, tmp_path):
        text = BASE_CONFIG.replace(
            "[experiment]\nkind = \"evolve\"",
            "[experiment]\nkind = \"zero_noise\"\neps_grid = [0.4, 0.2, 0.1]\nM = 8\nmetric = \"d_scriptE\"",
        ).replace("epsilon = 0.0", "epsilon = 0.4")
        cfg = _write(tmp_path, text)
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        rows = read_csv(_run_dir(out) / "report.csv")
        assert len(rows) == 3
        assert {"epsilon", "median", "q25", "q75", "config_hash"} <= set(rows[0])


class TestExportAndReplay:
    def _fresh_run(self, tmp_path):
        cfg = _write(tmp_path, BASE_CONFIG)
        out = tmp_path / "out"
        main(["run", "--config", cfg, "--out", str(out)])
        return _run_dir(out)

    def test_export_idempotent(self, tmp_path):
        run_dir = self._fresh_run(tmp_path)
        before = (run_dir / "report.csv").read_bytes()
        assert main(["export", str(run_dir), "--format", "csv"]) == 0
        assert (run_dir / "report.csv").read_bytes() == before

    def test_round_trip_preserves_precision(self, tmp_path):
        run_dir = self._fresh_run(tmp_path)
        report = json.loads((run_dir / "report.json").read_text())
        rows_csv = read_csv(run_dir / "report.csv")
        for orig, parsed in zip(report["rows"], rows_csv):
            assert float(parsed["value"]) == orig["value"]
            assert float(parsed["time"]) == orig["time"]

    def test_tampered_file_exit_4_names_path(self, tmp_path, capsys):
        run_dir = self._fresh_run(tmp_path)
        victim = run_dir / "fields" / "snap_00000.bin"
        data = bytearray(victim.read_bytes())
        data[0] ^= 0xFF
        victim.write_bytes(bytes(data))
        assert main(["export", str(run_dir), "--format", "csv"]) == 4
        assert "snap_00000.bin" in capsys.readouterr().err

    def test_replay_matches(self, tmp_path):
        run_dir = self._fresh_run(tmp_path)
        assert main(["replay", str(run_dir)]) == 0
