import json

import numpy as np
import pytest

from ktlab import NoiseSpec, ScalarField, SolverConfig, build_basis, evolve
from ktlab.errors import ChecksumError
from ktlab.persistence import (
    build_manifest,
    canonical_json,
    config_hash,
    load_trajectory,
    read_csv,
    save_trajectory,
    sha256_file,
    verify_manifest,
    write_csv,
    write_json_atomic,
)


class TestHashing:
    def test_canonical_ordering(self):
        assert canonical_json({"b": 1, "a": 2}) == canonical_json({"a": 2, "b": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})
        assert len(config_hash({"x": 0})) == 12

    def test_sha256_file(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"hello")
        assert sha256_file(p) == (
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        )


class TestCsv:
    def test_float_precision_round_trip(self, tmp_path):
        rows = [{"a": 0.1 + 0.2, "b": 1e-17, "c": "text", "d": 3, "e": None}]
        path = tmp_path / "t.csv"
        write_csv(path, rows)
        back = read_csv(path)
        assert float(back[0]["a"]) == rows[0]["a"]
        assert float(back[0]["b"]) == rows[0]["b"]
        assert back[0]["c"] == "text"
        assert back[0]["e"] == ""

    def test_union_of_columns(self, tmp_path):
        rows = [{"a": 1}, {"b": 2.5}]
        path = tmp_path / "u.csv"
        write_csv(path, rows)
        back = read_csv(path)
        assert set(back[0]) == {"a", "b"}


class TestTrajectoryPersistence:
    def test_round_trip(self, tmp_path, grid32):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=4))
        rho0 = ScalarField.harmonic(grid32, (1, 0))
        cfg = SolverConfig(epsilon=0.3, dt=2e-3, T=0.05, seed=9, record_every=5)
        traj = evolve(rho0, None, None, basis, cfg)
        save_trajectory(traj, tmp_path / "traj")
        back = load_trajectory(tmp_path / "traj")
        assert np.array_equal(back.snapshots, traj.snapshots)
        assert np.array_equal(back.coeff_log, traj.coeff_log)
        assert np.array_equal(back.times, traj.times)
        assert back.config == traj.config
        assert back.basis_manifest["Z_K"] == pytest.approx(basis.Z_K)

    def test_coefficient_log_layout_documented(self, tmp_path, grid32):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=2))
        cfg = SolverConfig(epsilon=0.2, dt=1e-2, T=0.05, seed=1, record_every=1)
        traj = evolve(ScalarField.harmonic(grid32, (1, 0)), None, None, basis, cfg)
        save_trajectory(traj, tmp_path / "t")
        meta = json.loads((tmp_path / "t" / "coeffs.json").read_text())
        assert meta["shape"] == [cfg.n_steps, basis.n_pairs, 2]
        assert "step" in meta["layout"]


class TestManifests:
    def test_verify_round_trip_and_tamper(self, tmp_path):
        (tmp_path / "data.bin").write_bytes(b"abc")
        manifest = build_manifest(tmp_path, "hash", {"master": 1}, "ok", "t0", "t1", "0.1.0")
        write_json_atomic(tmp_path / "manifest.json", manifest)
        verify_manifest(tmp_path)
        (tmp_path / "data.bin").write_bytes(b"abd")
        with pytest.raises(ChecksumError) as exc:
            verify_manifest(tmp_path)
        assert "data.bin" in str(exc.value.path)

    def test_missing_inventory_file(self, tmp_path):
        (tmp_path / "data.bin").write_bytes(b"abc")
        manifest = build_manifest(tmp_path, "hash", {}, "ok", "t0", "t1", "0.1.0")
        write_json_atomic(tmp_path / "manifest.json", manifest)
        (tmp_path / "data.bin").unlink()
        with pytest.raises(ChecksumError):
            verify_manifest(tmp_path)
