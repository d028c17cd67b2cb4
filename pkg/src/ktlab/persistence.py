"""Run persistence: config hashing, checksums, manifests, reports,
trajectory snapshots.

Layout of a run directory:

    out/<confighash>/
        manifest.json          inventory with sha256 checksums, seeds, status
        config.toml            verbatim copy of the input config
        report.json            full nested report
        report.csv             flat per-row table (config_hash on every row)
        fields/*.bin + *.json  field snapshots

CSV floats are written with ``repr`` so a json -> csv -> json round trip
preserves every numeric field exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ChecksumError
from .fields import Grid
from .solver import SolverConfig, Trajectory


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:12]


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json_atomic(path: Path, obj) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(str(v) for v in value)
    return str(value)


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    columns: set = set()
    for row in rows:
        columns.update(row)
    ordered = sorted(columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ordered)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in ordered])


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [dict(r) for r in reader]


# ---------------------------------------------------------------------------
# trajectory persistence
# ---------------------------------------------------------------------------

def save_trajectory(traj: Trajectory, directory: Path, stem: str = "snap") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for i in range(traj.n_snapshots):
        prefix = directory / f"{stem}_{i:05d}"
        traj.snapshots[i].astype("<f8").tofile(prefix.with_suffix(".bin"))
        header = {
            "d": traj.grid.d, "N": traj.grid.N, "L": traj.grid.L,
            "time": float(traj.times[i]), "name": f"{stem}[{i}]",
            "dealias_fraction": traj.grid.dealias_fraction, "components": 1,
        }
        prefix.with_suffix(".json").write_text(json.dumps(header, indent=1, sort_keys=True))
        written.extend([prefix.with_suffix(".bin"), prefix.with_suffix(".json")])
    if traj.coeff_log is not None:
        cpath = directory / "coeffs.bin"
        traj.coeff_log.astype("<f8").tofile(cpath)
        cmeta = directory / "coeffs.json"
        cmeta.write_text(json.dumps({
            "shape": list(traj.coeff_log.shape),
            "layout": "step x mode-pair x (cos,sin)",
            "dtype": "<f8",
        }, indent=1, sort_keys=True))
        written.extend([cpath, cmeta])
    meta = {
        "origin": traj.origin,
        "times": [float(t) for t in traj.times],
        "path_index": traj.path_index,
        "config": {k: getattr(traj.config, k) for k in traj.config.__dataclass_fields__},
        "drift_desc": _jsonable(traj.drift_desc),
        "basis_manifest": traj.basis_manifest,
        "diagnostics": _jsonable(traj.diagnostics),
        "n_snapshots": traj.n_snapshots,
        "stem": stem,
    }
    mpath = directory / "trajectory.json"
    write_json_atomic(mpath, meta)
    written.append(mpath)
    return written


def load_trajectory(directory: Path) -> Trajectory:
    directory = Path(directory)
    meta = json.loads((directory / "trajectory.json").read_text())
    cfg = SolverConfig(**meta["config"])
    stem = meta.get("stem", "snap")
    first = json.loads((directory / f"{stem}_00000.json").read_text())
    grid = Grid(d=first["d"], N=first["N"], L=first["L"],
                dealias_fraction=first.get("dealias_fraction", 2.0 / 3.0))
    n = meta["n_snapshots"]
    snaps = np.zeros((n, *grid.shape))
    for i in range(n):
        raw = np.fromfile(directory / f"{stem}_{i:05d}.bin", dtype="<f8")
        snaps[i] = raw.reshape(grid.shape)
    coeff_log = None
    if (directory / "coeffs.bin").exists():
        cmeta = json.loads((directory / "coeffs.json").read_text())
        coeff_log = np.fromfile(directory / "coeffs.bin", dtype="<f8").reshape(cmeta["shape"])
    return Trajectory(
        grid=grid, config=cfg, times=np.asarray(meta["times"]), snapshots=snaps,
        path_index=meta.get("path_index", 0), coeff_log=coeff_log,
        basis_manifest=meta.get("basis_manifest"), drift_desc=meta.get("drift_desc", {}),
        origin=meta.get("origin", "spectral"), diagnostics=meta.get("diagnostics", {}),
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return str(obj)


# ---------------------------------------------------------------------------
# run manifests
# ---------------------------------------------------------------------------

def build_manifest(run_dir: Path, cfg_hash: str, seeds: dict, status: str,
                   started: str, finished: str, code_version: str,
                   failure: dict | None = None) -> dict:
    run_dir = Path(run_dir)
    files = {}
    for path in sorted(run_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files[str(path.relative_to(run_dir))] = sha256_file(path)
    manifest = {
        "config_hash": cfg_hash,
        "code_version": code_version,
        "started": started,
        "finished": finished,
        "seeds": seeds,
        "status": status,
        "files": files,
    }
    if failure is not None:
        manifest["failure"] = failure
    return manifest


def verify_manifest(run_dir: Path) -> dict:
    """Re-hash the inventory; raises ChecksumError naming the first bad path."""
    run_dir = Path(run_dir)
    mpath = run_dir / "manifest.json"
    if not mpath.exists():
        raise ChecksumError("manifest.json missing", path=str(mpath))
    manifest = json.loads(mpath.read_text())
    for rel, digest in manifest.get("files", {}).items():
        p = run_dir / rel
        if not p.exists():
            raise ChecksumError(f"inventory file missing: {rel}", path=str(p))
        actual = sha256_file(p)
        if actual != digest:
            raise ChecksumError(
                f"checksum mismatch for {rel}: manifest {digest[:12]}.., file {actual[:12]}..",
                path=str(p),
            )
    return manifest
