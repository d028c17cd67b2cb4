"""``ktl`` command line: run, export, validate, replay.

Exit codes: 0 success, 1 replay mismatch / generic failure, 2 config schema
violation, 3 numerical abort (manifest still written with the failure
record), 4 integrity (checksum) failure.
"""
from __future__ import annotations

import argparse
import datetime
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, expand_grid, parse_config, validate_config
from .diagnostics import dissipation_measure, energy_ledger
from .errors import BlowupError, ChecksumError, KtlabError, SchemaError, StabilityError
from .experiments import (
    Control,
    ControlSpec,
    DeviationEvent,
    PathFunctional,
    dissipation_ldp_check,
    ldp_tail_estimate,
    rate_function_eval,
    variational_laplace,
    zero_noise_study,
)
from .characteristics import renormalized_reference
from .experiments import frozen_reference, _record_times
from .fields import shell_spectrum
from .persistence import (
    build_manifest,
    config_hash,
    save_trajectory,
    sha256_file,
    verify_manifest,
    write_csv,
    write_json_atomic,
)

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml
from .solver import evolve


def _threads_default(threads: int | None) -> int:
    if threads is not None:
        return threads
    env = os.environ.get("KTL_THREADS")
    return int(env) if env else 1


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# experiment dispatch
# ---------------------------------------------------------------------------

def _reference_for(rc: RunConfig, rho0, drift, cfg) -> "object":
    times = _record_times(cfg)
    if drift is None:
        return frozen_reference(rho0, times, cfg)
    ref, _ = renormalized_reference(rho0, drift, mollify_schedule=(0.0,),
                                    ode_dt=cfg.dt, record_times=times)
    return ref


def _control_from_table(spec: ControlSpec, table: dict) -> Control:
    theta = np.asarray(table.get("theta", []), dtype=float)
    return Control.from_flat(spec, theta)


def run_experiment(rc: RunConfig, out_root: Path, threads: int = 1) -> tuple[int, Path]:
    """Execute the configured experiment; returns (exit_code, run_dir)."""
    cfg_hash = config_hash({k: v for k, v in rc.raw.items() if k != "output"})
    run_dir = Path(out_root) / cfg_hash
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "fields").mkdir(exist_ok=True)
    started = _now()
    seeds = {"master": rc.seed}
    status, failure, code = "ok", None, 0

    try:
        report = _dispatch(rc, run_dir, cfg_hash, threads)
        write_json_atomic(run_dir / "report.json", report)
        write_csv(run_dir / "report.csv", report.get("rows", []))
        for name, rows in report.get("extra_tables", {}).items():
            write_csv(run_dir / f"{name}.csv", rows)
    except (BlowupError, StabilityError, FloatingPointError) as exc:
        status, code = "failed", 3
        failure = {"type": type(exc).__name__, "message": str(exc)}
    except SchemaError as exc:
        status, code = "failed", 2
        failure = {"type": "SchemaError", "message": str(exc)}

    manifest = build_manifest(
        run_dir, cfg_hash, seeds, status, started, _now(), __version__, failure
    )
    write_json_atomic(run_dir / "manifest.json", manifest)
    return code, run_dir


def _dispatch(rc: RunConfig, run_dir: Path, cfg_hash: str, threads: int) -> dict:
    grid = rc.grid
    drift = rc.build_drift()
    basis = rc.build_basis()
    rho0 = rc.build_initial()
    cfg = rc.solver
    exp = rc.experiment
    kind = exp.get("kind", "evolve")
    base = {"config_hash": cfg_hash, "kind": kind, "seed": rc.seed,
            "code_version": __version__}

    if kind == "evolve":
        traj = evolve(rho0, drift, None, basis if cfg.epsilon > 0 else None, cfg)
        save_trajectory(traj, run_dir / "fields")
        ledger = energy_ledger(traj, p_list=tuple(exp.get("p_list", (2, 4))),
                               s_list=tuple(exp.get("s_list", ())))
        rows = ledger.to_rows(cfg_hash)
        shells, energy = shell_spectrum(traj.final_field())
        spectrum_rows = [
            {"config_hash": cfg_hash, "kmag": int(s), "energy": float(e)}
            for s, e in zip(shells, energy)
        ]
        extra = {"spectrum": spectrum_rows}
        if cfg.epsilon > 0 and cfg.scheme == "ito_euler" and traj.coeff_log is not None and grid.d == 2:
            est = dissipation_measure(traj, basis, drift,
                                      spatial_blocks=exp.get("spatial_blocks", 8),
                                      time_bins=exp.get("time_bins", 16))
            extra["dissipation_map"] = est.to_rows(cfg_hash)
            base["dissipation_total"] = est.total
            base["dissipation_identity_residual"] = est.identity_residual
        return {**base, "rows": rows, "extra_tables": extra,
                "diagnostics": traj.diagnostics, "times": [float(t) for t in traj.times]}

    if kind == "zero_noise":
        report = zero_noise_study(
            rho0, drift, basis, exp["eps_grid"], exp.get("M", 8),
            exp.get("metric", "d_scriptE"), cfg,
        )
        rows = [{"config_hash": cfg_hash, **r} for r in report.rows]
        return {**base, "rows": rows, "metric": report.metric,
                "monotone": report.monotone,
                "final_over_initial": report.final_over_initial}

    if kind == "ldp_tail":
        ref = _reference_for(rc, rho0, drift, cfg)
        event = DeviationEvent(ref, exp["threshold"], exp.get("metric", "h-1"))
        tilt = None
        if "tilt" in exp:
            spec = ControlSpec(basis, cfg.T, exp.get("budget", 8.0),
                               profiles=tuple(exp["tilt"].get("profiles", ("constant",))))
            tilt = _control_from_table(spec, exp["tilt"])
        est = ldp_tail_estimate(rho0, drift, basis, cfg, event,
                                exp["eps_grid"], exp.get("M", 64), tilt=tilt)
        rows = [{"config_hash": cfg_hash, **_flatten_flags(r)} for r in est.rows]
        return {**base, "rows": rows, "estimator": est.estimator, "delta": est.delta}

    if kind == "rate_fn":
        spec = ControlSpec(basis, cfg.T, exp.get("budget", 8.0),
                           profiles=tuple(exp.get("profiles", ("constant",))))
        gbar = _control_from_table(spec, exp.get("target_control", {"theta": [0.0] * spec.n_theta}))
        times = _record_times(cfg)
        target, _ = renormalized_reference(rho0, drift, g_eval=gbar if np.any(gbar.theta) else None,
                                           mollify_schedule=(0.0,), ode_dt=cfg.dt,
                                           record_times=times)
        rep = rate_function_eval(target, rho0, drift, spec,
                                 maxiter=exp.get("maxiter", 300),
                                 ode_dt=exp.get("ode_dt", cfg.dt))
        row = {
            "config_hash": cfg_hash, "value": rep.value, "residual": rep.residual,
            "target_cost": 0.5 * gbar.cm_cost_squared(),
            "converged": rep.converged, "n_evaluations": rep.n_evaluations,
            "flags": ";".join(rep.flags),
        }
        return {**base, "rows": [row], "theta_star": rep.control.theta.tolist()}

    if kind == "variational":
        spec = ControlSpec(basis, cfg.T, exp.get("budget", 8.0),
                           profiles=tuple(exp.get("profiles", ("constant",))))
        ref = _reference_for(rc, rho0, drift, cfg)
        if exp.get("functional", "capped_distance") == "constant":
            h = PathFunctional("constant", value=exp.get("cap", 0.5))
        else:
            h = PathFunctional("capped_distance", value=exp.get("cap", 1.0), ref=ref)
        candidates = [
            _control_from_table(spec, {"theta": th}) for th in exp.get("candidates", [])
        ]
        rep = variational_laplace(h, rho0, drift, basis, cfg, spec,
                                  exp.get("M", 64), candidates=candidates)
        row = {"config_hash": cfg_hash, "lhs": rep.lhs, "lhs_se": rep.lhs_se,
               "rhs": rep.rhs, "rhs_se": rep.rhs_se, "n_eff": rep.n_effective,
               "flags": ";".join(rep.flags)}
        return {**base, "rows": [row], "per_candidate": rep.per_candidate}

    if kind == "dissipation_ldp":
        from .fields import lp_norm

        delta = exp.get("delta_frac", 0.05) * lp_norm(rho0, 2) ** 2
        est = dissipation_ldp_check(rho0, drift, basis, cfg, exp["eps_grid"],
                                    exp.get("M", 64), delta)
        rows = [{"config_hash": cfg_hash, **_flatten_flags(r)} for r in est.rows]
        return {**base, "rows": rows, "delta": delta}

    raise SchemaError(f"unknown experiment kind {kind!r}")


def _flatten_flags(row: dict) -> dict:
    out = dict(row)
    out["flags"] = ";".join(row.get("flags", []))
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        parse_config(args.config)
    except SchemaError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    print("ok")
    return 0


def _apply_overrides(rc_raw: dict, args) -> dict:
    # --out is a pure destination override and never enters the config hash
    raw = dict(rc_raw)
    if args.seed is not None:
        raw["seed"] = args.seed
    return raw


def cmd_run(args) -> int:
    try:
        base_raw = _toml.loads(Path(args.config).read_text())
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raw_list = [base_raw]
    if args.expand:
        assignments = {}
        for spec in args.expand:
            key, _, values = spec.partition("=")
            if not values:
                print(f"error: bad --expand {spec!r} (want key=v1,v2,...)", file=sys.stderr)
                return 2
            assignments[key.strip()] = [_parse_value(v) for v in values.split(",")]
        raw_list = expand_grid(base_raw, assignments)

    threads = _threads_default(args.threads)
    worst = 0
    for raw in raw_list:
        raw = _apply_overrides(raw, args)
        try:
            rc = validate_config(raw)
        except SchemaError as exc:
            print(f"schema error: {exc}", file=sys.stderr)
            return 2
        out_root = Path(args.out or rc.output_dir)
        out_root.mkdir(parents=True, exist_ok=True)
        code, run_dir = run_experiment(rc, out_root, threads=threads)
        # keep a verbatim copy of the config for replay
        cfg_copy = run_dir / "config.toml"
        if Path(args.config).exists() and len(raw_list) == 1 and args.seed is None:
            shutil.copyfile(args.config, cfg_copy)
        else:
            cfg_copy.write_text(_dump_toml(raw))
        manifest = json.loads((run_dir / "manifest.json").read_text())
        manifest["files"]["config.toml"] = sha256_file(cfg_copy)
        write_json_atomic(run_dir / "manifest.json", manifest)
        print(f"{run_dir} [{manifest['status']}]")
        worst = max(worst, code)
    return worst


def _parse_value(text: str):
    text = text.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text in ("true", "false"):
        return text == "true"
    return text


def _dump_toml(raw: dict) -> str:
    """Minimal TOML emitter for the flat table-of-tables configs used here."""
    lines = []
    scalars = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    for k, v in scalars.items():
        lines.append(f"{k} = {_toml_value(v)}")
    for section, tbl in raw.items():
        if not isinstance(tbl, dict):
            continue
        lines.append(f"[{section}]")
        for k, v in tbl.items():
            if isinstance(v, dict):
                continue
            lines.append(f"{k} = {_toml_value(v)}")
        for k, v in tbl.items():
            if isinstance(v, dict):
                lines.append(f"[{section}.{k}]")
                for kk, vv in v.items():
                    lines.append(f"{kk} = {_toml_value(vv)}")
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_export(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        verify_manifest(run_dir)
    except ChecksumError as exc:
        print(f"integrity failure at {exc.path}: {exc}", file=sys.stderr)
        return 4
    report = json.loads((run_dir / "report.json").read_text())
    if args.format == "json":
        write_json_atomic(run_dir / "report.json", report)
    else:
        write_csv(run_dir / "report.csv", report.get("rows", []))
    print(f"exported {args.format} for {run_dir}")
    return 0


def cmd_replay(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        manifest = verify_manifest(run_dir)
    except ChecksumError as exc:
        print(f"integrity failure at {exc.path}: {exc}", file=sys.stderr)
        return 4
    cfg_path = run_dir / "config.toml"
    if not cfg_path.exists():
        print("no config.toml in run directory", file=sys.stderr)
        return 2
    rc = parse_config(cfg_path)
    with tempfile.TemporaryDirectory(prefix="ktl-replay-") as tmp:
        out_root = Path(args.out) if args.out else Path(tmp)
        code, new_dir = run_experiment(rc, out_root, threads=_threads_default(args.threads))
        if code != 0:
            print(f"replay run failed with code {code}", file=sys.stderr)
            return code
        new_manifest = json.loads((new_dir / "manifest.json").read_text())
        old_files = {k: v for k, v in manifest["files"].items() if k != "config.toml"}
        new_files = {k: v for k, v in new_manifest["files"].items() if k != "config.toml"}
        if old_files == new_files:
            print("replay matches: all checksums identical")
            return 0
        diff = sorted(set(old_files) ^ set(new_files)) + [
            k for k in old_files if k in new_files and old_files[k] != new_files[k]
        ]
        print(f"replay differs in {len(diff)} file(s): {diff[:8]}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ktl", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ktl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--expand", action="append", default=[],
                       help="key=v1,v2 parameter grid; repeatable")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate)

    p_exp = sub.add_parser("export", help="re-emit reports from a run directory")
    p_exp.add_argument("run_dir")
    p_exp.add_argument("--format", choices=("csv", "json"), default="csv")
    p_exp.set_defaults(func=cmd_export)

    p_rep = sub.add_parser("replay", help="re-run a config and compare checksums")
    p_rep.add_argument("run_dir")
    p_rep.add_argument("--out", default=None)
    p_rep.add_argument("--threads", type=int, default=None)
    p_rep.set_defaults(func=cmd_replay)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KtlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
