"""Run configuration: one TOML document describes one experiment.

Every numeric field is range-checked against the module preconditions
before any compute starts; violations raise SchemaError listing all
offending fields at once.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .drifts import DriftSpec, synthesize_drift
from .errors import SchemaError
from .fields import Grid, ScalarField, load_scalar
from .noise import NoiseSpec, build_basis
from .solver import SolverConfig

EXPERIMENT_KINDS = ("evolve", "zero_noise", "ldp_tail", "rate_fn", "variational", "dissipation_ldp")


@dataclass
class RunConfig:
    raw: dict
    grid: Grid
    noise_spec: NoiseSpec | None
    drift_spec: DriftSpec
    solver: SolverConfig
    initial: dict
    experiment: dict
    output_dir: str
    seed: int

    def build_drift(self):
        if self.drift_spec.kind == "zero":
            return None
        return synthesize_drift(self.drift_spec, self.grid)

    def build_basis(self):
        if self.noise_spec is None:
            return None
        return build_basis(self.noise_spec)

    def build_initial(self) -> ScalarField:
        kind = self.initial.get("kind", "harmonic")
        if kind == "harmonic":
            modes = self.initial.get("modes", [[1] + [0] * (self.grid.d - 1)])
            amps = self.initial.get("amplitudes", [1.0] * len(modes))
            phases = self.initial.get("phases", [0.0] * len(modes))
            f = ScalarField.zero(self.grid)
            for k, a, ph in zip(modes, amps, phases):
                f = f + ScalarField.harmonic(self.grid, k, a, ph)
            return f
        if kind == "file":
            f, _ = load_scalar(self.initial["path"])
            if f.grid != self.grid:
                raise SchemaError("initial file grid does not match [grid]")
            return f
        raise SchemaError(f"unknown initial kind {kind!r}")


def _check(errors: list, cond: bool, message: str):
    if not cond:
        errors.append(message)


def parse_config(path: str | Path) -> RunConfig:
    raw = tomllib.loads(Path(path).read_text())
    return validate_config(raw)


def validate_config(raw: dict) -> RunConfig:
    errors: list[str] = []

    grid_tbl = raw.get("grid", {})
    d = grid_tbl.get("d", 2)
    N = grid_tbl.get("N", 64)
    L = grid_tbl.get("L", 2.0 * np.pi)
    frac = grid_tbl.get("dealias_fraction", 2.0 / 3.0)
    _check(errors, d in (1, 2, 3), f"grid.d must be 1, 2 or 3 (got {d})")
    _check(errors, isinstance(N, int) and N >= 8 and N % 2 == 0, f"grid.N must be even >= 8 (got {N})")
    _check(errors, 0 < frac <= 1, f"grid.dealias_fraction must lie in (0,1] (got {frac})")
    _check(errors, L > 0, f"grid.L must be positive (got {L})")

    noise_tbl = raw.get("noise", {})
    alpha = noise_tbl.get("alpha", 0.25)
    K = noise_tbl.get("K", 8)
    _check(errors, 0 < alpha < 0.5, f"noise.alpha must lie in (0, 1/2) (got {alpha})")
    _check(errors, isinstance(K, int) and K >= 1, f"noise.K must be an integer >= 1 (got {K})")
    if not errors:
        _check(errors, K <= N // 2 - 1, f"noise.K={K} exceeds the grid lattice (N/2-1={N//2-1})")

    drift_tbl = raw.get("drift", {"kind": "zero"})
    drift_kind = drift_tbl.get("kind", "zero")

    solver_tbl = raw.get("solver", {})
    eps = solver_tbl.get("epsilon", 0.3)
    kappa = solver_tbl.get("kappa", 0.0)
    dt = solver_tbl.get("dt", 1e-3)
    T = solver_tbl.get("T", 1.0)
    scheme = solver_tbl.get("scheme", "strat_midpoint")
    record_every = solver_tbl.get("record_every", 100)
    _check(errors, 0 <= eps <= 1, f"solver.epsilon must lie in [0,1] (got {eps})")
    _check(errors, 0 <= kappa < 1, f"solver.kappa must lie in [0,1) (got {kappa})")
    _check(errors, dt > 0, f"solver.dt must be positive (got {dt})")
    _check(errors, T > 0, f"solver.T must be positive (got {T})")
    _check(errors, scheme in ("ito_euler", "strat_midpoint", "semi_lagrangian"),
           f"solver.scheme unknown (got {scheme!r})")
    _check(errors, isinstance(record_every, int) and record_every >= 1,
           f"solver.record_every must be an integer >= 1 (got {record_every})")
    if dt > 0 and T > 0:
        n = round(T / dt)
        _check(errors, abs(n * dt - T) <= 1e-9 * max(1.0, T),
               f"solver.T={T} must be an integer multiple of dt={dt}")

    exp_tbl = raw.get("experiment", {"kind": "evolve"})
    kind = exp_tbl.get("kind", "evolve")
    _check(errors, kind in EXPERIMENT_KINDS, f"experiment.kind unknown (got {kind!r})")
    if kind in ("zero_noise", "ldp_tail", "dissipation_ldp"):
        eg = exp_tbl.get("eps_grid", [])
        _check(errors, isinstance(eg, list) and len(eg) >= 1, f"experiment.eps_grid required for {kind}")
        _check(errors, all(0 < e <= 1 for e in eg), "experiment.eps_grid entries must lie in (0,1]")
        _check(errors, all(b < a for a, b in zip(eg, eg[1:])), "experiment.eps_grid must be strictly decreasing")
        M = exp_tbl.get("M", 8)
        _check(errors, isinstance(M, int) and M >= 1, f"experiment.M must be a positive integer (got {M})")
    if kind == "dissipation_ldp":
        _check(errors, exp_tbl.get("delta_frac", 0.05) > 0, "experiment.delta_frac must be positive")
    if kind in ("rate_fn", "variational"):
        _check(errors, exp_tbl.get("budget", 1.0) > 0, "experiment.budget must be positive")

    seed = raw.get("seed", 0)
    _check(errors, isinstance(seed, int) and seed >= 0, f"seed must be a non-negative integer (got {seed})")

    output_tbl = raw.get("output", {})
    out_dir = output_tbl.get("dir", "out")

    if errors:
        raise SchemaError("invalid configuration:\n  - " + "\n  - ".join(errors))

    grid = Grid(d=d, N=N, L=L, dealias_fraction=frac)
    noise_spec = None
    if eps > 0 or kind in ("zero_noise", "ldp_tail", "rate_fn", "variational", "dissipation_ldp"):
        noise_spec = NoiseSpec(d=d, alpha=alpha, K=K, L=L)
    try:
        drift_spec = DriftSpec(**{k: _tuplify(v) for k, v in drift_tbl.items()})
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"invalid [drift] table: {exc}") from exc
    solver = SolverConfig(
        epsilon=eps, kappa=kappa, dt=dt, T=T, scheme=scheme, seed=seed,
        record_every=record_every,
        keep_coefficient_log=solver_tbl.get("keep_coefficient_log", kind == "evolve"),
    )
    return RunConfig(
        raw=raw, grid=grid, noise_spec=noise_spec, drift_spec=drift_spec,
        solver=solver, initial=raw.get("initial", {}), experiment=exp_tbl,
        output_dir=out_dir, seed=seed,
    )


def _tuplify(v):
    return tuple(v) if isinstance(v, list) else v


def expand_grid(raw: dict, assignments: dict[str, list]) -> list[dict]:
    """Cartesian expansion of dotted-key parameter lists into child configs."""
    import copy
    import itertools

    keys = list(assignments)
    configs = []
    for combo in itertools.product(*(assignments[k] for k in keys)):
        child = copy.deepcopy(raw)
        for key, value in zip(keys, combo):
            tbl = child
            parts = key.split(".")
            for p in parts[:-1]:
                tbl = tbl.setdefault(p, {})
            tbl[parts[-1]] = value
        configs.append(child)
    return configs
