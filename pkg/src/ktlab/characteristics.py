"""Reference solutions by characteristics.

Two oracles:

* the deterministic renormalized reference, computed as the mollified-drift
  limit: RK4 backward foot-points of the filtered velocity, pulled back
  through the initial datum, with a Cauchy certificate across the
  mollification schedule;
* the pathwise stochastic-flow oracle for truncated noise, which replays a
  trajectory's logged increments through backward Heun characteristics.

Both pull back (rather than push forward) to avoid scattered-data
deposition, and use periodic Catmull-Rom interpolation for compositions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .drifts import Drift, mollify_drift
from .errors import MissingLogError
from .fields import Grid, ScalarField, interpolate_scalar
from .noise import NoiseBasis, increment_at_points
from .solver import SolverConfig, Trajectory

VelocityFn = Callable[[np.ndarray, float], np.ndarray]


def _as_velocity(drift: Drift | None, g_eval=None) -> VelocityFn:
    """Combine a drift and an optional control into one point evaluator."""

    def velocity(points: np.ndarray, t: float) -> np.ndarray:
        pts = np.atleast_2d(points)
        out = np.zeros_like(pts, dtype=np.float64)
        if drift is not None:
            out += drift.evaluate_at(pts, t)
        if g_eval is not None:
            out += g_eval(pts, t)
        return out

    return velocity


def rk4_backward(points: np.ndarray, velocity: VelocityFn, t_end: float, ode_dt: float,
                 t_start: float = 0.0) -> np.ndarray:
    """Foot-points at t_start of characteristics that end at ``points`` at t_end.

    Integrates dY/dtau = -v(Y, t_end - tau) from tau=0 to t_end - t_start
    with classical RK4.
    """
    span = t_end - t_start
    if span <= 0:
        return np.array(points, copy=True)
    n = max(1, int(round(span / ode_dt)))
    h = span / n
    Y = np.array(points, dtype=np.float64, copy=True)
    for i in range(n):
        tau = i * h
        t1 = t_end - tau
        k1 = -velocity(Y, t1)
        k2 = -velocity(Y + 0.5 * h * k1, t1 - 0.5 * h)
        k3 = -velocity(Y + 0.5 * h * k2, t1 - 0.5 * h)
        k4 = -velocity(Y + h * k3, t1 - h)
        Y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Y


def rk4_forward(points: np.ndarray, velocity: VelocityFn, t_end: float, ode_dt: float) -> np.ndarray:
    """Arrival positions at t_end of particles starting at ``points`` at time 0."""
    n = max(1, int(round(t_end / ode_dt)))
    h = t_end / n
    Y = np.array(points, dtype=np.float64, copy=True)
    for i in range(n):
        t = i * h
        k1 = velocity(Y, t)
        k2 = velocity(Y + 0.5 * h * k1, t + 0.5 * h)
        k3 = velocity(Y + 0.5 * h * k2, t + 0.5 * h)
        k4 = velocity(Y + h * k3, t + h)
        Y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Y


@dataclass
class FlowMap:
    """Backward foot-point array X(t, x) for every grid point x."""

    grid: Grid
    time: float
    footpoints: np.ndarray  # (n_grid_points, d), physical coordinates

    def displacement(self) -> np.ndarray:
        """Foot-point displacement wrapped to [-L/2, L/2), shaped like the grid."""
        mesh = np.stack([m.ravel() for m in self.grid.meshes()], axis=1)
        L = self.grid.L
        disp = np.mod(self.footpoints - mesh + 0.5 * L, L) - 0.5 * L
        return disp.reshape(self.grid.shape + (self.grid.d,))

    def jacobian_determinant(self) -> np.ndarray:
        """det of the foot-point map gradient, by periodic central differences."""
        disp = self.displacement()
        d = self.grid.d
        h = self.grid.spacing
        J = np.zeros(self.grid.shape + (d, d))
        for comp in range(d):
            for ax in range(d):
                der = (np.roll(disp[..., comp], -1, axis=ax) - np.roll(disp[..., comp], 1, axis=ax)) / (2 * h)
                J[..., comp, ax] = der
            J[..., comp, comp] += 1.0
        return np.linalg.det(J)


def backward_flow_map(grid: Grid, drift: Drift | None, t: float, ode_dt: float, g_eval=None) -> FlowMap:
    mesh = np.stack([m.ravel() for m in grid.meshes()], axis=1)
    velocity = _as_velocity(drift, g_eval)
    foot = rk4_backward(mesh, velocity, t, ode_dt)
    return FlowMap(grid=grid, time=t, footpoints=foot)


def _compose_with_initial(rho0: ScalarField, footpoints: np.ndarray) -> np.ndarray:
    vals = interpolate_scalar(rho0, footpoints)
    return vals.reshape(rho0.grid.shape)


def _char_config(ode_dt: float, T: float) -> SolverConfig:
    return SolverConfig(
        epsilon=0.0, kappa=0.0, dt=ode_dt, T=max(T, ode_dt), scheme="strat_midpoint",
        record_every=1, keep_coefficient_log=False,
    )


def renormalized_reference(
    rho0: ScalarField,
    drift: Drift | None,
    g_eval=None,
    mollify_schedule=(0.0,),
    ode_dt: float = 1e-3,
    record_times=(1.0,),
) -> tuple[Trajectory, dict]:
    """Mollified-characteristics reference solution.

    For each filter width delta in the (decreasing) schedule the velocity is
    Gaussian-filtered and the scalar is pulled back along RK4 backward
    characteristics.  The finest-delta trajectory is returned together with
    the sup-in-time L^2 increments between successive widths (the stability
    certificate); a non-decreasing certificate raises no error but is
    flagged.
    """
    deltas = list(mollify_schedule)
    if not deltas:
        raise ValueError("mollify_schedule must be non-empty")
    if any(b > a for a, b in zip(deltas, deltas[1:])) and len(deltas) > 1:
        deltas = sorted(deltas, reverse=True)
    record_times = np.asarray(sorted(record_times), dtype=np.float64)
    grid = rho0.grid
    mesh = np.stack([m.ravel() for m in grid.meshes()], axis=1)
    w = grid.cell_volume

    per_delta: list[np.ndarray] = []
    for delta in deltas:
        dft = mollify_drift(drift, delta) if drift is not None else None
        velocity = _as_velocity(dft, g_eval)
        time_dep = (drift is not None and drift.spec.time_dependence != "static") or (
            g_eval is not None and getattr(g_eval, "time_dependent", True)
        )
        snaps = np.zeros((len(record_times), *grid.shape))
        if not time_dep:
            # autonomous velocity: keep integrating the same particle cloud
            Y = mesh.copy()
            t_prev = 0.0
            for j, t in enumerate(record_times):
                Y = rk4_backward(Y, velocity, t - t_prev, ode_dt) if t > t_prev else Y
                t_prev = t
                snaps[j] = _compose_with_initial(rho0, Y)
        else:
            for j, t in enumerate(record_times):
                foot = rk4_backward(mesh, velocity, t, ode_dt)
                snaps[j] = _compose_with_initial(rho0, foot)
        per_delta.append(snaps)

    increments = []
    for a, b in zip(per_delta, per_delta[1:]):
        gaps = np.sqrt(np.sum((a - b) ** 2, axis=tuple(range(1, grid.d + 1))) * w)
        increments.append(float(np.max(gaps)))
    cauchy_ok = all(b <= a * 1.0000001 for a, b in zip(increments, increments[1:])) if len(increments) > 1 else True

    finest = per_delta[-1]
    times = record_times
    if times[0] > 0.0:
        times = np.concatenate([[0.0], times])
        finest = np.concatenate([rho0.values[None], finest], axis=0)
    traj = Trajectory(
        grid=grid,
        config=_char_config(ode_dt, float(record_times[-1])),
        times=times,
        snapshots=finest,
        origin="characteristics",
        drift_desc=dict(drift.spec.__dict__) if drift is not None else {"kind": "none"},
        diagnostics={"mollify_schedule": deltas, "cauchy_increments": increments},
    )
    certificate = {
        "deltas": deltas,
        "increments": increments,
        "cauchy_ok": bool(cauchy_ok),
    }
    return traj, certificate


def stochastic_flow_oracle(
    rho0: ScalarField,
    drift: Drift | None,
    basis: NoiseBasis | None,
    traj: Trajectory,
    g_eval=None,
    snapshot_indices=None,
) -> Trajectory:
    """Replay a trajectory's noise through backward stochastic characteristics.

    For each requested snapshot time the particle cloud is integrated
    backward through the logged increments (Heun per step, increments
    reversed) and the initial datum is composed with the foot-points.
    """
    cfg = traj.config
    eps = cfg.epsilon
    if eps > 0 and traj.coeff_log is None:
        raise MissingLogError("stochastic_flow_oracle needs the coefficient log")
    if eps > 0 and basis is None:
        raise MissingLogError("stochastic_flow_oracle needs the noise basis")
    grid = rho0.grid
    dt = cfg.dt
    n_steps = cfg.n_steps
    if snapshot_indices is None:
        snapshot_indices = range(traj.n_snapshots)
    snapshot_indices = list(snapshot_indices)

    mesh = np.stack([m.ravel() for m in grid.meshes()], axis=1)
    velocity = _as_velocity(drift, g_eval)

    out_times = []
    out_snaps = []
    for si in snapshot_indices:
        t_n = float(traj.times[si])
        n = int(round(t_n / dt))
        if abs(n * dt - t_n) > 1e-9 * max(1.0, t_n):
            raise ValueError(f"snapshot time {t_n} is not on the step lattice")
        Y = mesh.copy()
        iters = max(2, traj.config.midpoint_iterations)
        for i in range(n - 1, -1, -1):
            t_i = i * dt
            # backward midpoint: dX = -(b+g) dt - eps dW with the step's
            # logged increment, displacement evaluated at the midpoint and
            # tightened by fixed-point iteration (mirrors the field scheme)
            cur = Y
            for _ in range(iters):
                mid = 0.5 * (Y + cur)
                disp = -dt * velocity(mid, t_i + 0.5 * dt)
                if eps > 0:
                    disp = disp - eps * increment_at_points(basis, traj.coeff_log[i], mid)
                cur = Y + disp
            Y = cur
        out_times.append(t_n)
        out_snaps.append(_compose_with_initial(rho0, Y))

    return Trajectory(
        grid=grid,
        config=cfg,
        times=np.asarray(out_times),
        snapshots=np.stack(out_snaps),
        path_index=traj.path_index,
        origin="characteristics",
        drift_desc=traj.drift_desc,
        diagnostics={"replayed_from": traj.origin},
    )
