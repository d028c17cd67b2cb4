"""Time integrators for the stochastic transport equation on the torus.

Three schemes:

* ``ito_euler`` — explicit Euler-Maruyama for the martingale form with the
  (1+kappa)*eps^2*Laplacian corrector applied exactly in spectral space
  through an integrating factor (diffusion adds no step-size restriction);
* ``strat_midpoint`` — midpoint rule for the Stratonovich form, solved
  by fixed-point iteration (``midpoint_iterations=2`` is the textbook Heun
  predictor-corrector; the default 4 converges the implicit midpoint rule,
  whose transport map is orthogonal for divergence-free fields, so the L^2
  norm is conserved pathwise to O(dt^3) per unit time).  The same increment
  feeds every corrector pass; the transport term is evaluated at the
  averaged state; no explicit eps^2 Laplacian appears;
* ``semi_lagrangian`` — flow composition with hull-clipped cubic
  interpolation; satisfies the maximum principle exactly (kappa must be 0).

Transport terms are 2/3-dealiased, which makes advection by divergence-free
fields exactly skew-adjoint on the retained modes.  Trajectories are
replayable: every path owns a counter-based RNG stream keyed by
(seed, path_index), and the per-step mode coefficients can be logged.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from .drifts import Drift
from .errors import BlowupError, InvalidFieldError, MissingLogError, StabilityError
from .fields import Grid, ScalarField, VectorField, _grid_arrays, lp_norm
from .kernels import interp_cubic_periodic
from .noise import NoiseBasis, SpectralScatter

SCHEMES = ("ito_euler", "strat_midpoint", "semi_lagrangian")


@dataclass
class SolverConfig:
    epsilon: float = 0.3
    kappa: float = 0.0
    dt: float = 1e-3
    T: float = 1.0
    scheme: str = "strat_midpoint"
    seed: int = 0
    record_every: int = 1
    keep_coefficient_log: bool = True
    cfl_limit: float = 0.9
    blowup_factor: float = 10.0
    midpoint_iterations: int = 4

    def __post_init__(self):
        if not (0.0 <= self.epsilon <= 1.0):
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not (0.0 <= self.kappa < 1.0):
            raise ValueError(f"kappa must lie in [0, 1), got {self.kappa}")
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; known: {SCHEMES}")
        if self.scheme == "semi_lagrangian" and self.kappa != 0.0:
            raise ValueError("semi_lagrangian mode supports kappa = 0 only")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.midpoint_iterations < 1:
            raise ValueError("midpoint_iterations must be >= 1")

    @property
    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if abs(n * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"T={self.T} is not an integer multiple of dt={self.dt}")
        return n


@dataclass
class Trajectory:
    """Recorded path of the scalar field plus everything needed to replay it."""

    grid: Grid
    config: SolverConfig
    times: np.ndarray  # snapshot times
    snapshots: np.ndarray  # (n_snap, *grid.shape)
    path_index: int = 0
    coeff_log: np.ndarray | None = None  # (n_steps, n_pairs, 2)
    basis_manifest: dict | None = None
    drift_desc: dict = dc_field(default_factory=dict)
    origin: str = "spectral"
    diagnostics: dict = dc_field(default_factory=dict)

    @property
    def n_snapshots(self) -> int:
        return self.snapshots.shape[0]

    def snapshot_field(self, i: int) -> ScalarField:
        return ScalarField.from_values(self.grid, self.snapshots[i])

    def initial_field(self) -> ScalarField:
        return self.snapshot_field(0)

    def final_field(self) -> ScalarField:
        return self.snapshot_field(self.n_snapshots - 1)

    def fields(self):
        for i in range(self.n_snapshots):
            yield self.times[i], self.snapshot_field(i)


GValues = Callable[[float], Sequence[np.ndarray]]


def _g_values(g, grid: Grid) -> GValues | None:
    if g is None:
        return None
    if isinstance(g, VectorField):
        vals = [c.values for c in g.components]

        def static(t: float):
            return vals

        static.time_dependent = False
        return static
    if callable(g):
        return g
    raise TypeError("g must be a VectorField, a callable t -> component arrays, or None")



def _velocity_sampler(drift: Drift | None, gv: GValues | None, grid: Grid):
    """Shared-per-step drift+control arrays; None when no transport drift."""
    if drift is None and gv is None:
        return None, False
    time_dep = (drift is not None and drift.spec.time_dependence != "static") or (
        gv is not None and getattr(gv, "time_dependent", True)
    )

    def at(t: float):
        vv = [np.zeros(grid.shape) for _ in range(grid.d)]
        if drift is not None:
            vv = [a + v for a, v in zip(vv, drift.values_at(t))]
        if gv is not None:
            vv = [a + v for a, v in zip(vv, gv(t))]
        return vv

    return at, time_dep


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based stream split: independent stream per (seed, path)."""
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, path_index]))


class _StepWorkspace:
    """Precomputed spectral operators bound to (grid, config, basis)."""

    def __init__(self, grid: Grid, cfg: SolverConfig, basis: NoiseBasis | None):
        arrs = _grid_arrays(grid)
        self.grid = grid
        self.cfg = cfg
        self.mask = arrs["mask"]
        self.deriv = arrs["deriv"]
        self.axes = tuple(range(-grid.d, 0))
        xi_sq = arrs["xi_sq"]
        eps2 = cfg.epsilon**2
        self.ito_factor = np.exp(-(1.0 + cfg.kappa) * eps2 * cfg.dt * xi_sq)
        self.strat_factor = np.exp(-cfg.kappa * eps2 * cfg.dt * xi_sq) if cfg.kappa > 0 else None
        self.scatter: SpectralScatter | None = None
        if basis is not None and cfg.epsilon > 0:
            self.scatter = basis.scatter(grid)
        self.n_pairs = 0 if self.scatter is None else basis.n_pairs
        # pack pairs of real-output transforms into single complex ones
        self.deriv_pack = self.deriv[0] + 1j * self.deriv[1] if grid.d >= 2 else None

    def grad(self, rho_hat: np.ndarray) -> list[np.ndarray]:
        if self.grid.d == 1:
            return [np.real(np.fft.ifftn(self.deriv[0] * rho_hat, axes=self.axes))]
        z = np.fft.ifftn(self.deriv_pack * rho_hat, axes=self.axes)
        out = [np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag)]
        if self.grid.d == 3:
            out.append(np.real(np.fft.ifftn(self.deriv[2] * rho_hat, axes=self.axes)))
        return out

    def advect_hat(self, vvals, grad) -> np.ndarray:
        prod = vvals[0] * grad[0]
        for ax in range(1, self.grid.d):
            prod = prod + vvals[ax] * grad[ax]
        return np.where(self.mask, np.fft.fftn(prod, axes=self.axes), 0.0)


def _step_spectral(ws: _StepWorkspace, rho_hat, vvals, vvals_mid, dW_vals):
    """One step of either spectral scheme on (batched) spectral arrays.

    Returns (rho_hat_new, S_hat) where S_hat is the dealiased noise
    transport term of the step (used by balance diagnostics).
    """
    cfg = ws.cfg
    dt = cfg.dt
    eps = cfg.epsilon
    grad = ws.grad(rho_hat)
    S_hat = None
    if cfg.scheme == "ito_euler":
        upd = rho_hat.copy()
        if vvals is not None:
            upd -= dt * ws.advect_hat(vvals, grad)
        if dW_vals is not None:
            S_hat = ws.advect_hat(dW_vals, grad)
            upd -= eps * S_hat
        return ws.ito_factor * upd, S_hat

    # strat_midpoint: fixed-point iteration of the implicit midpoint rule;
    # one iteration is the textbook Heun predictor-corrector
    if vvals is None and dW_vals is None:
        return rho_hat.copy(), None
    v_corr = vvals_mid if vvals_mid is not None else vvals
    cur = rho_hat
    for it in range(cfg.midpoint_iterations):
        if it == 0:
            grad_mid = grad
            v_use = vvals
        else:
            grad_mid = ws.grad(0.5 * (rho_hat + cur))
            v_use = v_corr
        A = 0.0
        if vvals is not None:
            A = dt * ws.advect_hat(v_use, grad_mid)
        if dW_vals is not None:
            S = ws.advect_hat(dW_vals, grad_mid)
            if it == 0:
                S_hat = S
            A = A + eps * S
        cur = rho_hat - A
    if ws.strat_factor is not None:
        cur = ws.strat_factor * cur
    return cur, S_hat


def _step_semilag(grid: Grid, cfg: SolverConfig, rho_vals, vvals, dW_vals):
    """Flow-composition step with hull-clipped cubic interpolation."""
    d = grid.d
    h = grid.spacing
    mesh = np.stack([m.ravel() for m in grid.meshes()], axis=1)  # (npts, d)
    disp = np.zeros_like(mesh)
    if vvals is not None:
        for ax in range(d):
            disp[:, ax] += cfg.dt * vvals[ax].ravel()
    if dW_vals is not None:
        for ax in range(d):
            disp[:, ax] += cfg.epsilon * dW_vals[ax].ravel()
    # one midpoint iteration for the departure points
    half = mesh - 0.5 * disp
    disp2 = np.zeros_like(mesh)
    if vvals is not None:
        for ax in range(d):
            disp2[:, ax] += cfg.dt * interp_cubic_periodic(vvals[ax], half / h)
    if dW_vals is not None:
        for ax in range(d):
            disp2[:, ax] += cfg.epsilon * interp_cubic_periodic(dW_vals[ax], half / h)
    departure = (mesh - disp2) / h
    new_vals = interp_cubic_periodic(rho_vals, departure, clip=True)
    return new_vals.reshape(grid.shape)


def check_stability(grid: Grid, cfg: SolverConfig, drift: Drift | None, basis: NoiseBasis | None) -> dict:
    """Advective CFL and diffusion-number preconditions.

    Diffusion is integrated exactly, so its number is reported but never
    limits the step; the advective Courant number must stay below
    ``cfg.cfl_limit``.
    """
    h = grid.spacing
    vmax = 0.0
    if drift is not None:
        vmax = max(lp_norm(c, np.inf) for c in drift.base.components)
        mod_max = max(abs(drift.modulation(t)) for t in np.linspace(0, cfg.T, 33))
        vmax *= mod_max
    noise_disp = 0.0
    if basis is not None and cfg.epsilon > 0:
        # rms one-step displacement of the noise field is eps sqrt(2 d dt)
        noise_disp = cfg.epsilon * np.sqrt(2.0 * grid.d * cfg.dt)
    courant = (vmax * cfg.dt + noise_disp) / h
    xi_max_sq = (np.pi * grid.N / grid.L) ** 2
    diffusion_number = cfg.dt * cfg.epsilon**2 * (1.0 + cfg.kappa) * xi_max_sq
    if courant > cfg.cfl_limit:
        raise StabilityError(
            f"advective Courant number {courant:.3f} exceeds limit {cfg.cfl_limit}"
            f" (vmax={vmax:.3g}, rms noise step={noise_disp:.3g}, dt={cfg.dt}, h={h:.3g})"
        )
    return {"courant": float(courant), "diffusion_number": float(diffusion_number)}


# ---------------------------------------------------------------------------
# public single-step operations
# ---------------------------------------------------------------------------

def _resolve_inputs(rho, b, g, basis, cfg):
    grid = rho.grid
    if cfg.epsilon > 0 and basis is None:
        raise ValueError("epsilon > 0 requires a noise basis")
    vvals = None
    if b is not None or g is not None:
        acc = [np.zeros(grid.shape) for _ in range(grid.d)]
        if b is not None:
            bv = b.values_at(0.0) if isinstance(b, Drift) else [c.values for c in b.components]
            acc = [a + v for a, v in zip(acc, bv)]
        if g is not None:
            gv = _g_values(g, grid)(0.0)
            acc = [a + v for a, v in zip(acc, gv)]
        vvals = acc
    return grid, vvals


def step_ito(rho: ScalarField, b, g, basis: NoiseBasis | None, cfg: SolverConfig, rng: np.random.Generator) -> ScalarField:
    """One Euler-Maruyama step of the martingale-form equation."""
    cfg = _with_scheme(cfg, "ito_euler")
    return _public_step(rho, b, g, basis, cfg, rng)


def step_stratonovich(rho: ScalarField, b, g, basis: NoiseBasis | None, cfg: SolverConfig, rng: np.random.Generator) -> ScalarField:
    """One iterated-midpoint step of the Stratonovich-form equation.

    ``cfg.midpoint_iterations=2`` reproduces the plain Heun
    predictor-corrector; higher values tighten the implicit midpoint solve.
    """
    cfg = _with_scheme(cfg, "strat_midpoint")
    return _public_step(rho, b, g, basis, cfg, rng)


def _with_scheme(cfg: SolverConfig, scheme: str) -> SolverConfig:
    if cfg.scheme == scheme:
        return cfg
    kw = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    kw["scheme"] = scheme
    return SolverConfig(**kw)


def _public_step(rho, b, g, basis, cfg, rng):
    if not rho.is_finite():
        raise InvalidFieldError("step: field contains non-finite values")
    grid, vvals = _resolve_inputs(rho, b, g, basis, cfg)
    ws = _StepWorkspace(grid, cfg, basis)
    dW_vals = None
    if ws.scatter is not None:
        coeffs = rng.standard_normal((ws.n_pairs, 2)) * np.sqrt(cfg.dt)
        dW_vals = ws.scatter.assemble(coeffs)
    new_hat, _ = _step_spectral(ws, rho.spectral, vvals, vvals, dW_vals)
    return ScalarField.from_spectral(grid, new_hat)


# ---------------------------------------------------------------------------
# trajectory evolution (single path and batched ensembles)
# ---------------------------------------------------------------------------

def evolve(
    rho0: ScalarField,
    drift: Drift | None,
    g,
    basis: NoiseBasis | None,
    cfg: SolverConfig,
    path_index: int = 0,
) -> Trajectory:
    """Integrate one path; deterministic given (seed, path_index, cfg, inputs)."""
    grid = rho0.grid
    if not rho0.is_finite():
        raise InvalidFieldError("evolve: initial field contains non-finite values")
    if cfg.epsilon > 0 and basis is None:
        raise ValueError("epsilon > 0 requires a noise basis")
    diag = check_stability(grid, cfg, drift, basis if cfg.epsilon > 0 else None)
    n_steps = cfg.n_steps

    record_idx = set(range(0, n_steps + 1, cfg.record_every))
    record_idx.add(n_steps)
    n_snap = len(record_idx)

    gv = _g_values(g, grid)
    ws = _StepWorkspace(grid, cfg, basis)
    rng = path_rng(cfg.seed, path_index)

    use_sl = cfg.scheme == "semi_lagrangian"
    rho_hat = rho0.spectral.astype(np.complex128)
    rho_vals = rho0.values.copy() if use_sl else None

    log = None
    if cfg.keep_coefficient_log and ws.scatter is not None:
        log = np.zeros((n_steps, ws.n_pairs, 2))

    snapshots = np.zeros((n_snap, *grid.shape))
    times = np.zeros(n_snap)
    l2_0 = lp_norm(rho0, 2)
    guard = cfg.blowup_factor * np.exp(drift.div_l1t_linf(cfg.T) if drift else 0.0) * max(l2_0, 1e-300)
    sup_l2 = l2_0

    snap = 0

    def record(i_step: int, t: float, values: np.ndarray):
        nonlocal snap
        snapshots[snap] = values
        times[snap] = t
        snap += 1

    if 0 in record_idx:
        record(0, 0.0, rho0.values)

    v_at, v_time_dep = _velocity_sampler(drift, gv, grid)
    for i in range(n_steps):
        t = i * cfg.dt
        vvals = v_at(t) if v_at is not None else None
        vvals_mid = vvals
        if v_at is not None and v_time_dep and cfg.scheme == "strat_midpoint":
            vvals_mid = v_at(t + 0.5 * cfg.dt)
        dW_vals = None
        if ws.scatter is not None:
            coeffs = rng.standard_normal((ws.n_pairs, 2)) * np.sqrt(cfg.dt)
            if log is not None:
                log[i] = coeffs
            dW_vals = ws.scatter.assemble(coeffs)

        if use_sl:
            rho_vals = _step_semilag(grid, cfg, rho_vals, vvals, dW_vals)
            cur_vals = rho_vals
        else:
            rho_hat, _ = _step_spectral(ws, rho_hat, vvals, vvals_mid, dW_vals)
            cur_vals = None

        if (i + 1) in record_idx or (i + 1) == n_steps or (i % 16) == 15:
            if cur_vals is None:
                cur_vals = np.real(np.fft.ifftn(rho_hat))
            l2 = float(np.sqrt(np.sum(cur_vals**2) * grid.cell_volume))
            if not np.isfinite(l2) or l2 > guard:
                raise BlowupError(
                    f"L2 norm {l2:.3e} exceeded blow-up guard {guard:.3e} at t={t + cfg.dt:.6f}",
                    time=t + cfg.dt,
                )
            sup_l2 = max(sup_l2, l2)
            if (i + 1) in record_idx:
                record(i + 1, (i + 1) * cfg.dt, cur_vals)

    diag["sup_l2"] = sup_l2
    return Trajectory(
        grid=grid,
        config=cfg,
        times=times,
        snapshots=snapshots,
        path_index=path_index,
        coeff_log=log,
        basis_manifest=basis.to_manifest() if basis is not None else None,
        drift_desc=dict(drift.spec.__dict__) if drift is not None else {"kind": "none"},
        origin="semi_lagrangian" if use_sl else "spectral",
        diagnostics=diag,
    )


def evolve_batch(
    rho0: ScalarField,
    drift: Drift | None,
    g,
    basis: NoiseBasis | None,
    cfg: SolverConfig,
    path_indices: Sequence[int],
    on_record: Callable[[int, float, np.ndarray], None] | None = None,
    on_step: Callable[[int, float, np.ndarray, np.ndarray | None], None] | None = None,
) -> np.ndarray:
    """Vectorized evolution of many paths sharing (rho0, drift, g, cfg).

    Every path consumes its own counter-based stream, so results are
    bitwise-identical to running :func:`evolve` per path.  ``on_record`` is
    called at snapshot strides with the batched spectral state
    (n_paths, *grid.shape); ``on_step(i, t, rho_hat_pre, S_hat, coeffs)``
    sees the pre-update state, the dealiased noise-transport term of the
    step, and the step's mode coefficients (n_paths, n_pairs, 2), for
    balance diagnostics and likelihood-ratio accounting.  Returns the final
    batched spectral state.
    """
    grid = rho0.grid
    if cfg.epsilon > 0 and basis is None:
        raise ValueError("epsilon > 0 requires a noise basis")
    check_stability(grid, cfg, drift, basis if cfg.epsilon > 0 else None)
    if cfg.scheme == "semi_lagrangian":
        raise ValueError("evolve_batch supports the spectral schemes only")
    n_paths = len(path_indices)
    n_steps = cfg.n_steps
    ws = _StepWorkspace(grid, cfg, basis)
    gv = _g_values(g, grid)
    rngs = [path_rng(cfg.seed, idx) for idx in path_indices]

    rho_hat = np.broadcast_to(rho0.spectral, (n_paths, *grid.shape)).astype(np.complex128)
    l2_0 = lp_norm(rho0, 2)
    guard = cfg.blowup_factor * np.exp(drift.div_l1t_linf(cfg.T) if drift else 0.0) * max(l2_0, 1e-300)

    if on_record is not None:
        on_record(0, 0.0, rho_hat)

    sqrt_dt = np.sqrt(cfg.dt)
    v_at, v_time_dep = _velocity_sampler(drift, gv, grid)
    for i in range(n_steps):
        t = i * cfg.dt
        vvals = v_at(t) if v_at is not None else None
        vvals_mid = vvals
        if v_at is not None and v_time_dep and cfg.scheme == "strat_midpoint":
            vvals_mid = v_at(t + 0.5 * cfg.dt)
        dW_vals = None
        coeffs = None
        if ws.scatter is not None:
            coeffs = np.stack(
                [rng.standard_normal((ws.n_pairs, 2)) for rng in rngs]
            ) * sqrt_dt
            dW_vals = ws.scatter.assemble(coeffs)
        rho_prev = rho_hat
        rho_hat, S_hat = _step_spectral(ws, rho_hat, vvals, vvals_mid, dW_vals)
        if on_step is not None:
            on_step(i, t, rho_prev, S_hat, coeffs if dW_vals is not None else None)
        if (i % 32) == 31 or (i + 1) == n_steps:
            sum_axes = tuple(range(1, grid.d + 1))
            l2_sq = np.sum(np.abs(rho_hat) ** 2, axis=sum_axes) * grid.cell_volume / grid.N**grid.d
            worst = np.max(l2_sq)
            if not np.isfinite(worst) or worst > guard * guard:
                raise BlowupError(f"batch blow-up guard tripped at t={t + cfg.dt:.6f}", time=t + cfg.dt)
        if on_record is not None and ((i + 1) % cfg.record_every == 0 or (i + 1) == n_steps):
            on_record(i + 1, (i + 1) * cfg.dt, rho_hat)
    return rho_hat


# ---------------------------------------------------------------------------
# weak-formulation residual
# ---------------------------------------------------------------------------

def weak_residual(
    traj: Trajectory,
    phi: ScalarField,
    basis: NoiseBasis | None = None,
    drift: Drift | None = None,
    g=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Residual time series of the weak form evaluated with the logged noise.

    Requires a trajectory recorded at every step with its coefficient log
    (when epsilon > 0).  phi must be a smooth band-limited test function on
    the trajectory grid.  Returns (times, residuals).
    """
    cfg = traj.config
    grid = traj.grid
    n_steps = cfg.n_steps
    if traj.n_snapshots != n_steps + 1:
        raise MissingLogError(
            "weak_residual needs a record_every=1 trajectory "
            f"(have {traj.n_snapshots} snapshots for {n_steps} steps)"
        )
    eps = cfg.epsilon
    if eps > 0 and (traj.coeff_log is None or basis is None):
        raise MissingLogError("weak_residual needs the coefficient log and the basis")
    from .fields import gradient_spectral, laplacian  # local import to avoid cycle noise

    w = grid.cell_volume
    phi_vals = phi.values
    grad_phi = [c.values for c in gradient_spectral(phi).components]
    lap_phi = laplacian(phi).values

    gv = _g_values(g, grid)
    scatter = basis.scatter(grid) if (basis is not None and eps > 0) else None

    rho0 = traj.snapshots[0]
    base = float(np.sum(rho0 * phi_vals)) * w
    residuals = np.zeros(n_steps + 1)
    acc = 0.0
    div_vals = None
    if drift is not None:
        div_vals = drift.base.divergence().values

    for i in range(n_steps):
        t = i * cfg.dt
        rho_i = traj.snapshots[i]
        vvals = None
        if drift is not None or gv is not None:
            vvals = [np.zeros(grid.shape) for _ in range(grid.d)]
            if drift is not None:
                vvals = [a + v for a, v in zip(vvals, drift.values_at(t))]
            if gv is not None:
                vvals = [a + v for a, v in zip(vvals, gv(t))]
        if vvals is not None:
            flux = sum(np.sum(vvals[ax] * rho_i * grad_phi[ax]) for ax in range(grid.d))
            acc += cfg.dt * float(flux) * w
        if div_vals is not None:
            m = drift.modulation(t)
            acc += cfg.dt * float(np.sum(m * div_vals * rho_i * phi_vals)) * w
        if scatter is not None:
            dW_vals = scatter.assemble(traj.coeff_log[i])
            mart = sum(np.sum(dW_vals[ax] * rho_i * grad_phi[ax]) for ax in range(grid.d))
            acc += eps * float(mart) * w
        acc += (1.0 + cfg.kappa) * eps**2 * cfg.dt * float(np.sum(rho_i * lap_phi)) * w
        pairing = float(np.sum(traj.snapshots[i + 1] * phi_vals)) * w
        residuals[i + 1] = pairing - base - acc
    return traj.times.copy(), residuals
