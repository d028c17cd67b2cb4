"""Norm ledgers, the discrete dissipation measure, spectral transfer
functionals, and path-space metrics.

The dissipation measure is represented on a coarse space-time partition:
tensorized cos^2 (Hann) windows that sum to one exactly in space, times
indicator bins in time.  Because the spatial windows form a partition of
unity, all flux, martingale and diffusion terms cancel exactly in the cell
sum and the total equals the pathwise L^2 deficit minus the (identically
vanishing, for divergence-free drift) global martingale term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .drifts import Drift
from .errors import MissingLogError
from .fields import Grid, ScalarField, lp_norm, sobolev_norm
from .noise import NoiseBasis
from .solver import SolverConfig, Trajectory, evolve_batch

TWO_PI = 2.0 * np.pi

trapezoid = getattr(np, "trapezoid", None) or np.trapz  # numpy<2 compat



# ---------------------------------------------------------------------------
# energy ledger
# ---------------------------------------------------------------------------

@dataclass
class EnergyLedger:
    times: np.ndarray
    l2_squared: np.ndarray
    lp_norms: dict  # p -> series
    hs_norms: dict  # s -> series
    martingale: np.ndarray | None = None  # global L^2-balance martingale accumulator

    def to_rows(self, config_hash: str = "") -> list[dict]:
        rows = []
        for i, t in enumerate(self.times):
            rows.append({"config_hash": config_hash, "time": float(t), "quantity": "l2_squared",
                         "value": float(self.l2_squared[i])})
            for p, series in self.lp_norms.items():
                rows.append({"config_hash": config_hash, "time": float(t),
                             "quantity": f"lp_{p}", "value": float(series[i])})
            for s, series in self.hs_norms.items():
                rows.append({"config_hash": config_hash, "time": float(t),
                             "quantity": f"hs_{s}", "value": float(series[i])})
        return rows


def energy_ledger(traj: Trajectory, p_list=(2, 4), s_list=(), basis: NoiseBasis | None = None) -> EnergyLedger:
    """Norm time series over all snapshots; martingale accumulator when the
    trajectory carries a full-resolution coefficient log."""
    n = traj.n_snapshots
    l2sq = np.zeros(n)
    lp = {p: np.zeros(n) for p in p_list}
    hs = {s: np.zeros(n) for s in s_list}
    for i in range(n):
        f = traj.snapshot_field(i)
        l2sq[i] = lp_norm(f, 2) ** 2
        for p in p_list:
            lp[p][i] = lp_norm(f, p)
        for s in s_list:
            hs[s][i] = sobolev_norm(f, s)

    mart = None
    cfg = traj.config
    if (
        basis is not None
        and traj.coeff_log is not None
        and cfg.epsilon > 0
        and traj.n_snapshots == cfg.n_steps + 1
    ):
        grid = traj.grid
        scatter = basis.scatter(grid)
        from .fields import gradient_spectral

        w = grid.cell_volume
        mart = np.zeros(n)
        acc = 0.0
        for i in range(cfg.n_steps):
            rho_i = traj.snapshots[i]
            dW = scatter.assemble(traj.coeff_log[i])
            grad = gradient_spectral(ScalarField.from_values(grid, rho_i))
            dot = sum(dW[ax] * grad.components[ax].values for ax in range(grid.d))
            acc += -2.0 * cfg.epsilon * float(np.sum(rho_i * dot)) * w
            mart[i + 1] = acc
    return EnergyLedger(times=traj.times.copy(), l2_squared=l2sq, lp_norms=lp, hs_norms=hs, martingale=mart)


# ---------------------------------------------------------------------------
# dissipation measure on a coarse partition
# ---------------------------------------------------------------------------

def _hann_windows(N: int, blocks: int, spacing: float):
    """Per-axis window values and analytic first/second derivatives.

    ``blocks`` overlapping cos^2 bumps of half-width H = N/blocks grid
    cells; neighbouring windows sum to one exactly.
    """
    if N % blocks != 0:
        raise ValueError(f"blocks={blocks} must divide N={N}")
    H = N // blocks  # half-width in cells
    h = spacing
    idx = np.arange(N)
    W = np.zeros((blocks, N))
    W1 = np.zeros((blocks, N))
    W2 = np.zeros((blocks, N))
    for b in range(blocks):
        center = b * H
        s = np.mod(idx - center + N // 2, N) - N // 2  # signed cell offset
        inside = np.abs(s) <= H
        x = s * h
        Hx = H * h
        W[b, inside] = np.cos(np.pi * x[inside] / (2 * Hx)) ** 2
        W1[b, inside] = -(np.pi / (2 * Hx)) * np.sin(np.pi * x[inside] / Hx)
        W2[b, inside] = -(np.pi**2 / (2 * Hx**2)) * np.cos(np.pi * x[inside] / Hx)
        # the |s| = H edge belongs to both neighbours; halve to avoid double count
        edge = np.abs(s) == H
        W[b, edge] = 0.0
        W1[b, edge] = 0.0
        W2[b, edge] *= 0.5
    return W, W1, W2


@dataclass
class DissipationEstimate:
    cells: np.ndarray  # (n_tbins, blocks, blocks[, blocks])
    time_edges: np.ndarray
    blocks: int
    total: float
    deficit: float
    martingale_total: float
    identity_residual: float
    worst_cell: float
    negativity_flag: bool
    tv_proxy: float | None

    def per_time_bin(self) -> np.ndarray:
        return self.cells.reshape(self.cells.shape[0], -1).sum(axis=1)

    def to_rows(self, config_hash: str = "") -> list[dict]:
        rows = []
        nt = self.cells.shape[0]
        for it in range(nt):
            flat = self.cells[it]
            for pos in np.ndindex(*flat.shape):
                rows.append({
                    "config_hash": config_hash,
                    "t_bin": it,
                    **{f"x{ax}_block": int(p) for ax, p in enumerate(pos)},
                    "value": float(flat[pos]),
                })
        return rows


def dissipation_measure(
    traj: Trajectory,
    basis: NoiseBasis | None,
    drift: Drift | None = None,
    spatial_blocks: int = 8,
    time_bins: int = 16,
    negativity_tol: float = 1e-3,
) -> DissipationEstimate:
    """Local energy-balance residuals on coarse space-time cells.

    Needs the per-step coefficient log (for epsilon > 0) and a
    divergence-free drift.  Works at any snapshot stride; the ledger
    identity total = deficit - martingale holds by construction, while cell
    values are quadrature approximations that sharpen at record_every=1.
    """
    cfg = traj.config
    grid = traj.grid
    eps = cfg.epsilon
    if eps > 0 and traj.coeff_log is None:
        raise MissingLogError("dissipation_measure requires the coefficient log")
    if eps > 0 and basis is None:
        raise MissingLogError("dissipation_measure requires the noise basis")
    if drift is not None and drift.metadata.get("div_linf", 0.0) > 1e-8:
        raise ValueError("dissipation_measure assumes div b = 0")

    W, W1, W2 = _hann_windows(grid.N, spatial_blocks, grid.spacing)
    w = grid.cell_volume
    d = grid.d
    if d != 2:
        raise NotImplementedError("coarse dissipation cells implemented for d=2")

    n_steps = cfg.n_steps
    time_edges = np.linspace(0.0, cfg.T, time_bins + 1)
    B = spatial_blocks
    cells = np.zeros((time_bins, B, B))

    def sandwich(F, A, Bm):
        return (A @ F @ Bm.T) * w

    def pair_rho2(values_sq):
        return sandwich(values_sq, W, W)

    # snapshot index appropriate for step i (latest snapshot at or before i)
    snap_step = np.rint(traj.times / cfg.dt).astype(int)

    scatter = basis.scatter(grid) if (basis is not None and eps > 0) else None
    diff_factor = (1.0 + cfg.kappa) * eps**2

    # endpoint pairings per time bin
    edge_steps = np.rint(time_edges / cfg.dt).astype(int)
    pair_at_edge = []
    for es in edge_steps:
        si = int(np.searchsorted(snap_step, es, side="right") - 1)
        vals = traj.snapshots[si]
        pair_at_edge.append(pair_rho2(vals * vals))
    for it in range(time_bins):
        cells[it] += pair_at_edge[it] - pair_at_edge[it + 1]

    mart_total = 0.0
    for i in range(n_steps):
        it = min(int(np.searchsorted(time_edges, i * cfg.dt, side="right") - 1), time_bins - 1)
        si = int(np.searchsorted(snap_step, i, side="right") - 1)
        rho = traj.snapshots[si]
        rho2 = rho * rho
        flux = np.zeros((B, B))
        if drift is not None:
            bvals = drift.values_at(i * cfg.dt)
            flux += sandwich(bvals[0] * rho2, W1, W) * cfg.dt
            flux += sandwich(bvals[1] * rho2, W, W1) * cfg.dt
        if scatter is not None:
            dW = scatter.assemble(traj.coeff_log[i])
            m1 = sandwich(dW[0] * rho2, W1, W) * eps
            m2 = sandwich(dW[1] * rho2, W, W1) * eps
            flux += m1 + m2
            mart_total += float(np.sum(m1) + np.sum(m2))
        if diff_factor > 0:
            flux += diff_factor * cfg.dt * (sandwich(rho2, W2, W) + sandwich(rho2, W, W2))
        cells[it] += flux

    total = float(np.sum(cells))
    f0 = traj.snapshot_field(0)
    fT = traj.final_field()
    deficit = lp_norm(f0, 2) ** 2 - lp_norm(fT, 2) ** 2
    identity_residual = abs(total - (deficit - mart_total))
    worst = float(np.min(cells))
    scale = lp_norm(f0, 2) ** 2
    negativity_flag = worst < -negativity_tol * scale
    tv_proxy = total if not negativity_flag else None
    return DissipationEstimate(
        cells=cells,
        time_edges=time_edges,
        blocks=B,
        total=total,
        deficit=float(deficit),
        martingale_total=float(mart_total),
        identity_residual=float(identity_residual),
        worst_cell=worst,
        negativity_flag=bool(negativity_flag),
        tv_proxy=tv_proxy,
    )


# ---------------------------------------------------------------------------
# regularization functional
# ---------------------------------------------------------------------------

def regularization_functional(traj: Trajectory, epsilon: float, alpha: float, delta: float) -> float:
    """epsilon^2 times the time quadrature of ||rho_s||^2 in H^{1-alpha-delta}."""
    if not (0.0 < delta < alpha):
        raise ValueError(f"delta must lie in (0, alpha)=(0, {alpha}), got {delta}")
    s = 1.0 - alpha - delta
    sq = np.array([sobolev_norm(traj.snapshot_field(i), s) ** 2 for i in range(traj.n_snapshots)])
    if traj.n_snapshots == 1:
        return float(epsilon**2 * sq[0])
    return float(epsilon**2 * trapezoid(sq, traj.times))


# ---------------------------------------------------------------------------
# spectral transfer functional
# ---------------------------------------------------------------------------

def kernel_transfer(
    a: dict | tuple,
    psi,
    alpha: float,
    d: int = 2,
    weight: str = "continuum",
    basis: NoiseBasis | None = None,
    boundary: str = "closed",
) -> float:
    """Lattice double sum of the projected transfer kernel.

    sum_{xi != eta} w(xi-eta) |P^perp_{xi-eta} xi|^2 a(xi) (psi(eta)-psi(xi))

    ``a`` is either a dict mode-tuple -> energy or a pair (modes, values)
    with integer mode rows.  ``psi`` is a callable on wavevectors.  With
    ``weight="continuum"`` the kernel is (2 pi)^{-d/2} <v>^{-(d+2 alpha)};
    with ``weight="basis"`` it is the exact spectrum of the supplied basis,
    Z_K <v>^{-(d+2 alpha)} restricted to 0 < |v| <= K.  ``boundary`` picks
    what happens to transfer landing outside the lattice of ``a``:
    "closed" ignores it (the plain double sum), "absorbing" counts it with
    psi = 0 (energy leaving the resolved set).
    """
    if isinstance(a, dict):
        modes = np.array(list(a.keys()), dtype=np.float64)
        values = np.array([a[k] for k in a.keys()], dtype=np.float64)
    else:
        modes, values = a
        modes = np.asarray(modes, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
    if modes.shape[1] != d:
        raise ValueError("mode dimension mismatch")

    psi_vals = np.array([psi(m) for m in modes])
    n = modes.shape[0]
    diff = modes[None, :, :] - modes[:, None, :]  # eta - xi, shape (n, n, d)
    dist_sq = np.sum(diff * diff, axis=2)
    off = dist_sq > 0

    xi_sq = np.sum(modes * modes, axis=1)[:, None]
    # |P^perp_{eta-xi} xi|^2 = |xi|^2 - ((eta-xi).xi)^2/|eta-xi|^2
    inner = np.einsum("nmd,nd->nm", diff, modes)
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = np.where(off, xi_sq - inner**2 / np.where(off, dist_sq, 1.0), 0.0)

    if weight == "continuum":
        wgt = (2.0 * np.pi) ** (-d / 2.0) * (1.0 + dist_sq) ** (-(d / 2.0 + alpha))
        wgt = np.where(off, wgt, 0.0)
    elif weight == "basis":
        if basis is None:
            raise ValueError("weight='basis' needs a NoiseBasis")
        K = basis.spec.K
        wgt = basis.Z_K * (1.0 + dist_sq) ** (-(d / 2.0 + alpha))
        wgt = np.where(off & (dist_sq <= K * K), wgt, 0.0)
    else:
        raise ValueError(weight)

    psi_diff = psi_vals[None, :] - psi_vals[:, None]
    transfer = float(np.sum(wgt * proj * values[:, None] * psi_diff))

    if boundary == "absorbing":
        # add transfer toward eta outside the lattice of a, counted with
        # psi(eta) = 0 (energy leaving the resolved mode set)
        if weight != "basis":
            raise ValueError("absorbing boundary is defined for weight='basis'")
        mode_set = {tuple(int(round(c)) for c in m) for m in modes}
        # unique lattice vectors; the polarization sum is |P^perp_k xi|^2
        kv = np.unique(basis.kvecs, axis=0).astype(np.float64)
        wk = basis.Z_K * (1.0 + np.sum(kv * kv, axis=1)) ** (-(d / 2.0 + alpha))
        loss = 0.0
        for j in range(kv.shape[0]):
            k = kv[j]
            eta = modes + k[None, :]
            outside = np.array(
                [tuple(int(round(c)) for c in e) not in mode_set for e in eta]
            )
            if not np.any(outside):
                continue
            ksq = float(np.dot(k, k))
            inner_k = modes @ k
            proj_k = xi_sq[:, 0] - inner_k**2 / ksq
            loss += wk[j] * float(np.sum(proj_k[outside] * values[outside] * (-psi_vals[outside])))
        transfer += loss
    elif boundary != "closed":
        raise ValueError(boundary)
    return transfer


# ---------------------------------------------------------------------------
# path-space metrics
# ---------------------------------------------------------------------------

_DICT_CACHE: dict = {}


def weak_dictionary(grid: Grid, kmax: int = 2) -> list[np.ndarray]:
    """Unit-normalized trig probe functions for all modes |k| <= kmax."""
    key = (grid.d, grid.N, grid.L, kmax)
    cached = _DICT_CACHE.get(key)
    if cached is not None:
        return cached
    meshes = grid.meshes()
    scale = TWO_PI / grid.L
    vol = grid.volume
    probes = [np.full(grid.shape, 1.0 / np.sqrt(vol))]
    rng = np.arange(-kmax, kmax + 1)
    seen = set()
    grids = np.meshgrid(*([rng] * grid.d), indexing="ij")
    for kvec in np.stack([g.ravel() for g in grids], axis=1):
        if np.all(kvec == 0) or np.dot(kvec, kvec) > kmax * kmax:
            continue
        key_pm = tuple(kvec) if _first_nonzero_positive(kvec) else tuple(-kvec)
        if key_pm in seen:
            continue
        seen.add(key_pm)
        arg = sum(scale * k * x for k, x in zip(key_pm, meshes))
        norm = np.sqrt(2.0 / vol)
        probes.append(np.cos(arg) * norm)
        probes.append(np.sin(arg) * norm)
    _DICT_CACHE[key] = probes
    return probes


def _first_nonzero_positive(kvec) -> bool:
    for c in kvec:
        if c != 0:
            return c > 0
    return False


_HWEIGHT_CACHE: dict = {}


def _neg_sobolev_weights(grid: Grid, n_max: int) -> np.ndarray:
    key = (grid.d, grid.N, grid.L, n_max)
    w = _HWEIGHT_CACHE.get(key)
    if w is None:
        xi_sq = grid.xi_squared()
        w = np.stack([(1.0 + xi_sq) ** (-1.0 / n) for n in range(1, n_max + 1)])
        _HWEIGHT_CACHE[key] = w
    return w


def _match_times(traj_a: Trajectory, traj_b: Trajectory) -> tuple[list[tuple[int, int]], bool]:
    pairs = []
    resampled = False
    tb = traj_b.times
    for i, t in enumerate(traj_a.times):
        j = int(np.argmin(np.abs(tb - t)))
        if abs(tb[j] - t) > 1e-9 * max(1.0, abs(t)):
            resampled = True
        pairs.append((i, j))
    return pairs, resampled


def path_distance(traj_a: Trajectory, traj_b: Trajectory, metric: str = "d_scriptE",
                  p: float = 4.0, n_max: int = 8, dict_kmax: int = 2) -> float:
    """Distance between two trajectories.

    * ``d_scriptE``: sup_t L^2 + sup_t L^p of the difference (the strong
      uniform-in-time metric);
    * ``d_E``: truncated series sum_{n<=n_max} 2^{-n} (1 and sup_t H^{-1/n})
      plus a weak-topology probe term over a fixed low-mode dictionary.
    """
    if traj_a.grid != traj_b.grid:
        raise ValueError("path_distance requires identical grids")
    grid = traj_a.grid
    pairs, _ = _match_times(traj_a, traj_b)
    w = grid.cell_volume

    if metric == "d_scriptE":
        sup_l2 = 0.0
        sup_lp = 0.0
        for i, j in pairs:
            diff = traj_a.snapshots[i] - traj_b.snapshots[j]
            sup_l2 = max(sup_l2, float(np.sqrt(np.sum(diff**2) * w)))
            sup_lp = max(sup_lp, float((np.sum(np.abs(diff) ** p) * w) ** (1.0 / p)))
        return sup_l2 + sup_lp

    if metric != "d_E":
        raise ValueError(f"unknown metric {metric!r}")

    weights = _neg_sobolev_weights(grid, n_max)
    probes = weak_dictionary(grid, dict_kmax)
    c2 = (grid.cell_volume / grid.L ** (grid.d / 2.0)) ** 2
    sup_hs = np.zeros(n_max)
    sup_weak = 0.0
    for i, j in pairs:
        diff = traj_a.snapshots[i] - traj_b.snapshots[j]
        power = np.abs(np.fft.fftn(diff)) ** 2 * c2
        sums = np.sqrt(np.tensordot(weights, power, axes=grid.d))
        sup_hs = np.maximum(sup_hs, sums)
        weak = max(abs(float(np.sum(diff * phi)) * w) for phi in probes)
        sup_weak = max(sup_weak, weak)
    series = sum(2.0 ** (-(n + 1)) * min(1.0, sup_hs[n]) for n in range(n_max))
    return float(series + sup_weak)


# ---------------------------------------------------------------------------
# Fourier-layer balance probe (ensemble, with martingale control variate)
# ---------------------------------------------------------------------------

def spectral_balance_probe(
    rho0: ScalarField,
    basis: NoiseBasis,
    cfg: SolverConfig,
    psi,
    n_paths: int,
    batch: int = 256,
    n_records: int = 5,
) -> dict:
    """Measure d/dt sum_xi a_t(xi) psi(xi) against the transfer functional.

    Runs an Ito ensemble with b = 0, accumulating per path the increment of
    sum psi * |rho_hat|^2 minus its exact zero-mean martingale part (a
    control variate that collapses the Monte-Carlo variance), and compares
    with eps^2 times the time integral of the basis-exact transfer sum
    evaluated on the ensemble-mean layer energies.
    """
    grid = rho0.grid
    if abs(grid.L - TWO_PI) > 1e-12:
        raise ValueError("balance probe assumes L = 2 pi (integer mode lattice)")
    if cfg.scheme != "ito_euler":
        raise ValueError("balance probe is defined for the ito_euler scheme")
    from .fields import dealias

    rho0 = dealias(rho0)
    n_steps = cfg.n_steps
    rec_stride = max(1, n_steps // (n_records - 1))
    mask = grid.dealias_mask()
    mode_meshes = grid.mode_meshes()
    modes = np.stack([m[mask] for m in mode_meshes], axis=1).astype(np.float64)
    psi_grid = np.zeros(grid.shape)
    psi_flat = np.array([psi(m) for m in modes])
    psi_grid[mask] = psi_flat
    c2 = (grid.cell_volume / grid.L ** (grid.d / 2.0)) ** 2

    rec_steps: list[int] = []
    a_sums: list[np.ndarray] = []
    F_T = np.zeros(n_paths)
    mart = np.zeros(n_paths)
    sum_axes = tuple(range(1, grid.d + 1))

    F_0 = float(np.sum(psi_grid * np.abs(rho0.spectral) ** 2) * c2)

    done = 0
    while done < n_paths:
        bsize = min(batch, n_paths - done)
        ids = list(range(done, done + bsize))
        batch_slice = slice(done, done + bsize)
        local_records: dict[int, int] = {}

        def on_record(step, t, rho_hat, batch_slice=batch_slice, local_records=local_records):
            if step % rec_stride != 0 and step != n_steps:
                return
            if step not in local_records:
                if step not in rec_steps:
                    rec_steps.append(step)
                    a_sums.append(np.zeros(modes.shape[0]))
                local_records[step] = rec_steps.index(step)
            slot = local_records[step]
            power = np.abs(rho_hat) ** 2 * c2
            a_sums[slot] += power[:, mask].sum(axis=0)
            if step == n_steps:
                F_T[batch_slice] = np.sum(psi_grid * power, axis=sum_axes)

        def on_step(i, t, rho_pre, S_hat, coeffs, batch_slice=batch_slice):
            if S_hat is None:
                return
            cross = np.real(np.conj(rho_pre) * S_hat)
            mart[batch_slice] += -2.0 * cfg.epsilon * np.sum(psi_grid * cross, axis=sum_axes) * c2

        cfg_run = cfg
        evolve_batch(rho0, None, None, basis, cfg_run, ids, on_record=on_record, on_step=on_step)
        done += bsize

    order = np.argsort(rec_steps)
    rec_steps_arr = np.array(rec_steps)[order]
    abar = [a_sums[i] / n_paths for i in order]
    times = rec_steps_arr * cfg.dt

    transfers = np.array([
        kernel_transfer((modes, a), psi, basis.spec.alpha, d=grid.d,
                        weight="basis", basis=basis, boundary="absorbing")
        for a in abar
    ])
    rhs = cfg.epsilon**2 * float(trapezoid(transfers, times))

    lhs_paths = F_T - F_0 - mart
    lhs = float(np.mean(lhs_paths))
    se = float(np.std(lhs_paths, ddof=1) / np.sqrt(n_paths))
    return {
        "lhs": lhs,
        "lhs_se": se,
        "rhs": rhs,
        "rel_err": abs(lhs - rhs) / max(abs(rhs), 1e-300),
        "record_times": times,
        "transfers": transfers,
        "F_0": F_0,
    }
