"""Experiment drivers: zero-noise selection, Girsanov tilting, tail
probabilities, the control-cost rate function, the variational Laplace
estimator, and the dissipation tail check.

Controls live in the span of the noise basis modes.  A control is a
coefficient table over (half-lattice dictionary mode) x (time profile);
its cost is the exact Cameron-Martin norm of the truncated noise, realized
by the minimal coefficient split across the +-k twin modes.  The Girsanov
likelihood ratio uses the same representation, so tilted estimators are
unbiased by construction.  Ensembles run batched with one counter-based
stream per path; statistics land in per-path slots, making reductions
deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .characteristics import renormalized_reference
from .drifts import Drift
from .errors import KtlabError
from .fields import Grid, ScalarField
from .kernels import eval_trig_modes
from .noise import NoiseBasis
from .solver import SolverConfig, Trajectory, evolve, evolve_batch

TWO_PI = 2.0 * np.pi

trapezoid = getattr(np, "trapezoid", None) or np.trapz  # numpy<2 compat


PROFILES: dict[str, Callable[[np.ndarray, float], np.ndarray]] = {
    "constant": lambda t, T: np.ones_like(t),
    "linear": lambda t, T: t / T,
    "half_sine": lambda t, T: np.sin(np.pi * t / T),
    "bump": lambda t, T: _bump(2.0 * t / T - 1.0),
}


def _bump(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


# ---------------------------------------------------------------------------
# control dictionary
# ---------------------------------------------------------------------------

@dataclass
class ControlSpec:
    """Finite-dimensional control family inside the noise-mode span.

    Dictionary modes are the cosine/sine fields of half-lattice (k, pol)
    pairs.  Because the basis carries both k and -k (linearly dependent
    twins), a dictionary field u * sigma is realized by the minimal-cost
    split u/2 across the twins; the exact Cameron-Martin cost of the
    control is then int sum_j u_j(t)^2 / 2 dt.
    """

    basis: NoiseBasis
    T: float
    norm_budget: float  # admit theta iff 0.5 * ||g||^2_CM <= budget
    pair_indices: tuple[int, ...] = ()
    profiles: tuple[str, ...] = ("constant",)
    n_quad: int = 256

    def __post_init__(self):
        if not self.pair_indices:
            self.pair_indices = tuple(default_pairs(self.basis))
        if len(self.pair_indices) > 8:
            raise ValueError("control dictionary limited to 8 spatial mode pairs")
        if len(self.profiles) > 4:
            raise ValueError("control dictionary limited to 4 time profiles")
        for p in self.profiles:
            if p not in PROFILES:
                raise ValueError(f"unknown profile {p!r}; known: {sorted(PROFILES)}")
        # locate the -k twin of each selected pair and its polarization sign
        basis = self.basis
        index = {}
        for i in range(basis.n_pairs):
            index.setdefault(tuple(basis.kvecs[i]), []).append(i)
        twins = []
        signs = []
        for j in self.pair_indices:
            kneg = tuple(-basis.kvecs[j])
            cands = index.get(kneg, [])
            best, s = None, 0.0
            for t in cands:
                dot = float(np.dot(basis.evecs[j], basis.evecs[t]))
                if abs(abs(dot) - 1.0) < 1e-9:
                    best, s = t, np.sign(dot)
                    break
            if best is None:
                raise ValueError("basis lacks the -k twin of a dictionary pair")
            twins.append(best)
            signs.append(float(s))
        self.twin_indices = tuple(twins)
        self.twin_signs = tuple(signs)

    @property
    def n_dict(self) -> int:
        """Dictionary spatial modes: cosine and sine phase per selected pair."""
        return 2 * len(self.pair_indices)

    @property
    def n_theta(self) -> int:
        return self.n_dict * len(self.profiles)

    def profile_gram(self) -> np.ndarray:
        t = np.linspace(0.0, self.T, self.n_quad + 1)
        vals = np.stack([PROFILES[p](t, self.T) for p in self.profiles])
        G = np.zeros((len(self.profiles), len(self.profiles)))
        for a in range(len(self.profiles)):
            for b in range(len(self.profiles)):
                G[a, b] = trapezoid(vals[a] * vals[b], t)
        return G

    def cm_unit(self) -> float:
        """H^{d/2+alpha} squared norm per unit of squared CM cost: Z_K L^d."""
        return self.basis.Z_K * self.basis.spec.L**self.basis.spec.d


def default_pairs(basis: NoiseBasis, kmax: int = 2, max_pairs: int = 4) -> list[int]:
    """Lowest-|k| half-lattice pairs (first nonzero component positive)."""
    order = []
    for i in range(basis.n_pairs):
        k = basis.kvecs[i]
        first = next((c for c in k if c != 0), 0)
        if first <= 0:
            continue
        order.append((float(np.dot(k, k)), tuple(k), i))
    order.sort()
    picked = [i for (n2, _, i) in order if n2 <= kmax * kmax][:max_pairs]
    if not picked:
        picked = [order[0][2]]
    return picked


@dataclass
class Control:
    """theta[(mode, profile)] coefficients over the dictionary."""

    spec: ControlSpec
    theta: np.ndarray  # (n_dict, n_profiles)
    _fields_cache: dict = dc_field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(
            self.spec.n_dict, len(self.spec.profiles)
        )

    @classmethod
    def zero(cls, spec: ControlSpec) -> "Control":
        return cls(spec, np.zeros((spec.n_dict, len(spec.profiles))))

    @classmethod
    def from_flat(cls, spec: ControlSpec, flat: np.ndarray) -> "Control":
        return cls(spec, np.asarray(flat).reshape(spec.n_dict, len(spec.profiles)))

    @property
    def time_dependent(self) -> bool:
        return any(p != "constant" for p in self.spec.profiles)

    def coefficients_at(self, t: float) -> np.ndarray:
        """Per-dictionary-mode coefficients u_m(t)."""
        tau = np.array([PROFILES[p](np.array([t]), self.spec.T)[0] for p in self.spec.profiles])
        return self.theta @ tau

    def pair_coefficients(self, t: float) -> np.ndarray:
        """(n_pairs, 2) minimal-cost coefficient layout over the full basis.

        The dictionary field u * sigma_{k,cos} equals the split
        (u/2) sigma_{k,cos} + s (u/2) sigma_{-k,cos} (and the sign-flipped
        analogue for sine phases), which is the representation of least
        l^2 coefficient cost.
        """
        return self._split(self.coefficients_at(t))

    def _split(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros((self.spec.basis.n_pairs, 2))
        for j, pair in enumerate(self.spec.pair_indices):
            twin = self.spec.twin_indices[j]
            s = self.spec.twin_signs[j]
            uc, us = u[2 * j], u[2 * j + 1]
            out[pair, 0] += 0.5 * uc
            out[twin, 0] += 0.5 * s * uc
            out[pair, 1] += 0.5 * us
            out[twin, 1] += -0.5 * s * us
        return out

    def girsanov_support(self) -> list[int]:
        """Basis pair indices carrying nonzero tilt coefficients."""
        return sorted(set(self.spec.pair_indices) | set(self.spec.twin_indices))

    def cm_cost_squared(self) -> float:
        """Exact squared Cameron-Martin norm: int sum_m u_m(t)^2 / 2 dt."""
        G = self.spec.profile_gram()
        return 0.5 * float(np.einsum("mp,pq,mq->", self.theta, G, self.theta))

    def sobolev_cost_squared(self) -> float:
        """The same cost in H^{d/2+alpha} units (documented proportionality)."""
        return self.cm_unit_scale * self.cm_cost_squared()

    @property
    def cm_unit_scale(self) -> float:
        return self.spec.cm_unit()

    def is_admissible(self, slack: float = 1e-9) -> bool:
        return 0.5 * self.cm_cost_squared() <= self.spec.norm_budget * (1.0 + slack)

    def check_admissible(self):
        if not self.is_admissible():
            raise KtlabError(
                f"control cost {0.5 * self.cm_cost_squared():.4g} exceeds budget "
                f"{self.spec.norm_budget}"
            )

    # -- realizations ---------------------------------------------------
    def g_values(self, grid: Grid) -> Callable[[float], list[np.ndarray]]:
        """Grid realization g(t) as component arrays (cached per profile)."""
        key = (grid.d, grid.N, grid.L)
        cache = self._fields_cache.get(key)
        if cache is None:
            scatter = self.spec.basis.scatter(grid)
            per_profile = []
            for p_idx in range(len(self.spec.profiles)):
                coeffs = self._split(self.theta[:, p_idx])
                per_profile.append(scatter.assemble(coeffs))
            cache = per_profile
            self._fields_cache[key] = cache

        profiles = self.spec.profiles
        T = self.spec.T
        d = grid.d

        def values(t: float) -> list[np.ndarray]:
            taus = [PROFILES[p](np.array([t]), T)[0] for p in profiles]
            out = [None] * d
            for ax in range(d):
                acc = taus[0] * cache[0][ax]
                for p_idx in range(1, len(profiles)):
                    acc = acc + taus[p_idx] * cache[p_idx][ax]
                out[ax] = acc
            return out

        values.time_dependent = self.time_dependent
        return values

    def evaluate_at(self, points: np.ndarray, t: float) -> np.ndarray:
        """Exact trig evaluation of g(t) at scattered physical points."""
        cache = self._fields_cache.get("trig")
        if cache is None:
            basis = self.spec.basis
            pairs = list(self.spec.pair_indices)
            kv = basis.wavevectors()[pairs]
            base = basis.thetas[pairs][:, None] * basis.evecs[pairs]
            u_const = self.coefficients_at(0.0) if not self.time_dependent else None
            cache = (kv, base, u_const)
            self._fields_cache["trig"] = cache
        kv, base, u_const = cache
        u = u_const if u_const is not None else self.coefficients_at(t)
        cos_amps = base * u[0::2][:, None]
        sin_amps = base * u[1::2][:, None]
        return eval_trig_modes(points, kv, cos_amps, sin_amps)


# ---------------------------------------------------------------------------
# Girsanov tilting
# ---------------------------------------------------------------------------

def girsanov_log_ratio(control: Control, coeff_log: np.ndarray, dt: float, epsilon: float) -> dict:
    """Exact log likelihood ratio reattaching a tilted sample to the base law.

    log gamma = -(1/eps) sum_i <u(t_i), zeta_i> - 1/(2 eps^2) sum_i |u(t_i)|^2 dt
    with the same left-endpoint coefficients in both terms, so that
    E_tilted[exp(log gamma)] = 1 holds exactly for the discrete model.
    """
    n_steps = coeff_log.shape[0]
    sel = control.girsanov_support()
    lin = 0.0
    quad = 0.0
    for i in range(n_steps):
        c = control.pair_coefficients(i * dt)[sel]  # (n_sel, 2)
        z = coeff_log[i][sel]
        lin += float(np.sum(c * z))
        quad += float(np.sum(c * c)) * dt
    log_gamma = -lin / epsilon - 0.5 * quad / epsilon**2
    return {"log_gamma": log_gamma, "linear_term": lin, "quadratic_term": quad}


def girsanov_tilted_sampler(
    rho0: ScalarField,
    drift: Drift | None,
    control: Control,
    epsilon: float,
    basis: NoiseBasis,
    cfg: SolverConfig,
    path_index: int = 0,
) -> tuple[Trajectory, float]:
    """Evolve with drift b + g and return the exact log likelihood ratio."""
    control.check_admissible()
    kw = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    kw["epsilon"] = epsilon
    kw["keep_coefficient_log"] = True
    cfg = SolverConfig(**kw)
    grid = rho0.grid
    traj = evolve(rho0, drift, control.g_values(grid), basis, cfg, path_index=path_index)
    parts = girsanov_log_ratio(control, traj.coeff_log, cfg.dt, epsilon)
    traj.diagnostics["girsanov"] = parts
    return traj, parts["log_gamma"]


# ---------------------------------------------------------------------------
# batched statistics accumulators
# ---------------------------------------------------------------------------

class SupDistanceStat:
    """Running sup-in-time distance of each path from a reference trajectory.

    metric "h-1": sup_t H^{-1} norm of the difference;
    metric "l2": sup_t L^2; metric "d_scriptE": sup_t L^2 + sup_t L^p.
    """

    def __init__(self, ref: Trajectory, metric: str = "h-1", p: float = 4.0):
        self.ref = ref
        self.metric = metric
        self.p = p

    def start(self, grid: Grid, n_paths: int):
        self.grid = grid
        self.c2 = (grid.cell_volume / grid.L ** (grid.d / 2.0)) ** 2
        self.w = grid.cell_volume
        if self.metric == "h-1":
            self.weights = (1.0 + grid.xi_squared()) ** (-1.0)
        self.sup1 = np.zeros(n_paths)
        self.sup2 = np.zeros(n_paths)
        self.ref_step = np.rint(self.ref.times / self.ref.config.dt).astype(int)
        self.axes = tuple(range(1, grid.d + 1))
        self.ref_spectral = {}

    def _ref_index(self, step: int) -> int | None:
        hits = np.where(self.ref_step == step)[0]
        return int(hits[0]) if hits.size else None

    def on_record(self, step: int, t: float, rho_hat: np.ndarray, sl: slice):
        ri = self._ref_index(step)
        if ri is None:
            return
        if ri not in self.ref_spectral:
            self.ref_spectral[ri] = np.fft.fftn(self.ref.snapshots[ri])
        diff_hat = rho_hat - self.ref_spectral[ri]
        if self.metric == "h-1":
            val = np.sqrt(np.sum(self.weights * np.abs(diff_hat) ** 2, axis=self.axes) * self.c2)
            self.sup1[sl] = np.maximum(self.sup1[sl], val)
        else:
            diff = np.real(np.fft.ifftn(diff_hat, axes=self.axes))
            l2 = np.sqrt(np.sum(diff**2, axis=self.axes) * self.w)
            self.sup1[sl] = np.maximum(self.sup1[sl], l2)
            if self.metric == "d_scriptE":
                lp = (np.sum(np.abs(diff) ** self.p, axis=self.axes) * self.w) ** (1.0 / self.p)
                self.sup2[sl] = np.maximum(self.sup2[sl], lp)

    def values(self) -> np.ndarray:
        if self.metric == "d_scriptE":
            return self.sup1 + self.sup2
        return self.sup1


class DEMetricStat:
    """Running d_E metric of each path from a reference trajectory."""

    def __init__(self, ref: Trajectory, n_max: int = 8, dict_kmax: int = 2):
        self.ref = ref
        self.n_max = n_max
        self.dict_kmax = dict_kmax

    def start(self, grid: Grid, n_paths: int):
        from .diagnostics import _neg_sobolev_weights, weak_dictionary

        self.grid = grid
        self.c2 = (grid.cell_volume / grid.L ** (grid.d / 2.0)) ** 2
        self.w = grid.cell_volume
        self.weights = _neg_sobolev_weights(grid, self.n_max)
        self.probes = weak_dictionary(grid, self.dict_kmax)
        self.sup_hs = np.zeros((n_paths, self.n_max))
        self.sup_weak = np.zeros(n_paths)
        self.ref_step = np.rint(self.ref.times / self.ref.config.dt).astype(int)
        self.axes = tuple(range(1, grid.d + 1))
        self.ref_spectral = {}

    def on_record(self, step, t, rho_hat, sl):
        hits = np.where(self.ref_step == step)[0]
        if not hits.size:
            return
        ri = int(hits[0])
        if ri not in self.ref_spectral:
            self.ref_spectral[ri] = np.fft.fftn(self.ref.snapshots[ri])
        diff_hat = rho_hat - self.ref_spectral[ri]
        power = np.abs(diff_hat) ** 2 * self.c2
        hs = np.sqrt(np.tensordot(power, self.weights, axes=(self.axes, tuple(range(1, self.grid.d + 1)))))
        self.sup_hs[sl] = np.maximum(self.sup_hs[sl], hs)
        diff = np.real(np.fft.ifftn(diff_hat, axes=self.axes))
        weak = np.zeros(diff.shape[0])
        for phi in self.probes:
            weak = np.maximum(weak, np.abs(np.sum(diff * phi, axis=self.axes) * self.w))
        self.sup_weak[sl] = np.maximum(self.sup_weak[sl], weak)

    def values(self) -> np.ndarray:
        series = np.sum(
            [2.0 ** (-(n + 1)) * np.minimum(1.0, self.sup_hs[:, n]) for n in range(self.n_max)],
            axis=0,
        )
        return series + self.sup_weak


class SobolevQuadratureStat:
    """Per-path running time quadrature of ||rho_t||_{H^s}^2 (trapezoid)."""

    def __init__(self, s: float):
        self.s = s

    def start(self, grid: Grid, n_paths: int):
        self.grid = grid
        self.weights = (1.0 + grid.xi_squared()) ** self.s
        self.c2 = (grid.cell_volume / grid.L ** (grid.d / 2.0)) ** 2
        self.axes = tuple(range(1, grid.d + 1))
        self.integral = np.zeros(n_paths)
        self.prev_t = np.full(n_paths, -1.0)
        self.prev_vals = np.zeros(n_paths)

    def on_record(self, step, t, rho_hat, sl):
        vals = np.sum(self.weights * np.abs(rho_hat) ** 2, axis=self.axes) * self.c2
        fresh = self.prev_t[sl] >= 0.0
        dt_arr = t - self.prev_t[sl]
        add = np.where(fresh, 0.5 * dt_arr * (vals + self.prev_vals[sl]), 0.0)
        self.integral[sl] += add
        self.prev_t[sl] = t
        self.prev_vals[sl] = vals

    def values(self) -> np.ndarray:
        return self.integral


class FinalEnergyStat:
    """Terminal squared L^2 norm per path."""

    def start(self, grid: Grid, n_paths: int):
        self.grid = grid
        self.final = np.zeros(n_paths)
        self.axes = tuple(range(1, grid.d + 1))
        self.n_steps = None

    def on_record(self, step, t, rho_hat, sl):
        norm = self.grid.cell_volume / self.grid.N**self.grid.d
        self.final[sl] = np.sum(np.abs(rho_hat) ** 2, axis=self.axes) * norm

    def values(self) -> np.ndarray:
        return self.final


def run_ensemble(
    rho0: ScalarField,
    drift: Drift | None,
    basis: NoiseBasis | None,
    cfg: SolverConfig,
    n_paths: int,
    stats: Sequence,
    tilt: Control | None = None,
    batch: int = 64,
    path_offset: int = 0,
    threads: int = 1,
) -> np.ndarray | None:
    """Drive a batched ensemble, feeding record callbacks to statistics.

    Returns per-path Girsanov log-ratios when tilted, else None.  Path i
    uses the stream (cfg.seed, path_offset + i); statistics land in
    per-path slots, so reductions are deterministic regardless of batching
    or the worker-pool size.
    """
    grid = rho0.grid
    for st in stats:
        st.start(grid, n_paths)
    g_values = tilt.g_values(grid) if tilt is not None else None
    pairs: list[int] = []
    u_table: dict[int, np.ndarray] = {}
    log_lin = np.zeros(n_paths)
    quad = 0.0
    if tilt is not None:
        tilt.check_admissible()
        pairs = tilt.girsanov_support()
        for i in range(cfg.n_steps):
            u = tilt.pair_coefficients(i * cfg.dt)[pairs]
            u_table[i] = u
            quad += float(np.sum(u * u)) * cfg.dt

    jobs = []
    done = 0
    while done < n_paths:
        bsize = min(batch, n_paths - done)
        jobs.append((slice(done, done + bsize),
                     [path_offset + j for j in range(done, done + bsize)]))
        done += bsize

    def work(job):
        sl, ids = job

        def on_record(step, t, rho_hat, sl=sl):
            for st in stats:
                st.on_record(step, t, rho_hat, sl)

        on_step = None
        if tilt is not None:

            def on_step(i, t, rho_pre, S_hat, coeffs, sl=sl):
                if coeffs is None:
                    return
                z = coeffs[:, pairs, :]
                log_lin[sl] += np.sum(u_table[i][None, :, :] * z, axis=(1, 2))

        evolve_batch(rho0, drift, g_values, basis, cfg, ids, on_record=on_record, on_step=on_step)

    if threads > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, jobs))
    else:
        for job in jobs:
            work(job)

    if tilt is not None:
        eps = cfg.epsilon
        return -log_lin / eps - 0.5 * quad / eps**2
    return None


# make controls usable directly as point evaluators for characteristics
Control.__call__ = Control.evaluate_at


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    metric: str
    M: int
    rows: list  # per-epsilon dicts: epsilon, median, q25, q75
    monotone: bool
    final_over_initial: float

    def medians(self) -> np.ndarray:
        return np.array([r["median"] for r in self.rows])


@dataclass
class TailEstimate:
    rows: list  # per-epsilon dicts
    M: int
    estimator: str
    delta: float | None = None

    def p_hats(self) -> np.ndarray:
        return np.array([r["p_hat"] for r in self.rows])

    def eps2_log_p(self) -> np.ndarray:
        return np.array([r["eps2_log_p"] for r in self.rows])


@dataclass
class RateFunctionReport:
    value: float
    control: "Control"
    residual: float
    converged: bool
    n_evaluations: int
    value_sobolev_units: float
    baseline_distance: float
    flags: list


@dataclass
class VariationalReport:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    per_candidate: list
    n_effective: float
    flags: list


# ---------------------------------------------------------------------------
# zero-noise selection study
# ---------------------------------------------------------------------------

def frozen_reference(rho0: ScalarField, times: np.ndarray, cfg: SolverConfig) -> Trajectory:
    """Constant-in-time reference (the renormalized solution for b = 0)."""
    snaps = np.broadcast_to(rho0.values, (len(times), *rho0.grid.shape)).copy()
    return Trajectory(grid=rho0.grid, config=cfg, times=np.asarray(times, dtype=float),
                      snapshots=snaps, origin="characteristics")


def _record_times(cfg: SolverConfig) -> np.ndarray:
    n = cfg.n_steps
    idx = sorted(set(range(0, n + 1, cfg.record_every)) | {n})
    return np.array(idx) * cfg.dt


def zero_noise_study(
    rho0: ScalarField,
    drift: Drift | None,
    basis: NoiseBasis,
    eps_grid: Sequence[float],
    M: int,
    metric: str,
    cfg: SolverConfig,
    ref: Trajectory | None = None,
    ode_dt: float | None = None,
    batch: int = 64,
) -> ConvergenceReport:
    """Distance distributions to the renormalized reference along an
    epsilon sweep; flags whether the medians decrease monotonically."""
    eps_grid = list(eps_grid)
    if any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError("eps_grid must be strictly decreasing")
    times = _record_times(cfg)
    if ref is None:
        if drift is None or drift.spec.kind == "zero":
            ref = frozen_reference(rho0, times, cfg)
        else:
            ref, _ = renormalized_reference(
                rho0, drift, mollify_schedule=(0.0,),
                ode_dt=ode_dt or cfg.dt, record_times=times,
            )

    rows = []
    for i, eps in enumerate(eps_grid):
        kw = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
        kw["epsilon"] = eps
        kw["keep_coefficient_log"] = False
        cfg_eps = SolverConfig(**kw)
        if metric == "d_E":
            stat = DEMetricStat(ref)
        elif metric in ("d_scriptE", "h-1", "l2"):
            stat = SupDistanceStat(ref, metric=metric)
        else:
            raise ValueError(f"unknown metric {metric!r}")
        run_ensemble(rho0, drift, basis, cfg_eps, M, [stat], batch=batch, path_offset=i * M)
        vals = stat.values()
        rows.append({
            "epsilon": eps,
            "median": float(np.median(vals)),
            "q25": float(np.quantile(vals, 0.25)),
            "q75": float(np.quantile(vals, 0.75)),
            "M": M,
        })
    medians = [r["median"] for r in rows]
    monotone = all(b < a for a, b in zip(medians, medians[1:]))
    final_over_initial = medians[-1] / medians[0] if medians[0] > 0 else 0.0
    return ConvergenceReport(metric=metric, M=M, rows=rows, monotone=monotone,
                             final_over_initial=final_over_initial)


# ---------------------------------------------------------------------------
# tail probabilities
# ---------------------------------------------------------------------------

@dataclass
class DeviationEvent:
    """Event { sup-in-time distance from the reference >= threshold }."""

    ref: Trajectory
    threshold: float
    metric: str = "h-1"

    def make_stat(self) -> SupDistanceStat:
        return SupDistanceStat(self.ref, metric=self.metric)


def ldp_tail_estimate(
    rho0: ScalarField,
    drift: Drift | None,
    basis: NoiseBasis,
    cfg: SolverConfig,
    event: DeviationEvent,
    eps_grid: Sequence[float],
    M: int,
    tilt: Control | None = None,
    batch: int = 64,
    path_offset: int = 10_000,
) -> TailEstimate:
    """Per-epsilon event probabilities, naive or self-normalized tilted."""
    rows = []
    for i, eps in enumerate(eps_grid):
        kw = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
        kw["epsilon"] = eps
        kw["keep_coefficient_log"] = False
        cfg_eps = SolverConfig(**kw)
        stat = event.make_stat()
        logw = run_ensemble(
            rho0, drift, basis, cfg_eps, M, [stat], tilt=tilt,
            batch=batch, path_offset=path_offset + i * M,
        )
        indicator = (stat.values() >= event.threshold).astype(float)
        flags = []
        if tilt is None:
            hits = int(indicator.sum())
            p_hat = hits / M
            stderr = float(np.sqrt(max(p_hat * (1 - p_hat), 0.0) / M))
            n_eff = float(M)
            if hits == 0:
                flags.append("zero_hits_floor")
                flags.append("use_tilt")
            estimator = "naive"
        else:
            w = np.exp(logw - np.max(logw))
            wsum = float(np.sum(w))
            p_hat = float(np.sum(w * indicator) / wsum)
            hits = int(indicator.sum())
            resid = w * (indicator - p_hat)
            stderr = float(np.sqrt(np.sum(resid**2)) / wsum)
            n_eff = float(wsum**2 / np.sum(w**2))
            if n_eff < 10:
                flags.append("low_effective_sample_size")
            if hits == 0:
                flags.append("zero_hits_floor")
            estimator = "tilted"
        if p_hat > 0:
            e2lp = eps**2 * float(np.log(p_hat))
            e2lp_err = eps**2 * stderr / p_hat
        else:
            e2lp = float("nan")
            e2lp_err = float("nan")
        rows.append({
            "epsilon": eps, "p_hat": p_hat, "stderr": stderr,
            "eps2_log_p": e2lp, "eps2_log_p_err": e2lp_err,
            "n_eff": n_eff, "n_hits": hits, "estimator": estimator,
            "p95_bound": 3.0 / M if hits == 0 else None,
            "flags": flags, "M": M,
        })
    return TailEstimate(rows=rows, M=M, estimator="tilted" if tilt is not None else "naive",
                        delta=event.threshold)


# ---------------------------------------------------------------------------
# rate function by dictionary optimization
# ---------------------------------------------------------------------------

def rate_function_eval(
    target: Trajectory,
    rho0: ScalarField,
    drift: Drift | None,
    control_spec: ControlSpec,
    penalty: float | None = None,
    maxiter: int = 400,
    n_starts: int = 2,
    seed: int = 0,
    residual_tol: float = 5e-3,
    ode_dt: float = 2e-3,
) -> RateFunctionReport:
    """Minimize 0.5 ||g(theta)||^2_CM + penalty * d(rho^{g(theta)}, target)^2.

    The zero control is always evaluated first, so the report value is 0
    exactly whenever the target is the uncontrolled renormalized solution.
    """
    from .diagnostics import path_distance

    times = np.asarray(target.times, dtype=float)
    evals = {"n": 0}

    def solve(control: Control) -> Trajectory:
        evals["n"] += 1
        traj, _ = renormalized_reference(
            rho0, drift, g_eval=control if np.any(control.theta) else None,
            mollify_schedule=(0.0,), ode_dt=ode_dt, record_times=times,
        )
        return traj

    def dist(control: Control) -> float:
        return path_distance(solve(control), target, metric="d_scriptE")

    zero = Control.zero(control_spec)
    d0 = dist(zero)
    if d0 <= residual_tol:
        return RateFunctionReport(
            value=0.0, control=zero, residual=d0, converged=True,
            n_evaluations=evals["n"], value_sobolev_units=0.0,
            baseline_distance=d0, flags=["zero_control_attains"],
        )

    lam = penalty if penalty is not None else 50.0 / d0**2

    def objective_for(lam_val):
        def objective(flat: np.ndarray) -> float:
            c = Control.from_flat(control_spec, flat)
            return 0.5 * c.cm_cost_squared() + lam_val * dist(c) ** 2

        return objective

    rng = np.random.Generator(np.random.Philox(key=[seed, 0x52465645]))
    scale = np.sqrt(2.0 * control_spec.norm_budget / control_spec.n_theta)
    starts = [np.zeros(control_spec.n_theta)]
    for _ in range(max(0, n_starts - 1)):
        starts.append(rng.normal(0.0, 0.3 * scale, size=control_spec.n_theta))

    objective = objective_for(lam)
    best_x = None
    best_fun = np.inf
    converged = False
    for x0 in starts:
        res = minimize(
            objective, x0, method="Powell",
            options={"maxiter": maxiter, "xtol": 2e-4, "ftol": 1e-8},
        )
        if res.fun < best_fun:
            best_x, best_fun = res.x, float(res.fun)
            converged = bool(res.success)
    # penalty-boost polish: drive the residual down from the best point;
    # keep the polished control when it tightens the residual without
    # raising the composite objective
    res = minimize(
        objective_for(10.0 * lam), best_x, method="Powell",
        options={"maxiter": maxiter, "xtol": 5e-5, "ftol": 1e-9},
    )
    if dist(Control.from_flat(control_spec, res.x)) <= dist(Control.from_flat(control_spec, best_x)):
        best_x = res.x
        converged = converged or bool(res.success)

    g_star = Control.from_flat(control_spec, best_x)
    residual = dist(g_star)
    value = 0.5 * g_star.cm_cost_squared()
    flags = []
    if not converged:
        flags.append("optimizer_not_converged_best_found")
    if residual > residual_tol:
        flags.append("residual_above_tolerance")
    return RateFunctionReport(
        value=float(value), control=g_star, residual=float(residual),
        converged=converged, n_evaluations=evals["n"],
        value_sobolev_units=float(0.5 * g_star.sobolev_cost_squared()),
        baseline_distance=float(d0), flags=flags,
    )


# ---------------------------------------------------------------------------
# variational Laplace estimator
# ---------------------------------------------------------------------------

@dataclass
class PathFunctional:
    """Bounded functional of a trajectory, batched-evaluable.

    kind "constant": h = value.  kind "capped_distance":
    h = min(cap, scale * sup-distance from ref in the chosen metric), with
    cap stored in ``value``.
    """

    kind: str
    value: float = 0.0
    ref: Trajectory | None = None
    metric: str = "d_scriptE"
    scale: float = 1.0

    def sup_bound(self) -> float:
        return abs(self.value) if self.kind == "constant" else self.value

    def make_stat(self):
        if self.kind == "constant":
            return None
        return SupDistanceStat(self.ref, metric=self.metric)

    def finalize(self, stat, n_paths: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n_paths, self.value)
        return np.minimum(self.value, self.scale * stat.values())


def variational_laplace(
    h: PathFunctional,
    rho0: ScalarField,
    drift: Drift | None,
    basis: NoiseBasis,
    cfg: SolverConfig,
    control_spec: ControlSpec,
    M: int,
    candidates: Sequence[Control] | None = None,
    batch: int = 64,
    path_offset: int = 50_000,
) -> VariationalReport:
    """Two-sided check of the variational representation.

    LHS: -eps^2 log E[exp(-h/eps^2)] over untilted paths (log-sum-exp).
    RHS: min over dictionary candidates of 0.5 ||g||^2_CM + E[h(rho^{eps,g})],
    the controlled expectation evaluated by direct simulation with drift
    b + g.  The dictionary restricts the infimum, so RHS >= LHS up to
    Monte-Carlo error.
    """
    if control_spec.norm_budget < 2.0 * h.sup_bound():
        raise KtlabError(
            f"budget {control_spec.norm_budget} must exceed 2 sup|h| = {2.0 * h.sup_bound()}"
        )
    eps = cfg.epsilon
    flags: list[str] = []

    stat = h.make_stat()
    run_ensemble(rho0, drift, basis, cfg, M, [stat] if stat else [], batch=batch,
                 path_offset=path_offset)
    h_vals = h.finalize(stat, M)
    scaled = -h_vals / eps**2
    lse = float(logsumexp(scaled) - np.log(M))
    lhs = -eps**2 * lse
    X = np.exp(scaled - np.max(scaled))
    n_eff = float(np.sum(X) ** 2 / np.sum(X**2))
    if n_eff < 10:
        flags.append("mc_degenerate_effective_sample_size")
    lhs_se = eps**2 * float(np.std(X, ddof=1) / (np.mean(X) * np.sqrt(M)))

    if candidates is None:
        candidates = []
    cands = [Control.zero(control_spec)] + [c for c in candidates if np.any(c.theta)]

    per_candidate = []
    rhs = np.inf
    rhs_se = 0.0
    for j, cand in enumerate(cands):
        stat_c = h.make_stat()
        run_ensemble(
            rho0, drift, basis, cfg, M, [stat_c] if stat_c else [], tilt=cand if np.any(cand.theta) else None,
            batch=batch, path_offset=path_offset + (j + 1) * M,
        )
        hv = h.finalize(stat_c, M)
        cost = 0.5 * cand.cm_cost_squared()
        mean_h = float(np.mean(hv))
        se = float(np.std(hv, ddof=1) / np.sqrt(M)) if M > 1 else 0.0
        val = cost + mean_h
        per_candidate.append({"cost": cost, "mean_h": mean_h, "se": se, "value": val})
        if val < rhs:
            rhs = val
            rhs_se = se
    return VariationalReport(
        lhs=float(lhs), lhs_se=float(lhs_se), rhs=float(rhs), rhs_se=float(rhs_se),
        per_candidate=per_candidate, n_effective=n_eff, flags=flags,
    )


# ---------------------------------------------------------------------------
# dissipation tail check
# ---------------------------------------------------------------------------

def dissipation_ldp_check(
    rho0: ScalarField,
    drift: Drift | None,
    basis: NoiseBasis,
    cfg: SolverConfig,
    eps_grid: Sequence[float],
    M: int,
    delta: float,
    batch: int = 64,
    path_offset: int = 90_000,
) -> TailEstimate:
    """P{ total dissipation >= delta } along a decreasing epsilon grid.

    The per-path total is the L^2 deficit of the Ito scheme (the global
    energy identity; the global martingale term vanishes for
    divergence-free drift).  Zero-hit rows are flagged as the estimator
    floor rather than claimed to be exactly zero, except when delta exceeds
    the a-priori bound ||rho_0||^2, which makes the event impossible.
    """
    if drift is not None and drift.metadata.get("div_linf", 0.0) > 1e-8:
        raise ValueError("dissipation check assumes div b = 0")
    from .fields import lp_norm

    l2sq0 = lp_norm(rho0, 2) ** 2
    impossible = delta > l2sq0
    rows = []
    for i, eps in enumerate(eps_grid):
        kw = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
        kw["epsilon"] = eps
        kw["scheme"] = "ito_euler"
        kw["keep_coefficient_log"] = False
        cfg_eps = SolverConfig(**kw)
        stat = FinalEnergyStat()
        run_ensemble(rho0, drift, basis, cfg_eps, M, [stat], batch=batch,
                     path_offset=path_offset + i * M)
        totals = l2sq0 - stat.values()
        hits = int(np.sum(totals >= delta))
        p_hat = hits / M
        stderr = float(np.sqrt(max(p_hat * (1 - p_hat), 0.0) / M))
        flags = []
        if impossible:
            flags.append("impossible_event_tv_bound")
        if hits == 0:
            flags.append("zero_hits_floor")
            flags.append("consistent_with_infinite_rate_off_zero")
        rows.append({
            "epsilon": eps, "p_hat": p_hat, "stderr": stderr,
            "eps2_log_p": eps**2 * float(np.log(p_hat)) if p_hat > 0 else float("nan"),
            "eps2_log_p_err": eps**2 * stderr / p_hat if p_hat > 0 else float("nan"),
            "n_eff": float(M), "n_hits": hits, "estimator": "naive",
            "p95_bound": 3.0 / M if hits == 0 else None,
            "flags": flags, "M": M,
            "max_total": float(np.max(totals)), "mean_total": float(np.mean(totals)),
        })
    return TailEstimate(rows=rows, M=M, estimator="naive", delta=delta)
