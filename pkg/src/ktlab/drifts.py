"""Library of advecting velocity fields with controllable regularity.

Built-in kinds are divergence-free by construction (except ``constant`` with
nonzero mean, which is trivially divergence-free too, and user fields, which
are taken as-is).  Every synthesized drift carries quadrature metadata:
the W^{1,q} norm and the sup norm of its divergence.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .errors import InvalidFieldError
from .fields import (
    Grid,
    ScalarField,
    VectorField,
    gradient_spectral,
    load_vector,
    lp_norm,
)

TWO_PI = 2.0 * np.pi

trapezoid = getattr(np, "trapezoid", None) or np.trapz  # numpy<2 compat



# ---------------------------------------------------------------------------
# time modulation
# ---------------------------------------------------------------------------

def _modulation(time_dependence: str, schedule) -> Callable[[float], float]:
    if time_dependence == "static":
        return lambda t: 1.0
    if time_dependence != "modulated":
        raise ValueError(f"unknown time_dependence {time_dependence!r}")
    if isinstance(schedule, str):
        name = schedule
        if name == "constant":
            return lambda t: 1.0
        if name == "ramp":
            return lambda t: t
        if name == "half_sine":
            return lambda t: float(np.sin(np.pi * t))
        raise ValueError(f"unknown schedule {name!r}")
    pts = np.asarray(schedule, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("schedule must be a name or a list of [t, factor] pairs")
    return lambda t: float(np.interp(t, pts[:, 0], pts[:, 1]))


@dataclass
class DriftSpec:
    kind: str = "zero"
    amplitude: float = 1.0
    wavenumber: int = 1
    velocity: tuple | None = None  # constant kind
    q_target: float = 2.0  # rough kind
    spectral_slope: float | None = None
    seed: int = 0
    path: str | None = None  # user kind
    time_dependence: str = "static"
    schedule: object = None

    def __post_init__(self):
        known = {"zero", "constant", "shear", "cellular", "rough", "user"}
        if self.kind not in known:
            raise ValueError(f"unknown drift kind {self.kind!r}; known: {sorted(known)}")
        for name in ("amplitude", "q_target"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.kind == "rough" and self.q_target > 2.0:
            raise ValueError("rough drift requires q_target <= 2")
        if self.kind == "user" and not self.path:
            raise ValueError("user drift requires a snapshot path")


@dataclass
class Drift:
    """A (possibly time-modulated) velocity field bound to a grid."""

    spec: DriftSpec
    grid: Grid
    base: VectorField
    metadata: dict = dc_field(default_factory=dict)
    analytic: Callable[[np.ndarray], np.ndarray] | None = None  # points -> (npts, d)
    modulation: Callable[[float], float] = dc_field(default=lambda t: 1.0)

    def field_at(self, t: float) -> VectorField:
        m = self.modulation(t)
        if m == 1.0:
            return self.base
        return m * self.base

    def values_at(self, t: float) -> list[np.ndarray]:
        m = self.modulation(t)
        return [m * c.values for c in self.base.components]

    def evaluate_at(self, points: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Velocity at physical points: closed form when available."""
        m = self.modulation(t)
        if self.analytic is not None:
            return m * self.analytic(np.atleast_2d(points))
        return m * self.base.evaluate_at(points)

    def is_divergence_free(self, tol: float = 1e-10) -> bool:
        return self.base.max_spectral_divergence() <= tol

    def div_l1t_linf(self, T: float, n_quad: int = 64) -> float:
        """int_0^T ||div b_t||_inf dt for the modulated field."""
        d0 = self.metadata.get("div_linf", 0.0)
        ts = np.linspace(0.0, T, n_quad + 1)
        mods = np.abs([self.modulation(t) for t in ts])
        return float(d0 * trapezoid(mods, ts))


def _w1q_norm(v: VectorField, q: float) -> float:
    """Quadrature W^{1,q} norm: (sum_j ||b_j||_q^q + sum_ij ||d_i b_j||_q^q)^{1/q}."""
    if q == np.inf:
        total = max(lp_norm(c, np.inf) for c in v.components)
        for c in v.components:
            g = gradient_spectral(c)
            total = max(total, max(lp_norm(gc, np.inf) for gc in g.components))
        return total
    acc = 0.0
    for c in v.components:
        acc += lp_norm(c, q) ** q
        g = gradient_spectral(c)
        for gc in g.components:
            acc += lp_norm(gc, q) ** q
    return float(acc ** (1.0 / q))


def _metadata(v: VectorField, q: float) -> dict:
    div = v.divergence()
    return {
        "w1q_norm": _w1q_norm(v, q),
        "q": q,
        "div_linf": lp_norm(div, np.inf),
        "max_spectral_divergence": v.max_spectral_divergence(),
    }


def _rough_field(spec: DriftSpec, grid: Grid) -> VectorField:
    """Random divergence-free Fourier series with power-law coefficients."""
    d = grid.d
    beta = 1.0 + d / 2.0 - d / spec.q_target  # Sobolev proxy H^beta
    slope = spec.spectral_slope if spec.spectral_slope is not None else beta + d / 2.0
    rng = np.random.Generator(np.random.Philox(key=[spec.seed, 0x6B746C]))
    kmax = max(2, grid.N // 4)
    rngs = np.arange(-kmax, kmax + 1)
    meshes = np.meshgrid(*([rngs] * d), indexing="ij")
    kpts = np.stack([m.ravel() for m in meshes], axis=1)
    norm = np.linalg.norm(kpts, axis=1)
    keep = (norm > 0) & (norm <= kmax)
    kpts = kpts[keep]
    norm = norm[keep]
    amp = norm**(-slope)
    phases = rng.uniform(0.0, TWO_PI, size=kpts.shape[0])

    shape = grid.shape
    Nd = grid.N**d
    spec_arrays = [np.zeros(shape, dtype=np.complex128) for _ in range(d)]
    if d == 2:
        # b = rot(psi): b_hat = i (k2, -k1)/|k| * psi_hat-like amplitude
        for (kv, a, ph) in zip(kpts, amp, phases):
            unit = np.array([-kv[1], kv[0]]) / np.linalg.norm(kv)
            c = 0.5 * a * np.exp(1j * ph)
            for ax in range(2):
                spec_arrays[ax][tuple(np.mod(kv, grid.N))] += unit[ax] * c * Nd
                spec_arrays[ax][tuple(np.mod(-kv, grid.N))] += unit[ax] * np.conj(c) * Nd
    else:
        for (kv, a, ph) in zip(kpts, amp, phases):
            khat = kv / np.linalg.norm(kv)
            raw = rng.standard_normal(3)
            perp = raw - np.dot(raw, khat) * khat
            n = np.linalg.norm(perp)
            if n < 1e-12:
                continue
            unit = perp / n
            c = 0.5 * a * np.exp(1j * ph)
            for ax in range(3):
                spec_arrays[ax][tuple(np.mod(kv, grid.N))] += unit[ax] * c * Nd
                spec_arrays[ax][tuple(np.mod(-kv, grid.N))] += unit[ax] * np.conj(c) * Nd
    comps = [np.real(np.fft.ifftn(s)) for s in spec_arrays]
    scale = max(np.max(np.abs(c)) for c in comps)
    if scale > 0:
        comps = [spec.amplitude * c / scale for c in comps]
    return VectorField.from_arrays(grid, comps)


def synthesize_drift(spec: DriftSpec, grid: Grid) -> Drift:
    A = spec.amplitude
    m = spec.wavenumber
    scale = TWO_PI / grid.L
    analytic = None

    if spec.kind == "zero":
        base = VectorField.zero(grid)
        analytic = lambda pts: np.zeros_like(np.atleast_2d(pts), dtype=np.float64)
    elif spec.kind == "constant":
        vel = spec.velocity if spec.velocity is not None else (A,) + (0.0,) * (grid.d - 1)
        if len(vel) != grid.d:
            raise ValueError("constant velocity must have d components")
        vel_arr = np.asarray(vel, dtype=np.float64)
        base = VectorField.from_arrays(grid, [np.full(grid.shape, v) for v in vel_arr])
        analytic = lambda pts: np.broadcast_to(vel_arr, np.atleast_2d(pts).shape).copy()
    elif spec.kind == "shear":
        if grid.d < 2:
            raise ValueError("shear drift needs d >= 2")
        meshes = grid.meshes()
        arrays = [np.zeros(grid.shape) for _ in range(grid.d)]
        arrays[0] = A * np.sin(scale * m * meshes[1])
        base = VectorField.from_arrays(grid, arrays)

        def analytic(pts, A=A, m=m, scale=scale, d=grid.d):
            pts = np.atleast_2d(pts)
            out = np.zeros_like(pts, dtype=np.float64)
            out[:, 0] = A * np.sin(scale * m * pts[:, 1])
            return out
    elif spec.kind == "cellular":
        if grid.d != 2:
            raise ValueError("cellular drift is two-dimensional")
        meshes = grid.meshes()
        s0 = np.sin(scale * m * meshes[0])
        c0 = np.cos(scale * m * meshes[0])
        s1 = np.sin(scale * m * meshes[1])
        c1 = np.cos(scale * m * meshes[1])
        # stream function psi = (A/m) sin(m x1) sin(m x2); b = (-d2 psi, d1 psi)
        base = VectorField.from_arrays(grid, [-A * s0 * c1, A * c0 * s1])

        def analytic(pts, A=A, m=m, scale=scale):
            pts = np.atleast_2d(pts)
            out = np.empty_like(pts, dtype=np.float64)
            out[:, 0] = -A * np.sin(scale * m * pts[:, 0]) * np.cos(scale * m * pts[:, 1])
            out[:, 1] = A * np.cos(scale * m * pts[:, 0]) * np.sin(scale * m * pts[:, 1])
            return out
    elif spec.kind == "rough":
        base = _rough_field(spec, grid)
    elif spec.kind == "user":
        try:
            base, _ = load_vector(spec.path)
        except FileNotFoundError as exc:
            raise InvalidFieldError(f"user drift snapshot not found: {spec.path}") from exc
        if base.grid != grid:
            raise InvalidFieldError(
                f"user drift grid {base.grid} does not match requested grid {grid}"
            )
    else:  # pragma: no cover - guarded by DriftSpec
        raise ValueError(spec.kind)

    q = spec.q_target if spec.kind == "rough" else 2.0
    meta = _metadata(base, q)
    return Drift(
        spec=spec,
        grid=grid,
        base=base,
        metadata=meta,
        analytic=analytic,
        modulation=_modulation(spec.time_dependence, spec.schedule),
    )


def mollify(b: VectorField, delta: float) -> VectorField:
    """Gaussian spectral filter exp(-delta^2 |xi|^2 / 2) per component."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if delta == 0.0:
        return b
    xi_sq = b.grid.xi_squared()
    filt = np.exp(-0.5 * delta * delta * xi_sq)
    comps = tuple(
        ScalarField.from_spectral(b.grid, filt * c.spectral) for c in b.components
    )
    return VectorField(b.grid, comps)


def mollify_drift(drift: Drift, delta: float) -> Drift:
    """Mollified copy; closed-form evaluation is dropped unless delta == 0."""
    if delta == 0.0:
        return drift
    base = mollify(drift.base, delta)
    meta = _metadata(base, drift.metadata.get("q", 2.0))
    return Drift(
        spec=drift.spec,
        grid=drift.grid,
        base=base,
        metadata=meta,
        analytic=None,
        modulation=drift.modulation,
    )


# ---------------------------------------------------------------------------
# regime classifier
# ---------------------------------------------------------------------------

@dataclass
class RegimeReport:
    dl_unique: bool
    nonunique_weak: bool
    noise_wellposed: bool
    margins: dict
    unchecked: tuple = (
        "drift integrability side condition L^infty_t L^{(p-1)/p}_x",
        "div b in L^1_t L^infty_x cap L^infty_t H^theta_x",
    )


def check_regime(p: float, q: float, d: int, alpha: float) -> RegimeReport:
    """Classify (p, q, d, alpha) against the uniqueness / non-uniqueness /
    noise well-posedness inequalities, reporting the slack of each."""
    if not (0.0 < alpha < 0.5):
        raise ValueError(f"alpha must lie in (0, 1/2), got {alpha}")
    for name, val in (("p", p), ("q", q)):
        if not (val >= 1):
            raise ValueError(f"{name} must lie in [1, inf], got {val}")
    inv_p = 0.0 if np.isinf(p) else 1.0 / p
    inv_q = 0.0 if np.isinf(q) else 1.0 / q

    dl_margin = 1.0 - inv_p - inv_q
    nu_margin = (d - 1.0) / d * inv_p + inv_q - 1.0
    wp_lower = (q - d / (2.0 * (1.0 - alpha))) if not np.isinf(q) else np.inf
    wp_upper = 2.0 - q
    margins = {
        "dl_unique": dl_margin,
        "nonunique_weak": nu_margin,
        "noise_wellposed": float(min(wp_lower, wp_upper)),
    }
    return RegimeReport(
        dl_unique=dl_margin >= 0.0,
        nonunique_weak=nu_margin > 0.0,
        noise_wellposed=(wp_lower > 0.0) and (wp_upper >= 0.0),
        margins=margins,
    )
