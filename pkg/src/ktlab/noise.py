"""Divergence-free, space-homogeneous Kraichnan-type noise on the torus.

The basis consists of real cosine/sine Fourier modes: for every integer
lattice vector k with 0 < |k| <= K and each polarization e ⟂ k there are two
modes theta_k * e * cos(k.x) and theta_k * e * sin(k.x).  The amplitudes
theta_k = sqrt(Z_K) <k>^{-(d/2+alpha)} follow the prescribed power-law
spectrum, and Z_K is renormalized at each truncation K so that

    Q(0) = sum_{k,pol} theta_k^2 e_k (x) e_k = 2 I_d

holds exactly for the truncated sum.  Brownian coefficients are real and
i.i.d., one per mode, so every sampled increment is divergence-free by
construction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NonSolenoidalError
from .fields import Grid, VectorField, vector_sobolev_norm
from .kernels import eval_trig_modes

TWO_PI = 2.0 * np.pi

DIVERGENCE_TOL = 1e-8

trapezoid = getattr(np, "trapezoid", None) or np.trapz  # numpy<2 compat
  # relative tolerance for user-supplied fields


@dataclass(frozen=True)
class NoiseSpec:
    d: int = 2
    alpha: float = 0.25
    K: int = 8
    L: float = TWO_PI

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError("noise requires d in {2,3}; no divergence-free fields in 1-D")
        if not (0.0 < self.alpha < 0.5):
            raise ValueError(f"alpha must lie in (0, 1/2), got {self.alpha}")
        if self.K < 1:
            raise ValueError("K must be >= 1")

    @property
    def sobolev_order(self) -> float:
        """Order of the Cameron-Martin space, d/2 + alpha."""
        return self.d / 2.0 + self.alpha


def _lattice_vectors(d: int, K: int) -> np.ndarray:
    rng = np.arange(-K, K + 1)
    meshes = np.meshgrid(*([rng] * d), indexing="ij")
    pts = np.stack([m.ravel() for m in meshes], axis=1)
    norm2 = np.sum(pts * pts, axis=1)
    keep = (norm2 > 0) & (norm2 <= K * K)
    return pts[keep].astype(np.int64)


def _polarizations(kvec: np.ndarray) -> list[np.ndarray]:
    """Deterministic orthonormal polarizations with k.e = 0 exactly.

    d=2: e = k_perp / |k|.  d=3: Gram-Schmidt of the smallest-index axis not
    parallel to k, carried out on integer vectors (a |k|^2 - k (k.a) and
    k x a) so the orthogonality holds in exact floating-point arithmetic.
    """
    d = kvec.shape[0]
    if d == 2:
        norm = np.linalg.norm(kvec)
        return [np.array([-kvec[1], kvec[0]]) / norm]
    k = np.asarray(kvec, dtype=np.float64)
    ksq = float(np.dot(k, k))
    for axis in range(3):
        a = np.zeros(3)
        a[axis] = 1.0
        raw1 = a * ksq - k * float(np.dot(k, a))  # integer components
        n1 = np.linalg.norm(raw1)
        if n1 > 1e-12:
            break
    raw2 = np.cross(k, a)  # integer components, k.raw2 = 0 exactly
    return [raw1 / n1, raw2 / np.linalg.norm(raw2)]


@dataclass
class NoiseBasis:
    """Mode table for the truncated noise; immutable and shareable."""

    spec: NoiseSpec
    kvecs: np.ndarray  # (n_pairs, d) integer lattice vectors
    evecs: np.ndarray  # (n_pairs, d) unit polarizations, k.e = 0 exactly
    thetas: np.ndarray  # (n_pairs,)
    Z_K: float
    _scatter_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_pairs(self) -> int:
        return self.kvecs.shape[0]

    @property
    def n_modes(self) -> int:
        """Total Brownian coefficients: cosine and sine phase per (k, pol) pair."""
        return 2 * self.n_pairs

    def wavevectors(self) -> np.ndarray:
        """Physical wavevectors (2*pi/L) * k."""
        return (TWO_PI / self.spec.L) * self.kvecs.astype(np.float64)

    def mode_list(self) -> list[dict]:
        out = []
        for i in range(self.n_pairs):
            for phase in ("cos", "sin"):
                out.append(
                    {
                        "k": self.kvecs[i].tolist(),
                        "e": self.evecs[i].tolist(),
                        "theta": float(self.thetas[i]),
                        "phase": phase,
                    }
                )
        return out

    def to_manifest(self) -> dict:
        return {
            "d": self.spec.d,
            "alpha": self.spec.alpha,
            "K": self.spec.K,
            "L": self.spec.L,
            "Z_K": self.Z_K,
            "n_modes": self.n_modes,
            "modes": self.mode_list(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_manifest(), indent=1, sort_keys=True)

    def scatter(self, grid: Grid) -> "SpectralScatter":
        key = (grid.d, grid.N, grid.L)
        sc = self._scatter_cache.get(key)
        if sc is None:
            sc = SpectralScatter(self, grid)
            self._scatter_cache[key] = sc
        return sc


def build_basis(spec: NoiseSpec) -> NoiseBasis:
    kvecs_all = _lattice_vectors(spec.d, spec.K)
    kv_list, ev_list, w_list = [], [], []
    for kvec in kvecs_all:
        weight = (1.0 + float(np.dot(kvec, kvec))) ** (-(spec.d / 2.0 + spec.alpha))
        for e in _polarizations(kvec.astype(np.float64)):
            kv_list.append(kvec)
            ev_list.append(e)
            w_list.append(weight)
    kvecs = np.array(kv_list, dtype=np.int64)
    evecs = np.array(ev_list)
    weights = np.array(w_list)

    # Renormalize so the truncated one-point covariance is exactly 2 I_d.
    S = np.einsum("m,mi,mj->ij", weights, evecs, evecs)
    Z_K = 2.0 * spec.d / float(np.trace(S))
    thetas = np.sqrt(Z_K * weights)
    return NoiseBasis(spec=spec, kvecs=kvecs, evecs=evecs, thetas=thetas, Z_K=Z_K)


def covariance_eval(basis: NoiseBasis, z: np.ndarray) -> np.ndarray:
    """Q(z) = sum_{k,pol} theta^2 e (x) e cos(k.z); symmetric d x d matrix."""
    z = np.asarray(z, dtype=np.float64)
    phases = basis.wavevectors() @ z
    w = basis.thetas**2 * np.cos(phases)
    return np.einsum("m,mi,mj->ij", w, basis.evecs, basis.evecs)


class SpectralScatter:
    """Precomputed index maps turning mode coefficients into grid fields.

    values = Re ifftn(F) with F[k] += theta*e*(zc/2 + zs/2i)*N^d and the
    conjugate at -k, per mode pair.
    """

    def __init__(self, basis: NoiseBasis, grid: Grid):
        if basis.spec.d != grid.d:
            raise ValueError("basis/grid dimension mismatch")
        if abs(basis.spec.L - grid.L) > 1e-12:
            raise ValueError("basis/grid box size mismatch")
        if basis.spec.K > grid.N // 2 - 1:
            raise ValueError(
                f"noise cutoff K={basis.spec.K} exceeds grid lattice (N/2-1={grid.N//2-1})"
            )
        self.basis = basis
        self.grid = grid
        shape = grid.shape
        strides = np.array([int(np.prod(shape[ax + 1:])) for ax in range(grid.d)])
        idx_plus = np.zeros(basis.n_pairs, dtype=np.int64)
        idx_minus = np.zeros(basis.n_pairs, dtype=np.int64)
        for ax in range(grid.d):
            mplus = np.mod(basis.kvecs[:, ax], grid.N)
            mminus = np.mod(-basis.kvecs[:, ax], grid.N)
            idx_plus += mplus * strides[ax]
            idx_minus += mminus * strides[ax]
        self.idx_plus = idx_plus
        self.idx_minus = idx_minus
        # (n_pairs, d) amplitude of each pair, includes N^d/2 FFT scaling
        self.amp = basis.thetas[:, None] * basis.evecs * (grid.N**grid.d / 2.0)

    def assemble(self, coeffs: np.ndarray) -> list[np.ndarray]:
        """Grid fields from coefficients of shape (..., n_pairs, 2).

        Returns one array of shape (..., N, ..., N) per vector component.
        """
        zc = coeffs[..., 0]
        zs = coeffs[..., 1]
        lead = coeffs.shape[:-2]
        Nd = self.grid.N**self.grid.d
        P = int(np.prod(lead)) if lead else 1
        zc = zc.reshape(P, -1)
        zs = zs.reshape(P, -1)
        # one flat scatter across all leading dims; duplicate indices (shared
        # k across polarizations in d=3) accumulate correctly
        offsets = np.arange(P, dtype=np.int64)[:, None] * Nd
        big_plus = (offsets + self.idx_plus[None, :]).ravel()
        big_minus = (offsets + self.idx_minus[None, :]).ravel()
        axes = tuple(range(-self.grid.d, 0))

        big_idx = np.concatenate([big_plus, big_minus])

        def scatter_ifft(amp_complex):
            a = amp_complex[None, :]
            vals = np.concatenate([(a * (zc - 1j * zs)).ravel(), (a * (zc + 1j * zs)).ravel()])
            F = (
                np.bincount(big_idx, weights=vals.real, minlength=P * Nd)
                + 1j * np.bincount(big_idx, weights=vals.imag, minlength=P * Nd)
            )
            return np.fft.ifftn(F.reshape(lead + self.grid.shape), axes=axes)

        if self.grid.d == 1:
            return [np.real(scatter_ifft(self.amp[:, 0].astype(np.complex128)))]
        # pack two real components into one complex transform
        z = scatter_ifft(self.amp[:, 0] + 1j * self.amp[:, 1])
        out = [np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag)]
        if self.grid.d == 3:
            out.append(np.real(scatter_ifft(self.amp[:, 2].astype(np.complex128))))
        return out


@dataclass
class NoiseIncrement:
    """One Brownian increment of the noise field over a step of size dt."""

    dW: VectorField
    coefficients: np.ndarray  # (n_pairs, 2), [:,0]=cos, [:,1]=sin draws
    dt: float


def sample_coefficients(basis: NoiseBasis, dt: float, rng: np.random.Generator, size=()) -> np.ndarray:
    """i.i.d. N(0, dt) coefficient per mode, shape (*size, n_pairs, 2)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return rng.standard_normal(tuple(size) + (basis.n_pairs, 2)) * np.sqrt(dt)


def sample_increment(basis: NoiseBasis, grid: Grid, dt: float, rng: np.random.Generator) -> NoiseIncrement:
    coeffs = sample_coefficients(basis, dt, rng)
    arrays = basis.scatter(grid).assemble(coeffs)
    dW = VectorField.from_arrays(grid, arrays)
    return NoiseIncrement(dW=dW, coefficients=coeffs, dt=dt)


def increment_at_points(basis: NoiseBasis, coeffs: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Exact mode-sum evaluation of the increment field at physical points."""
    kv = basis.wavevectors()
    cos_amps = basis.thetas[:, None] * basis.evecs * coeffs[:, 0][:, None]
    sin_amps = basis.thetas[:, None] * basis.evecs * coeffs[:, 1][:, None]
    return eval_trig_modes(points, kv, cos_amps, sin_amps)


# ---------------------------------------------------------------------------
# Cameron-Martin norm of user-supplied time-indexed fields
# ---------------------------------------------------------------------------

@dataclass
class TimeVectorField:
    """A vector field sampled at increasing times (piecewise description of g)."""

    times: np.ndarray
    fields: list[VectorField]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if len(self.times) != len(self.fields):
            raise ValueError("times/fields length mismatch")
        if len(self.times) >= 2 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    @classmethod
    def constant(cls, field: VectorField, T: float, n: int = 2) -> "TimeVectorField":
        times = np.linspace(0.0, T, n)
        return cls(times=times, fields=[field] * n)


def cameron_martin_norm(g: TimeVectorField, spec: NoiseSpec) -> float:
    """( int_0^T ||g_t||^2_{H^{d/2+alpha}} dt )^{1/2} by time quadrature.

    Each slice must be divergence-free to within a relative spectral
    tolerance of 1e-8; violations are rejected with the worst divergence
    attached.
    """
    s = spec.sobolev_order
    sq = []
    for t, f in zip(g.times, g.fields):
        div = f.max_spectral_divergence()
        if div > DIVERGENCE_TOL:
            raise NonSolenoidalError(
                f"field at t={t} is not divergence-free (max relative spectral "
                f"divergence {div:.3e} > {DIVERGENCE_TOL})",
                max_divergence=div,
            )
        sq.append(vector_sobolev_norm(f, s) ** 2)
    if len(sq) == 1:
        return float(np.sqrt(sq[0]))
    return float(np.sqrt(trapezoid(np.asarray(sq), g.times)))


def basis_mode_fields(basis: NoiseBasis, grid: Grid, pair_index: int) -> tuple[VectorField, VectorField]:
    """Realize the cosine and sine fields of one (k, pol) pair on a grid."""
    coeffs = np.zeros((basis.n_pairs, 2))
    coeffs[pair_index, 0] = 1.0
    cos_f = VectorField.from_arrays(grid, basis.scatter(grid).assemble(coeffs))
    coeffs = np.zeros((basis.n_pairs, 2))
    coeffs[pair_index, 1] = 1.0
    sin_f = VectorField.from_arrays(grid, basis.scatter(grid).assemble(coeffs))
    return cos_f, sin_f
