"""Periodic-grid scalar and vector fields with spectral transforms and norms.

Conventions
-----------
The domain is the torus [0, L)^d sampled at N points per axis.  The forward
transform is the plain ``numpy.fft.fftn`` (the 1/N^d normalization sits on
the inverse).  Wavevectors live on the integer lattice scaled by 2*pi/L.
Normalized coefficients ``f_hat = fftn(values) * (L/N)^d / L^(d/2)`` satisfy
the discrete Parseval identity sum |f_hat|^2 = ||f||_{L^2}^2 with the L^2
norm computed by grid quadrature.

Fields are immutable from the caller's perspective: all operations return
new objects and are safe to call concurrently.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidFieldError
from .kernels import interp_cubic_periodic

TWO_PI = 2.0 * np.pi


def whole_space_weight(x: np.ndarray, d: int) -> np.ndarray:
    """Reference decay weight (1+|x|^2)^(-d/2-1) of the weighted-space setting.

    The torus proxy works with plain Sobolev norms; the weight is recorded
    here for reference and is deliberately not applied anywhere.
    """
    return (1.0 + np.sum(np.atleast_2d(x) ** 2, axis=-1)) ** (-(d / 2.0) - 1.0)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [0, L)^d."""

    d: int = 2
    N: int = 64
    L: float = TWO_PI
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be in {{1,2,3}}, got {self.d}")
        if self.N < 8 or self.N % 2 != 0:
            raise ValueError(f"N must be even and >= 8, got {self.N}")
        if not (0.0 < self.dealias_fraction <= 1.0):
            raise ValueError("dealias_fraction must lie in (0, 1]")
        if not (self.L > 0):
            raise ValueError("L must be positive")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def spacing(self) -> float:
        return self.L / self.N

    @property
    def cell_volume(self) -> float:
        return (self.L / self.N) ** self.d

    @property
    def volume(self) -> float:
        return self.L**self.d

    def axis(self) -> np.ndarray:
        """Physical coordinates along one axis."""
        return np.arange(self.N) * self.spacing

    def meshes(self) -> list[np.ndarray]:
        """d coordinate meshes of shape ``self.shape``."""
        ax = self.axis()
        return list(np.meshgrid(*([ax] * self.d), indexing="ij"))

    def modes1d(self) -> np.ndarray:
        """Integer mode numbers along one axis in FFT order."""
        return np.rint(np.fft.fftfreq(self.N) * self.N).astype(np.int64)

    def mode_meshes(self) -> list[np.ndarray]:
        m = self.modes1d()
        return list(np.meshgrid(*([m] * self.d), indexing="ij"))

    def wavevectors(self) -> list[np.ndarray]:
        """Physical wavevector component meshes (2*pi/L times integer modes)."""
        scale = TWO_PI / self.L
        return [scale * m for m in self.mode_meshes()]

    def xi_squared(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for x in self.wavevectors():
            out += x * x
        return out

    def dealias_mask(self) -> np.ndarray:
        """Retained modes: |m_j| <= dealias_fraction * N/2 on every axis."""
        cutoff = self.dealias_fraction * self.N / 2.0
        mask = np.ones(self.shape, dtype=bool)
        for m in self.mode_meshes():
            mask &= np.abs(m) <= cutoff
        return mask

    def derivative_multiplier(self, axis: int) -> np.ndarray:
        """i*xi_axis with the Nyquist plane zeroed (keeps d/dx of real fields real)."""
        m = self.mode_meshes()[axis]
        xi = (TWO_PI / self.L) * m.astype(np.float64)
        xi = np.where(m == -self.N // 2, 0.0, xi)
        return 1j * xi


# Per-grid cache of the heavier precomputed arrays.
_GRID_CACHE: dict[Grid, dict] = {}


def _grid_arrays(grid: Grid) -> dict:
    arrs = _GRID_CACHE.get(grid)
    if arrs is None:
        arrs = {
            "xi_sq": grid.xi_squared(),
            "mask": grid.dealias_mask(),
            "deriv": [grid.derivative_multiplier(ax) for ax in range(grid.d)],
        }
        _GRID_CACHE[grid] = arrs
    return arrs


@dataclass
class ScalarField:
    """Real scalar field with a lazily synchronized spectral representation."""

    grid: Grid
    _values: np.ndarray | None = None
    _spectral: np.ndarray | None = None

    def __post_init__(self):
        if self._values is None and self._spectral is None:
            raise ValueError("need values or spectral data")
        if self._values is not None:
            self._values = np.asarray(self._values, dtype=np.float64)
            if self._values.shape != self.grid.shape:
                raise InvalidFieldError(
                    f"values shape {self._values.shape} != grid shape {self.grid.shape}"
                )
        if self._spectral is not None and self._spectral.shape != self.grid.shape:
            raise InvalidFieldError("spectral shape mismatch")

    # -- constructors -------------------------------------------------
    @classmethod
    def from_values(cls, grid: Grid, values: np.ndarray) -> "ScalarField":
        return cls(grid, _values=np.array(values, dtype=np.float64))

    @classmethod
    def from_spectral(cls, grid: Grid, spectral: np.ndarray) -> "ScalarField":
        return cls(grid, _spectral=np.array(spectral, dtype=np.complex128))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, _values=np.asarray(fn(*grid.meshes()), dtype=np.float64))

    @classmethod
    def zero(cls, grid: Grid) -> "ScalarField":
        return cls(grid, _values=np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "ScalarField":
        return cls(grid, _values=np.full(grid.shape, float(c)))

    @classmethod
    def harmonic(cls, grid: Grid, kvec, amplitude: float = 1.0, phase: float = 0.0) -> "ScalarField":
        """amplitude * cos(k.x + phase) for an integer mode vector k."""
        scale = TWO_PI / grid.L
        meshes = grid.meshes()
        arg = sum(scale * k * x for k, x in zip(kvec, meshes)) + phase
        return cls(grid, _values=amplitude * np.cos(arg))

    # -- representations ----------------------------------------------
    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            self._values = np.real(np.fft.ifftn(self._spectral))
        return self._values

    @property
    def spectral(self) -> np.ndarray:
        """Unnormalized forward FFT coefficients."""
        if self._spectral is None:
            self._spectral = np.fft.fftn(self._values)
        return self._spectral

    def coefficients(self) -> np.ndarray:
        """Coefficients normalized so sum |f_hat|^2 equals the squared L^2 norm."""
        g = self.grid
        return self.spectral * (g.cell_volume / g.L ** (g.d / 2.0))

    def is_finite(self) -> bool:
        arr = self._values if self._values is not None else self._spectral
        return bool(np.all(np.isfinite(arr)))

    def mean(self) -> float:
        return float(np.mean(self.values))

    # -- arithmetic (pure) ---------------------------------------------
    def _binary(self, other, op) -> "ScalarField":
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise InvalidFieldError("grid mismatch")
            return ScalarField.from_values(self.grid, op(self.values, other.values))
        return ScalarField.from_values(self.grid, op(self.values, other))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField.from_values(self.grid, -self.values)


@dataclass
class VectorField:
    """d scalar components on a common grid."""

    grid: Grid
    components: tuple[ScalarField, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.components) != self.grid.d:
            raise InvalidFieldError("need exactly d components")
        for c in self.components:
            if c.grid != self.grid:
                raise InvalidFieldError("component grids differ")

    @classmethod
    def from_arrays(cls, grid: Grid, arrays) -> "VectorField":
        return cls(grid, tuple(ScalarField.from_values(grid, a) for a in arrays))

    @classmethod
    def zero(cls, grid: Grid) -> "VectorField":
        return cls.from_arrays(grid, [np.zeros(grid.shape) for _ in range(grid.d)])

    def component_values(self) -> list[np.ndarray]:
        return [c.values for c in self.components]

    def divergence(self) -> ScalarField:
        arrs = _grid_arrays(self.grid)
        out = np.zeros(self.grid.shape, dtype=np.complex128)
        for ax, comp in enumerate(self.components):
            out += arrs["deriv"][ax] * comp.spectral
        return ScalarField.from_spectral(self.grid, out)

    def max_spectral_divergence(self) -> float:
        """max_xi |xi . v_hat(xi)| relative to the field's spectral magnitude."""
        arrs = _grid_arrays(self.grid)
        div = np.zeros(self.grid.shape, dtype=np.complex128)
        scale = 0.0
        for ax, comp in enumerate(self.components):
            spec = comp.spectral
            div += arrs["deriv"][ax] * spec
            scale = max(scale, float(np.max(np.abs(spec))))
        if scale == 0.0:
            return 0.0
        kmax = TWO_PI / self.grid.L * (self.grid.N / 2.0)
        return float(np.max(np.abs(div))) / (scale * kmax)

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, tuple(a + b for a, b in zip(self.components, other.components)))

    def __mul__(self, scalar: float) -> "VectorField":
        return VectorField(self.grid, tuple(scalar * c for c in self.components))

    __rmul__ = __mul__

    def evaluate_at(self, points: np.ndarray, clip: bool = False) -> np.ndarray:
        """Cubic-interpolated values at physical points, shape (npts, d)."""
        pts = np.atleast_2d(points) / self.grid.spacing
        return np.stack(
            [interp_cubic_periodic(c.values, pts, clip=clip) for c in self.components],
            axis=1,
        )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def lp_norm(f: ScalarField, p: float) -> float:
    """Quadrature L^p norm; p = inf is the grid max of |f|."""
    if not f.is_finite():
        raise InvalidFieldError("lp_norm: field contains non-finite values")
    if p == np.inf:
        return float(np.max(np.abs(f.values)))
    if p < 1:
        raise ValueError("p must be >= 1")
    return float((np.sum(np.abs(f.values) ** p) * f.grid.cell_volume) ** (1.0 / p))


def sobolev_norm(f: ScalarField, s: float) -> float:
    """( sum_xi <xi>^{2s} |f_hat(xi)|^2 )^{1/2} on the truncated lattice."""
    if not f.is_finite():
        raise InvalidFieldError("sobolev_norm: field contains non-finite values")
    arrs = _grid_arrays(f.grid)
    weights = (1.0 + arrs["xi_sq"]) ** s
    coeff = f.coefficients()
    return float(np.sqrt(np.sum(weights * np.abs(coeff) ** 2)))


def vector_sobolev_norm(v: VectorField, s: float) -> float:
    return float(np.sqrt(sum(sobolev_norm(c, s) ** 2 for c in v.components)))


def gradient_spectral(f: ScalarField) -> VectorField:
    """Componentwise multiplication by i*xi_j; exact for band-limited fields."""
    arrs = _grid_arrays(f.grid)
    spec = f.spectral
    comps = tuple(
        ScalarField.from_spectral(f.grid, arrs["deriv"][ax] * spec) for ax in range(f.grid.d)
    )
    return VectorField(f.grid, comps)


def laplacian(f: ScalarField) -> ScalarField:
    arrs = _grid_arrays(f.grid)
    return ScalarField.from_spectral(f.grid, -arrs["xi_sq"] * f.spectral)


def dealias(f: ScalarField) -> ScalarField:
    """Zero modes with any |xi_j| above dealias_fraction x Nyquist; idempotent."""
    arrs = _grid_arrays(f.grid)
    return ScalarField.from_spectral(f.grid, np.where(arrs["mask"], f.spectral, 0.0))


def dealias_vector(v: VectorField) -> VectorField:
    return VectorField(v.grid, tuple(dealias(c) for c in v.components))


def fourier_energy_profile(f: ScalarField) -> dict[tuple[int, ...], float]:
    """Per-mode energies |f_hat(xi)|^2; values sum to the squared L^2 norm."""
    coeff = f.coefficients()
    energy = np.abs(coeff) ** 2
    meshes = f.grid.mode_meshes()
    flat = [m.ravel() for m in meshes]
    out: dict[tuple[int, ...], float] = {}
    for idx, e in enumerate(energy.ravel()):
        key = tuple(int(m[idx]) for m in flat)
        out[key] = float(e)
    return out


def shell_spectrum(f: ScalarField, n_shells: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Shell-summed energy E(|k|) over integer-radius shells."""
    coeff = np.abs(f.coefficients()) ** 2
    kmag = np.sqrt(sum(m.astype(float) ** 2 for m in f.grid.mode_meshes()))
    if n_shells is None:
        n_shells = f.grid.N // 2
    shells = np.arange(n_shells + 1)
    energy = np.zeros(n_shells + 1)
    bins = np.rint(kmag).astype(int).ravel()
    np.add.at(energy, np.clip(bins, 0, n_shells), coeff.ravel())
    return shells, energy


def advect(v: VectorField, f: ScalarField) -> ScalarField:
    """Dealiased (v . grad f), the pseudo-spectral transport term."""
    grad = gradient_spectral(f)
    prod = np.zeros(f.grid.shape)
    for ax in range(f.grid.d):
        prod += v.components[ax].values * grad.components[ax].values
    return dealias(ScalarField.from_values(f.grid, prod))


def interpolate_scalar(f: ScalarField, points: np.ndarray, clip: bool = False) -> np.ndarray:
    """Cubic Catmull-Rom interpolation of f at physical points."""
    pts = np.atleast_2d(points) / f.grid.spacing
    return interp_cubic_periodic(f.values, pts, clip=clip)


# ---------------------------------------------------------------------------
# snapshot persistence: flat float64 binary + JSON header
# ---------------------------------------------------------------------------

def save_scalar(f: ScalarField, path_prefix: str | Path, name: str, time: float = 0.0) -> tuple[Path, Path]:
    prefix = Path(path_prefix)
    bin_path = prefix.with_suffix(".bin")
    json_path = prefix.with_suffix(".json")
    f.values.astype("<f8").tofile(bin_path)
    header = {
        "d": f.grid.d,
        "N": f.grid.N,
        "L": f.grid.L,
        "time": float(time),
        "name": name,
        "dealias_fraction": f.grid.dealias_fraction,
        "components": 1,
    }
    json_path.write_text(json.dumps(header, indent=1, sort_keys=True))
    return bin_path, json_path


def load_scalar(path_prefix: str | Path) -> tuple[ScalarField, dict]:
    prefix = Path(path_prefix)
    header = json.loads(prefix.with_suffix(".json").read_text())
    grid = Grid(
        d=header["d"], N=header["N"], L=header["L"],
        dealias_fraction=header.get("dealias_fraction", 2.0 / 3.0),
    )
    raw = np.fromfile(prefix.with_suffix(".bin"), dtype="<f8")
    values = raw.reshape(grid.shape)
    return ScalarField.from_values(grid, values), header


def save_vector(v: VectorField, path_prefix: str | Path, name: str, time: float = 0.0) -> list[Path]:
    prefix = Path(path_prefix)
    paths = []
    for ax, comp in enumerate(v.components):
        p = prefix.parent / f"{prefix.name}_c{ax}"
        paths.extend(save_scalar(comp, p, f"{name}[{ax}]", time))
    header = {
        "d": v.grid.d, "N": v.grid.N, "L": v.grid.L, "time": float(time),
        "name": name, "components": v.grid.d,
        "dealias_fraction": v.grid.dealias_fraction,
    }
    hp = prefix.with_suffix(".json")
    hp.write_text(json.dumps(header, indent=1, sort_keys=True))
    paths.append(hp)
    return paths


def load_vector(path_prefix: str | Path) -> tuple[VectorField, dict]:
    prefix = Path(path_prefix)
    header = json.loads(prefix.with_suffix(".json").read_text())
    comps = []
    for ax in range(header["components"]):
        f, _ = load_scalar(prefix.parent / f"{prefix.name}_c{ax}")
        comps.append(f)
    return VectorField(comps[0].grid, tuple(comps)), header
