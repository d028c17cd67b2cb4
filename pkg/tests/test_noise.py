import numpy as np
import pytest

from ktlab import (
    Grid,
    NoiseSpec,
    ScalarField,
    VectorField,
    build_basis,
    cameron_martin_norm,
    covariance_eval,
    sample_increment,
)
from ktlab.errors import NonSolenoidalError
from ktlab.noise import TimeVectorField, increment_at_points, sample_coefficients

TWO_PI = 2.0 * np.pi


class TestSpec:
    def test_alpha_range(self):
        with pytest.raises(ValueError):
            NoiseSpec(alpha=0.5)
        with pytest.raises(ValueError):
            NoiseSpec(alpha=0.0)
        with pytest.raises(ValueError):
            NoiseSpec(K=0)

    def test_no_1d_noise(self):
        with pytest.raises(ValueError):
            NoiseSpec(d=1)


class TestBuildBasis:
    def test_k1_mode_count_and_equal_amplitudes(self):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=1))
        # 4 lattice vectors x 1 polarization x 2 phases
        assert basis.n_pairs == 4
        assert basis.n_modes == 8
        assert np.allclose(basis.thetas, basis.thetas[0])

    def test_zk_against_four_vector_oracle(self):
        # brute-force sum over (+-1,0), (0,+-1): sum w e(x)e = (w_tot/2) I_2,
        # so Z_K = 2 / (w (1+1)^{-5/4} * 2)
        alpha = 0.25
        basis = build_basis(NoiseSpec(d=2, alpha=alpha, K=1))
        S = np.zeros((2, 2))
        for k in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            kv = np.array(k, dtype=float)
            e = np.array([-kv[1], kv[0]]) / np.linalg.norm(kv)
            S += (1.0 + kv @ kv) ** (-(1.0 + alpha)) * np.outer(e, e)
        Z_oracle = 2.0 * 2.0 / np.trace(S)
        assert basis.Z_K == pytest.approx(Z_oracle, rel=1e-12)
        assert basis.Z_K == pytest.approx(2.0 ** 1.25, rel=1e-12)

    def test_polarizations_orthogonal_to_k(self):
        # d=2 is bitwise zero; d=3 builds from exact integer vectors, so the
        # only residue is the final normalization rounding (<= 1 ulp)
        basis2 = build_basis(NoiseSpec(d=2, alpha=0.3, K=3))
        dots2 = np.abs(np.einsum("mi,mi->m", basis2.kvecs.astype(float), basis2.evecs))
        assert np.max(dots2) == 0.0
        basis3 = build_basis(NoiseSpec(d=3, alpha=0.3, K=3))
        dots3 = np.abs(np.einsum("mi,mi->m", basis3.kvecs.astype(float), basis3.evecs))
        assert np.max(dots3) <= 4e-16 * (1 + np.max(np.abs(basis3.kvecs)))
        for basis in (basis2, basis3):
            norms = np.linalg.norm(basis.evecs, axis=1)
            assert np.allclose(norms, 1.0, atol=1e-12)

    def test_d3_two_polarizations(self):
        basis = build_basis(NoiseSpec(d=3, alpha=0.25, K=1))
        # 6 lattice vectors x 2 polarizations
        assert basis.n_pairs == 12

    def test_theta_monotone_with_exact_ratio(self):
        spec = NoiseSpec(d=2, alpha=0.25, K=8)
        basis = build_basis(spec)
        mags = np.einsum("mi,mi->m", basis.kvecs, basis.kvecs)
        order = np.argsort(mags)
        sorted_mags = mags[order]
        sorted_thetas = basis.thetas[order]
        # strictly decreasing in |k|
        change = np.diff(sorted_mags) > 0
        assert np.all(np.diff(sorted_thetas)[change] < 0)
        # exact spectral ratio law
        i, j = order[0], order[-1]
        expect = ((1.0 + mags[j]) / (1.0 + mags[i])) ** ((spec.d / 2.0 + spec.alpha) / 2.0)
        assert basis.thetas[i] / basis.thetas[j] == pytest.approx(expect, rel=1e-12)

    def test_manifest_round_trip_fields(self):
        basis = build_basis(NoiseSpec(d=2, alpha=0.2, K=2))
        m = basis.to_manifest()
        assert m["Z_K"] == basis.Z_K
        assert len(m["modes"]) == basis.n_modes
        assert {"d", "alpha", "K", "L", "Z_K", "modes"} <= set(m)


class TestCovariance:
    def test_q0_is_2I(self):
        for K in (1, 4, 8):
            basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=K))
            Q0 = covariance_eval(basis, np.zeros(2))
            assert np.max(np.abs(Q0 - 2.0 * np.eye(2))) < 1e-10

    def test_symmetry_in_z(self, rng):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=4))
        for _ in range(5):
            z = rng.uniform(-np.pi, np.pi, size=2)
            assert np.allclose(covariance_eval(basis, z), covariance_eval(basis, -z), atol=1e-13)

    def test_against_monte_carlo_oracle(self, grid64):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=8))
        z = np.array([np.pi, 0.0])
        Q_exact = covariance_eval(basis, z)
        dt = 1.0
        M = 10_000
        rng = np.random.default_rng(4)
        x_idx = (0, 0)
        shift = grid64.N // 2  # pi displacement in x
        acc = np.zeros((2, 2))
        acc_sq = np.zeros((2, 2))
        for _ in range(M):
            inc = sample_increment(basis, grid64, dt, rng)
            a = np.array([c.values[x_idx] for c in inc.dW.components])
            b = np.array([c.values[(shift, 0)] for c in inc.dW.components])
            outer = np.outer(a, b) / dt
            acc += outer
            acc_sq += outer**2
        mean = acc / M
        se = np.sqrt(np.maximum(acc_sq / M - mean**2, 0.0) / M)
        assert np.all(np.abs(mean - Q_exact) <= 3.0 * se + 1e-12)


class TestSampling:
    def test_increment_variance_trace(self, grid32):
        # E|dW(x)|^2 = trace Q(0) dt = 2 d dt
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=4))
        dt = 0.01
        M = 10_000
        rng = np.random.default_rng(9)
        coeffs = sample_coefficients(basis, dt, rng, size=(M,))
        fields = basis.scatter(grid32).assemble(coeffs)
        sq = fields[0][:, 5, 7] ** 2 + fields[1][:, 5, 7] ** 2
        mean = np.mean(sq)
        se = np.std(sq, ddof=1) / np.sqrt(M)
        assert abs(mean - 2 * 2 * dt) <= 3 * se

    def test_spatial_homogeneity(self, grid32):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=4))
        dt = 0.01
        M = 8192
        rng = np.random.default_rng(10)
        coeffs = sample_coefficients(basis, dt, rng, size=(M,))
        fields = basis.scatter(grid32).assemble(coeffs)
        sq = fields[0] ** 2 + fields[1] ** 2
        a = sq[:, 3, 4]
        b = sq[:, 20, 11]
        diff = np.mean(a) - np.mean(b)
        se = np.sqrt(np.var(a, ddof=1) / M + np.var(b, ddof=1) / M)
        assert abs(diff) <= 3 * se

    def test_determinism(self, grid32):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=4))
        a = sample_increment(basis, grid32, 1e-3, np.random.default_rng(42))
        b = sample_increment(basis, grid32, 1e-3, np.random.default_rng(42))
        for ca, cb in zip(a.dW.components, b.dW.components):
            assert np.array_equal(ca.values, cb.values)

    def test_divergence_free(self, grid64):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=8))
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(20):
            inc = sample_increment(basis, grid64, 1e-3, rng)
            worst = max(worst, inc.dW.max_spectral_divergence())
        assert worst <= 1e-12

    def test_variance_additivity_two_steps(self, grid32):
        # increment over dt1+dt2 from two consecutive samples has the law of
        # one sample over dt1+dt2: compare pointwise variances by MC
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=3))
        dt1, dt2 = 0.004, 0.006
        M = 8192
        rng = np.random.default_rng(17)
        c1 = sample_coefficients(basis, dt1, rng, size=(M,))
        c2 = sample_coefficients(basis, dt2, rng, size=(M,))
        summed = basis.scatter(grid32).assemble(c1 + c2)
        direct = basis.scatter(grid32).assemble(
            sample_coefficients(basis, dt1 + dt2, np.random.default_rng(18), size=(M,))
        )
        a = summed[0][:, 2, 9]
        b = direct[0][:, 2, 9]
        va, vb = np.var(a, ddof=1), np.var(b, ddof=1)
        se = np.sqrt(2.0 / M) * max(va, vb)  # var-of-variance, gaussian
        assert abs(va - vb) <= 3 * np.sqrt(2) * se

    def test_rejects_bad_dt(self, grid32):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=2))
        with pytest.raises(ValueError):
            sample_increment(basis, grid32, 0.0, np.random.default_rng(0))

    def test_increment_at_points_matches_grid(self, grid32):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=4))
        rng = np.random.default_rng(3)
        inc = sample_increment(basis, grid32, 1e-2, rng)
        pts = np.stack([m.ravel() for m in grid32.meshes()], axis=1)
        vals = increment_at_points(basis, inc.coefficients, pts)
        for ax in range(2):
            assert np.max(np.abs(vals[:, ax] - inc.dW.components[ax].values.ravel())) < 1e-10

    def test_k_exceeding_nyquist_reported_at_solve_time(self):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=10))
        small = Grid(d=2, N=16)
        with pytest.raises(ValueError, match="exceeds"):
            basis.scatter(small)


class TestCameronMartin:
    def test_zero(self, grid32):
        spec = NoiseSpec(d=2, alpha=0.25, K=4)
        g = TimeVectorField.constant(VectorField.zero(grid32), 1.0)
        assert cameron_martin_norm(g, spec) == 0.0

    def test_single_unit_mode_closed_form(self, grid32):
        # constant-in-time, unit spectral mass at |k|=1, d=2, alpha=1/4,
        # T=1: the norm is <k>^{d/2+alpha} = 2^{0.625}
        spec = NoiseSpec(d=2, alpha=0.25, K=4)
        amp = np.sqrt(2.0) / TWO_PI  # unit L^2 mass in one component
        comp = ScalarField.harmonic(grid32, (0, 1), amplitude=amp)
        g_field = VectorField(grid32, (comp, ScalarField.zero(grid32)))
        g = TimeVectorField.constant(g_field, 1.0)
        val = cameron_martin_norm(g, spec)
        assert val == pytest.approx(2.0 ** (0.5 * 1.25), rel=1e-10)
        # independent lattice-sum oracle
        oracle = np.sqrt(_h_norm_sq_oracle(comp, 1.25))
        assert val == pytest.approx(oracle, rel=1e-10)

    def test_homogeneity(self, grid32, rng):
        from ktlab.drifts import DriftSpec, synthesize_drift

        spec = NoiseSpec(d=2, alpha=0.25, K=4)
        b = synthesize_drift(DriftSpec(kind="cellular"), grid32).base
        g1 = TimeVectorField.constant(b, 1.0)
        g3 = TimeVectorField.constant(3.0 * b, 1.0)
        assert cameron_martin_norm(g3, spec) == pytest.approx(
            3.0 * cameron_martin_norm(g1, spec), rel=1e-12
        )

    def test_rejects_non_solenoidal_with_diagnostic(self, grid32):
        spec = NoiseSpec(d=2, alpha=0.25, K=4)
        comp = ScalarField.harmonic(grid32, (1, 0))
        g_field = VectorField(grid32, (comp, ScalarField.zero(grid32)))  # div != 0
        g = TimeVectorField.constant(g_field, 1.0)
        with pytest.raises(NonSolenoidalError) as exc:
            cameron_martin_norm(g, spec)
        assert exc.value.max_divergence > 1e-8


def _h_norm_sq_oracle(f, s):
    from ktlab.fields import fourier_energy_profile

    total = 0.0
    for mode, energy in fourier_energy_profile(f).items():
        xi_sq = sum(float(m) ** 2 for m in mode)
        total += (1.0 + xi_sq) ** s * energy
    return total
