import numpy as np
import pytest

from ktlab import ScalarField, check_regime, mollify, synthesize_drift
from ktlab.drifts import DriftSpec, mollify_drift
from ktlab.errors import InvalidFieldError
from ktlab.fields import lp_norm, save_vector

TWO_PI = 2.0 * np.pi


class TestSynthesize:
    def test_zero(self, grid32):
        d = synthesize_drift(DriftSpec(kind="zero"), grid32)
        assert all(np.all(c.values == 0) for c in d.base.components)
        assert d.metadata["w1q_norm"] == 0.0
        assert d.metadata["div_linf"] == 0.0

    def test_shear_analytic(self, grid64):
        d = synthesize_drift(DriftSpec(kind="shear", amplitude=1.0, wavenumber=1), grid64)
        x2 = grid64.meshes()[1]
        assert np.max(np.abs(d.base.components[0].values - np.sin(x2))) < 1e-13
        assert np.max(np.abs(d.base.components[1].values)) == 0.0
        assert d.metadata["div_linf"] < 1e-12

    def test_cellular_divergence_spectral_oracle(self, grid64):
        d = synthesize_drift(DriftSpec(kind="cellular", amplitude=1.0, wavenumber=1), grid64)
        x1, x2 = grid64.meshes()
        assert np.max(np.abs(d.base.components[0].values + np.sin(x1) * np.cos(x2))) < 1e-13
        assert np.max(np.abs(d.base.components[1].values - np.cos(x1) * np.sin(x2))) < 1e-13
        # spectral divergence oracle
        assert lp_norm(d.base.divergence(), np.inf) <= 1e-10

    def test_constant(self, grid32):
        d = synthesize_drift(DriftSpec(kind="constant", velocity=(2.0, -1.0)), grid32)
        assert np.all(d.base.components[0].values == 2.0)
        assert np.all(d.base.components[1].values == -1.0)
        pts = np.array([[0.3, 4.4]])
        assert np.allclose(d.evaluate_at(pts), [[2.0, -1.0]])

    def test_rough_divergence_free_and_metadata(self, grid64):
        spec = DriftSpec(kind="rough", q_target=1.5, seed=3)
        d = synthesize_drift(spec, grid64)
        assert d.base.max_spectral_divergence() <= 1e-10
        assert np.isfinite(d.metadata["w1q_norm"]) and d.metadata["w1q_norm"] > 0
        assert d.metadata["q"] == 1.5

    def test_rough_requires_q_le_2(self):
        with pytest.raises(ValueError):
            DriftSpec(kind="rough", q_target=3.0)

    def test_rough_reproducible(self, grid32):
        a = synthesize_drift(DriftSpec(kind="rough", seed=5), grid32)
        b = synthesize_drift(DriftSpec(kind="rough", seed=5), grid32)
        assert np.array_equal(a.base.components[0].values, b.base.components[0].values)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            DriftSpec(kind="vortex")

    def test_user_file_round_trip(self, tmp_path, grid32, rng):
        d0 = synthesize_drift(DriftSpec(kind="cellular"), grid32)
        save_vector(d0.base, tmp_path / "b", "b")
        d1 = synthesize_drift(DriftSpec(kind="user", path=str(tmp_path / "b")), grid32)
        for a, b in zip(d0.base.components, d1.base.components):
            assert np.array_equal(a.values, b.values)

    def test_user_file_missing(self, grid32):
        with pytest.raises(InvalidFieldError):
            synthesize_drift(DriftSpec(kind="user", path="/nonexistent/xyz"), grid32)

    def test_modulated_schedule(self, grid32):
        d = synthesize_drift(
            DriftSpec(kind="shear", time_dependence="modulated", schedule=[[0.0, 0.0], [1.0, 2.0]]),
            grid32,
        )
        assert d.modulation(0.5) == pytest.approx(1.0)
        v = d.values_at(0.5)
        assert np.max(np.abs(v[0] - 0.5 * 2.0 * d.base.components[0].values * 0 - v[0])) == 0
        assert np.max(np.abs(v[0])) == pytest.approx(np.max(np.abs(d.base.components[0].values)), rel=1e-12)
        assert d.div_l1t_linf(1.0) == pytest.approx(0.0, abs=1e-12)


class TestMollify:
    def test_identity_at_zero(self, grid32, rng):
        d = synthesize_drift(DriftSpec(kind="rough", seed=1), grid32)
        out = mollify(d.base, 0.0)
        assert out is d.base

    def test_single_mode_filter_value(self, grid64):
        # |k| = 1 filtered by exp(-delta^2/2) at delta = 1
        f = ScalarField.harmonic(grid64, (1, 0))
        from ktlab.fields import VectorField

        v = VectorField(grid64, (f, ScalarField.zero(grid64)))
        out = mollify(v, 1.0)
        ratio = np.max(np.abs(out.components[0].values)) / np.max(np.abs(f.values))
        assert ratio == pytest.approx(np.exp(-0.5), rel=1e-12)

    def test_preserves_divergence_free(self, grid32):
        d = synthesize_drift(DriftSpec(kind="rough", seed=2), grid32)
        out = mollify(d.base, 0.3)
        assert out.max_spectral_divergence() <= 1e-12

    def test_contractive_and_monotone(self, grid32):
        d = synthesize_drift(DriftSpec(kind="rough", seed=4), grid32)
        def l2(v):
            return np.sqrt(sum(lp_norm(c, 2) ** 2 for c in v.components))
        norms = [l2(mollify(d.base, delta)) for delta in (0.0, 0.1, 0.3, 0.8)]
        assert all(b <= a * (1 + 1e-13) for a, b in zip(norms, norms[1:]))

    def test_mollify_drift_drops_closed_form(self, grid32):
        d = synthesize_drift(DriftSpec(kind="cellular"), grid32)
        out = mollify_drift(d, 0.2)
        assert out.analytic is None
        assert out.metadata["w1q_norm"] < d.metadata["w1q_norm"]


class TestRegime:
    def test_paper_uniqueness_point(self):
        rep = check_regime(p=2, q=2, d=2, alpha=0.25)
        assert rep.dl_unique

    def test_window_with_both_phenomena(self):
        rep = check_regime(p=2, q=1.2, d=2, alpha=0.1)
        assert rep.nonunique_weak  # 0.25 + 0.833 > 1
        assert rep.noise_wellposed  # 1.111 < 1.2 <= 2

    def test_boundary_case_margin_zero(self):
        rep = check_regime(p=1, q=np.inf, d=2, alpha=0.25)
        assert rep.dl_unique
        assert rep.margins["dl_unique"] == pytest.approx(0.0, abs=1e-15)

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            check_regime(2, 2, 2, 0.6)

    def test_unchecked_side_conditions_listed(self):
        rep = check_regime(2, 2, 2, 0.25)
        assert any("L^{(p-1)/p}" in s for s in rep.unchecked)

    def test_booleans_match_margins_on_random_draws(self, rng):
        # 10^4 random parameter draws: booleans are exactly the margin signs
        for _ in range(10_000):
            p = rng.uniform(1.0, 10.0) if rng.random() < 0.9 else np.inf
            q = rng.uniform(1.0, 4.0) if rng.random() < 0.9 else np.inf
            d = int(rng.integers(2, 4))
            alpha = rng.uniform(0.01, 0.49)
            rep = check_regime(p, q, d, alpha)
            assert rep.dl_unique == (rep.margins["dl_unique"] >= 0)
            assert rep.nonunique_weak == (rep.margins["nonunique_weak"] > 0)
            wl = (q - d / (2 * (1 - alpha))) if not np.isinf(q) else np.inf
            assert rep.noise_wellposed == ((wl > 0) and (2.0 - q >= 0))
            assert rep.margins["noise_wellposed"] == pytest.approx(min(wl, 2.0 - q))
