import numpy as np
import pytest

from ktlab import (
    Grid,
    NoiseSpec,
    ScalarField,
    SolverConfig,
    build_basis,
    dissipation_measure,
    energy_ledger,
    evolve,
    kernel_transfer,
    lp_norm,
    path_distance,
    regularization_functional,
)
from ktlab.diagnostics import _hann_windows, spectral_balance_probe, weak_dictionary
from ktlab.drifts import DriftSpec, synthesize_drift
from ktlab.errors import MissingLogError
from ktlab.solver import Trajectory

TWO_PI = 2.0 * np.pi


def _rho0(grid):
    return ScalarField.harmonic(grid, (1, 0)) + ScalarField.harmonic(grid, (0, 1), 0.5)


def _traj_from_arrays(grid, times, snaps, cfg=None):
    cfg = cfg or SolverConfig(epsilon=0.0, dt=times[1] - times[0] if len(times) > 1 else 1e-2,
                              T=max(times[-1], 1e-2))
    return Trajectory(grid=grid, config=cfg, times=np.asarray(times), snapshots=np.asarray(snaps))


class TestEnergyLedger:
    def test_constant_trajectory(self, grid32):
        cfg = SolverConfig(epsilon=0.0, dt=1e-2, T=0.1, record_every=2)
        traj = evolve(_rho0(grid32), None, None, None, cfg)
        ledger = energy_ledger(traj, p_list=(2, 4), s_list=(-0.5, 1.0))
        for series in [ledger.l2_squared, *ledger.lp_norms.values(), *ledger.hs_norms.values()]:
            assert np.allclose(series, series[0], rtol=1e-12)
        assert ledger.l2_squared[0] == pytest.approx(lp_norm(_rho0(grid32), 2) ** 2, rel=1e-12)

    def test_translation_norms_constant(self, grid64):
        drift = synthesize_drift(DriftSpec(kind="constant", velocity=(1.0, 0.0)), grid64)
        cfg = SolverConfig(epsilon=0.0, dt=1e-3, T=0.2, record_every=50,
                           keep_coefficient_log=False)
        traj = evolve(ScalarField.from_function(grid64, lambda x, y: np.sin(x)),
                      drift, None, None, cfg)
        ledger = energy_ledger(traj, p_list=(2, 4))
        for series in [np.sqrt(ledger.l2_squared), *ledger.lp_norms.values()]:
            assert max(abs(v - series[0]) for v in series) / series[0] <= 1e-4

    def test_martingale_accumulator_vanishes_for_div_free(self, grid32):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=4))
        cfg = SolverConfig(epsilon=0.4, dt=2e-3, T=0.1, seed=3, record_every=1)
        traj = evolve(_rho0(grid32), None, None, basis, cfg)
        ledger = energy_ledger(traj, basis=basis)
        assert ledger.martingale is not None
        assert np.max(np.abs(ledger.martingale)) < 1e-12

    def test_csv_rows_carry_hash(self, grid32):
        cfg = SolverConfig(epsilon=0.0, dt=1e-2, T=0.1, record_every=5)
        traj = evolve(_rho0(grid32), None, None, None, cfg)
        rows = energy_ledger(traj).to_rows("abc123")
        assert all(r["config_hash"] == "abc123" for r in rows)
        assert {"time", "quantity", "value"} <= set(rows[0])


class TestHannWindows:
    def test_partition_of_unity_and_derivative_cancellation(self):
        W, W1, W2 = _hann_windows(64, 8, TWO_PI / 64)
        assert np.max(np.abs(W.sum(axis=0) - 1.0)) < 1e-15
        assert np.max(np.abs(W1.sum(axis=0))) < 1e-13
        assert np.max(np.abs(W2.sum(axis=0))) < 1e-12


class TestDissipation:
    def test_deterministic_smooth_transport_all_cells_zero(self, grid64):
        drift = synthesize_drift(DriftSpec(kind="cellular"), grid64)
        cfg = SolverConfig(epsilon=0.0, dt=1e-3, T=0.25, record_every=1,
                           keep_coefficient_log=False)
        traj = evolve(_rho0(grid64), drift, None, None, cfg)
        est = dissipation_measure(traj, None, drift, spatial_blocks=8, time_bins=4)
        scale = lp_norm(_rho0(grid64), 2) ** 2
        assert np.max(np.abs(est.cells)) <= 1e-4 * scale
        assert est.identity_residual <= 1e-10 * scale

    def test_ito_run_ledger_identity_and_tv_bound(self, grid64):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=8))
        cfg = SolverConfig(epsilon=0.4, dt=1e-3, T=0.25, seed=12, scheme="ito_euler",
                           record_every=1)
        rho0 = _rho0(grid64)
        traj = evolve(rho0, None, None, basis, cfg)
        est = dissipation_measure(traj, basis, None, spatial_blocks=8, time_bins=8)
        scale = lp_norm(rho0, 2) ** 2
        # pathwise ledger identity
        assert est.identity_residual <= 1e-6 * scale
        # total bounded by the initial energy
        assert est.total <= scale + 1e-9
        # martingale term reconstructed from the log vanishes identically
        assert abs(est.martingale_total) <= 1e-10 * scale
        assert est.total == pytest.approx(est.deficit, abs=1e-9 * scale)

    def test_requires_coefficient_log(self, grid32):
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=4))
        cfg = SolverConfig(epsilon=0.3, dt=2e-3, T=0.05, seed=1, record_every=1,
                           keep_coefficient_log=False)
        traj = evolve(_rho0(grid32), None, None, basis, cfg)
        with pytest.raises(MissingLogError):
            dissipation_measure(traj, basis)

    def test_rejects_compressible_drift(self, grid32):
        drift = synthesize_drift(DriftSpec(kind="constant", velocity=(1.0, 0.0)), grid32)
        drift.metadata["div_linf"] = 0.5  # simulate a compressible field
        cfg = SolverConfig(epsilon=0.0, dt=1e-2, T=0.1, record_every=1)
        traj = evolve(_rho0(grid32), None, None, None, cfg)
        with pytest.raises(ValueError, match="div b"):
            dissipation_measure(traj, None, drift)


class TestRegularizationFunctional:
    def test_zero_noise(self, grid32):
        cfg = SolverConfig(epsilon=0.0, dt=1e-2, T=0.1, record_every=2)
        traj = evolve(_rho0(grid32), None, None, None, cfg)
        assert regularization_functional(traj, 0.0, alpha=0.25, delta=0.1) == 0.0

    def test_single_mode_closed_form(self, grid32):
        # constant field with unit mass at |k|=1 over a window T:
        # value = eps^2 T <k>^{2(1-alpha-delta)}
        alpha, delta, T = 0.25, 0.1, 0.7
        amp = np.sqrt(2.0) / TWO_PI
        f = ScalarField.harmonic(grid32, (1, 0), amplitude=amp)
        times = np.linspace(0, T, 8)
        snaps = np.broadcast_to(f.values, (8, *grid32.shape))
        traj = _traj_from_arrays(grid32, times, snaps)
        val = regularization_functional(traj, 1.0, alpha, delta)
        assert val == pytest.approx(T * 2.0 ** (1 - alpha - delta), rel=1e-10)

    def test_delta_range_enforced(self, grid32):
        cfg = SolverConfig(epsilon=0.0, dt=1e-2, T=0.1, record_every=5)
        traj = evolve(_rho0(grid32), None, None, None, cfg)
        with pytest.raises(ValueError):
            regularization_functional(traj, 0.3, alpha=0.25, delta=0.3)


class TestKernelTransfer:
    def test_constant_psi_gives_zero(self):
        modes = np.array([(i, j) for i in range(-2, 3) for j in range(-2, 3)], dtype=float)
        a = np.random.default_rng(0).uniform(size=len(modes))
        val = kernel_transfer((modes, a), lambda m: 1.0, alpha=0.25)
        assert abs(val) < 1e-14

    def test_zero_energy_gives_zero(self):
        modes = np.array([(i, j) for i in range(-2, 3) for j in range(-2, 3)], dtype=float)
        val = kernel_transfer((modes, np.zeros(len(modes))), lambda m: (1 + m @ m) ** -0.2, alpha=0.3)
        assert val == 0.0

    def test_regression_fixture_against_brute_force(self):
        # a = delta at xi=(1,0), psi = <xi>^{-1/2}, |xi| <= 2 lattice
        alpha, delta = 0.25, 0.25
        modes = [(i, j) for i in range(-2, 3) for j in range(-2, 3) if np.hypot(i, j) <= 2.0]
        a = {m: (1.0 if m == (1, 0) else 0.0) for m in modes}
        psi = lambda m: (1.0 + float(m[0]) ** 2 + float(m[1]) ** 2) ** (-delta)
        val = kernel_transfer(a, psi, alpha=alpha)
        # frozen value computed by the independent double loop below
        assert val == pytest.approx(-1.6066587379286200e-02, rel=1e-12)
        brute = 0.0
        xi = np.array([1.0, 0.0])
        for eta in modes:
            v = np.array(eta, dtype=float) - xi
            v2 = v @ v
            if v2 == 0:
                continue
            proj = xi @ xi - (v @ xi) ** 2 / v2
            w = (2 * np.pi) ** (-1.0) * (1.0 + v2) ** (-(1.0 + alpha))
            brute += w * proj * (psi(eta) - psi((1, 0)))
        assert val == pytest.approx(brute, rel=1e-12)

    def test_fourier_layer_balance_small(self):
        # ensemble version of the layer-energy balance, 5% tolerance
        g = Grid(d=2, N=16)
        basis = build_basis(NoiseSpec(d=2, alpha=0.25, K=7))
        rho0 = ScalarField.harmonic(g, (1, 0)) + ScalarField.harmonic(g, (0, 1), 0.7)
        cfg = SolverConfig(epsilon=0.5, dt=5e-4, T=0.2, scheme="ito_euler", seed=5,
                           record_every=100, keep_coefficient_log=False)
        psi = lambda m: (1.0 + float(np.dot(m, m))) ** (-0.25)
        probe = spectral_balance_probe(rho0, basis, cfg, psi, n_paths=512, batch=256)
        assert probe["rel_err"] <= 0.05, probe


class TestPathDistance:
    def _two_trajs(self, grid, shift):
        rho = ScalarField.from_function(grid, lambda x, y: np.sin(x))
        rho_s = ScalarField.from_function(grid, lambda x, y: np.sin(x - shift))
        times = np.array([0.0, 0.5, 1.0])
        a = _traj_from_arrays(grid, times, np.broadcast_to(rho.values, (3, *grid.shape)))
        b = _traj_from_arrays(grid, times, np.broadcast_to(rho_s.values, (3, *grid.shape)))
        return a, b

    def test_identical_trajectories(self, grid32):
        a, _ = self._two_trajs(grid32, 0.3)
        assert path_distance(a, a, "d_scriptE") == 0.0
        assert path_distance(a, a, "d_E") == 0.0

    def test_shift_closed_form(self, grid64):
        # translated sines: closed-form L^2 and L^4 norms of the difference
        h = 0.4
        a, b = self._two_trajs(grid64, h)
        # sin(x) - sin(x-h) = 2 sin(h/2) cos(x - h/2)
        amp = 2 * np.sin(h / 2)
        l2 = amp * np.sqrt(2 * np.pi**2)
        # ||cos||_4^4 = (3/8) (2 pi)^2
        l4 = amp * (0.375 * (2 * np.pi) ** 2) ** 0.25
        expected = l2 + l4
        assert path_distance(a, b, "d_scriptE") == pytest.approx(expected, rel=1e-10)

    def test_topology_ordering(self, grid32, rng):
        # d_E <= 2 d_scriptE for unit-normalized probe dictionary
        times = np.array([0.0, 1.0])
        snaps_a = rng.standard_normal((2, *grid32.shape))
        snaps_b = rng.standard_normal((2, *grid32.shape))
        a = _traj_from_arrays(grid32, times, snaps_a)
        b = _traj_from_arrays(grid32, times, snaps_b)
        de = path_distance(a, b, "d_E")
        ds = path_distance(a, b, "d_scriptE")
        assert de <= 2.0 * ds + 1e-12

    def test_metric_axioms_on_samples(self, grid32, rng):
        times = np.array([0.0, 1.0])
        trajs = [
            _traj_from_arrays(grid32, times, rng.standard_normal((2, *grid32.shape)))
            for _ in range(3)
        ]
        for metric in ("d_scriptE", "d_E"):
            dab = path_distance(trajs[0], trajs[1], metric)
            dba = path_distance(trajs[1], trajs[0], metric)
            assert dab == pytest.approx(dba, rel=1e-12)
            dac = path_distance(trajs[0], trajs[2], metric)
            dcb = path_distance(trajs[2], trajs[1], metric)
            assert dab <= dac + dcb + 1e-12

    def test_dictionary_contains_low_modes(self, grid32):
        probes = weak_dictionary(grid32, 2)
        # constant + (cos,sin) for each half-lattice mode with |k| <= 2
        n_half = 6  # (0,1),(1,0),(1,1),(1,-1),(0,2),(2,0)
        assert len(probes) == 1 + 2 * n_half
        w = grid32.cell_volume
        for phi in probes:
            assert np.sum(phi**2) * w == pytest.approx(1.0, rel=1e-10)
