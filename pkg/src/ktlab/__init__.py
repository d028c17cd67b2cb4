"""ktlab: a pseudo-spectral laboratory for scalar transport driven by
Kraichnan-type transport noise.

Modules
-------
fields           periodic grids, spectral transforms, norms, snapshots
kernels          compiled/fallback hot kernels (interpolation, trig sums)
noise            divergence-free noise basis, sampling, covariances
drifts           drift library, mollification, regime classifier
solver           Ito / Stratonovich / semi-Lagrangian integrators
characteristics  renormalized reference and stochastic-flow oracles
diagnostics      energy ledgers, dissipation measure, transfer sums, metrics
experiments      zero-noise, tilting, tail, rate-function, variational drivers
cli              `ktl` command line entry point and run persistence
"""

from .fields import (
    Grid,
    ScalarField,
    VectorField,
    dealias,
    fourier_energy_profile,
    gradient_spectral,
    lp_norm,
    sobolev_norm,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .noise import (
    NoiseBasis,
    NoiseIncrement,
    NoiseSpec,
    build_basis,
    cameron_martin_norm,
    covariance_eval,
    sample_increment,
)
from .drifts import Drift, DriftSpec, RegimeReport, check_regime, mollify, synthesize_drift
from .solver import SolverConfig, Trajectory, evolve, step_ito, step_stratonovich, weak_residual
from .characteristics import FlowMap, renormalized_reference, stochastic_flow_oracle
from .diagnostics import (
    DissipationEstimate,
    EnergyLedger,
    dissipation_measure,
    energy_ledger,
    kernel_transfer,
    path_distance,
    regularization_functional,
)
from .experiments import (
    Control,
    ControlSpec,
    DeviationEvent,
    PathFunctional,
    dissipation_ldp_check,
    girsanov_tilted_sampler,
    ldp_tail_estimate,
    rate_function_eval,
    variational_laplace,
    zero_noise_study,
)

__version__ = "0.1.0"

__all__ = [
    "Grid", "ScalarField", "VectorField", "dealias", "fourier_energy_profile",
    "gradient_spectral", "lp_norm", "sobolev_norm", "KERNEL_BACKEND",
    "NoiseBasis", "NoiseIncrement", "NoiseSpec", "build_basis",
    "cameron_martin_norm", "covariance_eval", "sample_increment",
    "Drift", "DriftSpec", "RegimeReport", "check_regime", "mollify", "synthesize_drift",
    "SolverConfig", "Trajectory", "evolve", "step_ito", "step_stratonovich", "weak_residual",
    "FlowMap", "renormalized_reference", "stochastic_flow_oracle",
    "DissipationEstimate", "EnergyLedger", "dissipation_measure", "energy_ledger",
    "kernel_transfer", "path_distance", "regularization_functional",
    "Control", "ControlSpec", "DeviationEvent", "PathFunctional",
    "dissipation_ldp_check", "girsanov_tilted_sampler", "ldp_tail_estimate",
    "rate_function_eval", "variational_laplace", "zero_noise_study",
    "__version__",
]
