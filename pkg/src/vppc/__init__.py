"""Particle simulator and verification harness for a repulsive plasma
interacting with a moving point charge.

Regularized Lagrangian flows (weight cutoff near the charge plus softened
pair interaction) are integrated with an embedded Runge-Kutta pair, and the
package checks the conserved quantities, a priori bounds, and flow-stability
functionals that control the removal of the regularization.
"""

__version__ = "0.1.0"

from .backend import get_backend, set_backend
from .core import (
    InitialDensity,
    ParticleEnsemble,
    PointChargeState,
    SimulationConfig,
    apply_cutoff,
    default_density,
    sample_initial_ensemble,
    sample_uniform_ball,
    uniform_box_density,
)
from .dynamics import FloorAbortError, FlowRecord, run, run_ensemble, run_pair, step
from .fields import (
    NearSingularityError,
    gradient_kernel,
    plasma_field,
    point_charge_field,
    uniform_ball_field,
)
from .diagnostics import (
    DiagnosticSeries,
    energy_moment,
    fit_power_bound,
    interpolation_constant,
    total_energy,
    total_mass,
    virial_rate,
)
from .analysis import (
    GridField,
    centered_grid,
    interpolation_m1_lp,
    make_grid,
    point_charge_weak_norm,
    singular_convolution,
    smooth_maximal,
    weak_pseudo_norm,
)
from .flowmetrics import (
    MetricParams,
    SublevelReport,
    beta,
    beta_prime,
    chebyshev_consistency,
    compressibility_estimate,
    convergence_in_measure,
    loglog_moment,
    phi_functional,
    sublevel_report,
    superlevel_measure,
)

__all__ = [
    "__version__",
    "get_backend",
    "set_backend",
    "InitialDensity",
    "ParticleEnsemble",
    "PointChargeState",
    "SimulationConfig",
    "apply_cutoff",
    "default_density",
    "sample_initial_ensemble",
    "sample_uniform_ball",
    "uniform_box_density",
    "FloorAbortError",
    "FlowRecord",
    "run",
    "run_ensemble",
    "run_pair",
    "step",
    "NearSingularityError",
    "gradient_kernel",
    "plasma_field",
    "point_charge_field",
    "uniform_ball_field",
    "DiagnosticSeries",
    "energy_moment",
    "fit_power_bound",
    "interpolation_constant",
    "total_energy",
    "total_mass",
    "virial_rate",
    "GridField",
    "centered_grid",
    "interpolation_m1_lp",
    "make_grid",
    "point_charge_weak_norm",
    "singular_convolution",
    "smooth_maximal",
    "weak_pseudo_norm",
    "MetricParams",
    "SublevelReport",
    "beta",
    "beta_prime",
    "chebyshev_consistency",
    "compressibility_estimate",
    "convergence_in_measure",
    "loglog_moment",
    "phi_functional",
    "sublevel_report",
    "superlevel_measure",
]
