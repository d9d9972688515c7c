"""Stochastic spectral Galerkin solver for incompressible flow on the torus.

Solves the incompressible Navier-Stokes and Euler equations with additive
and Stratonovich transport noise by truncation onto an explicit solenoidal
trigonometric basis, and certifies the structural properties of the
resulting finite-dimensional SDE: exact skew-symmetry of the convection
tensor, pathwise and mean energy balances, Ito/Stratonovich consistency,
second-moment defect fields of Monte-Carlo ensembles, energy-variational
inequalities, relative-energy stability, and vanishing-viscosity behavior.
"""

from .basis import (
    BasisSpec,
    BasisError,
    ConvectionTensor,
    TrigField,
    build_basis,
    convection_tensor,
    dissipation_matrix,
    evaluate_field,
    leray_project,
    project_field,
    solenoidal_field,
)
from .noise import (
    AdditiveNoise,
    NoiseError,
    NoiseSpec,
    TransportNoise,
    assemble_eta,
    assemble_zeta,
    build_noise,
    check_orthogonality,
    hs_norm,
    ito_correction,
)
from .sde import (
    BrownianPath,
    GalerkinSystem,
    SdeError,
    Trajectory,
    build_system,
    diffusion,
    drift,
    integrate,
    step_euler_maruyama,
    step_heun_stratonovich,
)
from .diagnostics import (
    DefectField,
    DiagnosticsError,
    EnergyRecord,
    TestProcessRep,
    dissipative_weak_residual,
    energy_record,
    energy_residual,
    energy_variational_gap,
    make_test_processes,
    neg_part_spectral_sup,
    relative_energy,
    reynolds_defect,
)
from .ensemble import (
    EmpiricalYoungMeasure,
    Ensemble,
    EnsembleError,
    empirical_measure,
    moment_report,
    run_ensemble,
    young_eval,
)
from .experiments import SweepPlan, kernel_benchmark, order_study, viscosity_sweep

__version__ = "0.1.0"
