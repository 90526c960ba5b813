"""Incremental variational solver for strain-gradient visco-plasticity.

Structured 3-D grids (box with one clamped face, or periodic torus), discrete
differential operators, energy and dissipation functionals, the inner
elastic minimization, the incremental time stepper, a periodic Helmholtz
decomposition, and certificate audits over computed trajectories.
"""

from .errors import (ConfigError, ConfigMismatch, GradPlastError, GridMismatch, GrowthViolation,
                     IncompleteTrajectory, InvalidExponent, InvalidN, InvalidSpec, LengthMismatch,
                     NoConvergence, NonSymmetricInput, SnapshotFormatError, TauTooLarge,
                     TopologyUnsupported)
from .grid import (Face, Grid, GridSpec, MatrixField, ScalarField, Topology, VectorField,
                   apply_tangential_mask, inner_product, make_grid, norm, read_snapshot,
                   write_snapshot)
from .operators import (OperatorContext, Scheme, curl_mat, curlcurl_mat, default_context, div_mat,
                        grad_vec, rlaplacian_term, sym)
from .energies import (EnergyConfig, EnergyValue, density_Q, density_R, density_Rstar,
                       energy_breakdown, eval_R_functional, eval_Rstar_functional, eval_We,
                       eval_Wp, grad_E_in_p, grad_Q)
from .elasticity import (InnerSolveResult, PropertyReport, check_marginal_properties, dual_norm,
                         marginal_value, solve_inner)
from .stepper import (DiscreteLoads, LoadSchedule, TrajectoryRecord, discretize_loads,
                      divergence_certificate, incremental_step, interpolants, run)
from .helmholtz import HelmholtzParts, decompose, divcurl_pairing_audit
from .verify import CertificateReport, Tolerances, audit, refinement_study

__all__ = [
    "ConfigError", "ConfigMismatch", "GradPlastError", "GridMismatch", "GrowthViolation",
    "IncompleteTrajectory", "InvalidExponent", "InvalidN", "InvalidSpec", "LengthMismatch",
    "NoConvergence", "NonSymmetricInput", "SnapshotFormatError", "TauTooLarge",
    "TopologyUnsupported", "Face", "Grid", "GridSpec", "MatrixField", "ScalarField", "Topology",
    "VectorField", "apply_tangential_mask", "inner_product", "make_grid", "norm", "read_snapshot",
    "write_snapshot", "OperatorContext", "Scheme", "curl_mat", "curlcurl_mat", "default_context",
    "div_mat", "grad_vec", "rlaplacian_term", "sym", "EnergyConfig", "EnergyValue", "density_Q",
    "density_R", "density_Rstar", "energy_breakdown", "eval_R_functional", "eval_Rstar_functional",
    "eval_We", "eval_Wp", "grad_E_in_p", "grad_Q", "InnerSolveResult", "PropertyReport",
    "check_marginal_properties", "dual_norm", "marginal_value", "solve_inner", "DiscreteLoads",
    "LoadSchedule", "TrajectoryRecord", "discretize_loads", "divergence_certificate",
    "incremental_step", "interpolants", "run", "HelmholtzParts", "decompose",
    "divcurl_pairing_audit", "CertificateReport", "Tolerances", "audit", "refinement_study",
]

__version__ = "0.1.0"
