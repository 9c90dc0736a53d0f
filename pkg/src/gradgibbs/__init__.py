"""Gradient Gibbs lattice models: Hamiltonians, constrained samplers and free-energy estimators."""

__version__ = "0.1.0"

from .lattice import AffineMap, Box, Configuration, LatticeDomain, PLField, build_domain, discretize
from .potential import GrowthConstants, PotentialSpec, bound_constants, constant_c
from .hamiltonian import energy, lr_neighborhood, null_lagrangian_energy, soft_clamp, total_energy
from .sampler import SampleBatch, exact_gaussian, metropolis_run, quadrature_logZ
from .free_energy import Budget, FreeEnergyEstimate, estimate_W, gaussian_W_limit, logZ_thermo
from .nonconvexity import NonconvexityReport, run_nonconvexity
from .ldp_yg import MacroField, WTable, blowup_select, ldp_check, rate_functional, window_stats

__all__ = [
    "AffineMap", "Box", "Configuration", "LatticeDomain", "PLField", "build_domain", "discretize",
    "GrowthConstants", "PotentialSpec", "bound_constants", "constant_c",
    "energy", "lr_neighborhood", "null_lagrangian_energy", "soft_clamp", "total_energy",
    "SampleBatch", "exact_gaussian", "metropolis_run", "quadrature_logZ",
    "Budget", "FreeEnergyEstimate", "estimate_W", "gaussian_W_limit", "logZ_thermo",
    "NonconvexityReport", "run_nonconvexity",
    "MacroField", "WTable", "blowup_select", "ldp_check", "rate_functional", "window_stats",
]
