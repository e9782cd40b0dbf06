"""Functional entry points over the specialist solver classes.

Each function builds the solver for the given OptimizerConfig (environment
defaults when omitted) and forwards the call.
"""
from typing import Optional

from models.constraint import ConstraintSet, FullConstraint
from models.result import OptimizerConfig
from services.solvers.capacity_solver import CapacitySolver, chi_objective
from services.solvers.certificate_solver import CertificateSolver, average_distance_check, donald_residual
from services.solvers.convex_roof_solver import ConvexRoofSolver
from services.solvers.ensemble_optimizer import EnsembleOptimizer, SearchOutcome
from services.solvers.supporting_constraint_solver import SupportingConstraintSolver, profile_shape


def _cfg(cfg: Optional[OptimizerConfig]) -> OptimizerConfig:
    return cfg if cfg is not None else OptimizerConfig.from_env()


def hat_H(channel, rho, cfg: Optional[OptimizerConfig] = None):
    return ConvexRoofSolver(_cfg(cfg)).hat_H(channel, rho)


def chi_function(channel, rho, cfg: Optional[OptimizerConfig] = None) -> float:
    return ConvexRoofSolver(_cfg(cfg)).chi_function(channel, rho)


def chi_capacity(channel, constraint: ConstraintSet = FullConstraint(), cfg: Optional[OptimizerConfig] = None):
    return CapacitySolver(_cfg(cfg)).chi_capacity(channel, constraint)


def lagrangian_capacity(channel, effect, lam: float, cfg: Optional[OptimizerConfig] = None,
                        constraint: ConstraintSet = FullConstraint()):
    return CapacitySolver(_cfg(cfg)).lagrangian_capacity(channel, effect, lam, constraint)


def kuhn_tucker_multiplier(channel, A, alpha: float, cfg: Optional[OptimizerConfig] = None):
    return CapacitySolver(_cfg(cfg)).kuhn_tucker_multiplier(channel, A, alpha)


def optimality_certificate(channel, constraint: ConstraintSet, candidate, cfg: Optional[OptimizerConfig] = None,
                           linear=None):
    return CertificateSolver(_cfg(cfg)).certify(channel, constraint, candidate, linear)


def find_supporting_constraint(channel, rho0, cfg: Optional[OptimizerConfig] = None):
    return SupportingConstraintSolver(_cfg(cfg)).find_supporting_constraint(channel, rho0)


def alpha_profile(channel, A, grid, cfg: Optional[OptimizerConfig] = None, mapper=map):
    return SupportingConstraintSolver(_cfg(cfg)).alpha_profile(channel, A, grid, mapper)


def min_output_entropy(channel, cfg: Optional[OptimizerConfig] = None):
    return CapacitySolver(_cfg(cfg)).min_output_entropy(channel)


def additive_constraint_capacity(channel, A, alpha: float, n: int, cfg: Optional[OptimizerConfig] = None) -> float:
    return CapacitySolver(_cfg(cfg)).additive_constraint_capacity(channel, A, alpha, n)


__all__ = [
    'CapacitySolver', 'CertificateSolver', 'ConvexRoofSolver', 'EnsembleOptimizer', 'SearchOutcome',
    'SupportingConstraintSolver', 'additive_constraint_capacity', 'alpha_profile', 'average_distance_check',
    'chi_capacity', 'chi_function', 'chi_objective', 'donald_residual', 'find_supporting_constraint', 'hat_H',
    'kuhn_tucker_multiplier', 'lagrangian_capacity', 'min_output_entropy', 'optimality_certificate',
    'profile_shape',
]
