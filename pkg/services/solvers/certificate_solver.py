import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from models.constraint import ConstraintSet, FullConstraint, LinearConstraint, SingletonConstraint
from models.errors import InvalidInputError
from models.quantum_state import DensityMatrix, Ensemble, as_array, hermitize
from models.result import CapacityResult, Certificate, OptimizerConfig
from services.channel_ops import (Channel, chi_of_ensemble, component_entropy_weight, output_dim,
                                  output_relative_entropy, pure_output_entropies, relative_entropy_kernel)
from services.constraints import (check_feasible, constraint_contains, constraint_terms, has_slater_point,
                                  min_eigenspace)
from services.quantum_ops import average_state
from services.solvers.convex_roof_solver import ConvexRoofSolver
from services.solvers.ensemble_optimizer import EnsembleOptimizer

logger = logging.getLogger(__name__)

NO_SLATER_BOUND = 1e3


class CertificateSolver:
    """
    Specialist solver: maximal-distance optimality certificates.

    For a candidate ensemble with average ρ_av the certificate is the largest
    average of D(Φ(ω)‖Φ(ρ_av)) (plus the linear term of a Lagrangian objective)
    over ensembles whose average stays in the constraint set. The candidate is
    optimal exactly when that supremum does not exceed its own objective value.

    Routes by constraint:
    - Full: sphere search over pure ω
    - Linear: one-multiplier dual, or the min-eigenspace search without a Slater point
    - Singleton: the χ-function at the fixed state
    - Marginals of Full/Linear sides: multi-multiplier dual (Powell)
    Singleton marginals have no certificate; the value is NaN and flagged.
    """

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.optimizer = EnsembleOptimizer(config)

    def certify(self, channel: Channel, constraint: ConstraintSet, candidate: Ensemble,
                linear: Optional[np.ndarray] = None) -> Certificate:
        if candidate.dim != channel.din:
            raise InvalidInputError(f"Candidate dimension {candidate.dim} does not match channel input {channel.din}")
        check_feasible(constraint, channel.din)
        linear = np.zeros((channel.din, channel.din), dtype=complex) if linear is None else as_array(linear)

        average = average_state(candidate).matrix
        chi = chi_of_ensemble(channel, candidate)
        value = chi + float(np.real(np.trace(linear @ average)))
        kernel, deficient = relative_entropy_kernel(channel, average)
        flags = ['support_deficient'] if deficient else []
        if deficient:
            logger.info("Candidate output is rank deficient; off-support directions are penalized")

        if not constraint_contains(constraint, average, tol=1e-6):
            flags.append('candidate_infeasible')

        try:
            cert, multipliers, converged = self._route(channel, constraint, kernel - linear, linear, flags)
        except Exception as e:
            logger.error(f"Certificate search failed: {e}", exc_info=True)
            return Certificate(float('nan'), chi, float('nan'), False, False, (), tuple(flags + ['failed']))

        gap = cert - value
        certified = bool(np.isfinite(gap) and gap <= self.config.tol_certificate)
        return Certificate(float(cert), float(chi), float(gap), certified, converged, tuple(multipliers),
                           tuple(flags))

    def certify_result(self, channel: Channel, constraint: ConstraintSet, result: CapacityResult,
                       linear: Optional[np.ndarray] = None) -> Certificate:
        return self.certify(channel, constraint, result.ensemble, linear)

    def _route(self, channel, constraint, base_kernel, linear, flags) -> Tuple[float, List[float], bool]:
        din = channel.din
        if isinstance(constraint, FullConstraint):
            return self._inner(channel, base_kernel), [], True

        if isinstance(constraint, SingletonConstraint):
            # Over decompositions of ρ the average distance to Φ(ρ) collapses to χ_Φ(ρ).
            rho = constraint.rho.matrix
            chi_rho = ConvexRoofSolver(self.config).chi_function(channel, rho)
            return chi_rho + float(np.real(np.trace(linear @ rho))), [], True

        if isinstance(constraint, LinearConstraint):
            if not has_slater_point(constraint):
                flags.append('no_slater_point')
                subspace = min_eigenspace(constraint.A)
                return self._inner(channel, base_kernel, subspace), [], True
            return self._linear_dual(channel, base_kernel, [(constraint.A.matrix, constraint.alpha)], flags)

        terms = constraint_terms(constraint, din)
        if terms.equalities:
            flags.append('certificate_unavailable')
            return float('nan'), [], False
        if not terms.inequalities:
            return self._inner(channel, base_kernel), [], True
        return self._linear_dual(channel, base_kernel, list(terms.inequalities), flags)

    def _inner(self, channel: Channel, kernel: np.ndarray, subspace: Optional[np.ndarray] = None) -> float:
        """max over pure ω of −[H(Φ(ω)) − H(q)] − ⟨ω|K|ω⟩."""
        offset = component_entropy_weight(channel)
        kernel = hermitize(kernel)

        def distance(vector):
            entropy = float(pure_output_entropies(channel, vector[np.newaxis])[0])
            return offset - entropy - float(np.real(np.vdot(vector, kernel @ vector)))

        return self.optimizer.maximize_vector(distance, channel.din, subspace).value

    def _linear_dual(self, channel, base_kernel, inequalities, flags) -> Tuple[float, List[float], bool]:
        """min over μ ≥ 0 of Σ μ_k level_k + inner(K + Σ μ_k M_k)."""

        def dual(mu):
            mu = np.maximum(np.atleast_1d(mu), 0.0)
            kernel = base_kernel + sum(m * M for m, (M, _) in zip(mu, inequalities))
            return float(sum(m * level for m, (_, level) in zip(mu, inequalities))) + self._inner(channel, kernel)

        unconstrained = dual(np.zeros(len(inequalities)))
        # inner(·) never drops below −‖K‖ − log dim(out); past these bounds the dual only grows.
        offset = float(np.max(np.abs(np.linalg.eigvalsh(hermitize(base_kernel))))) + np.log2(output_dim(channel))
        bounds = []
        for M, level in inequalities:
            margin = level - float(np.linalg.eigvalsh(M).min())
            if margin <= 1e-9:
                flags.append('no_slater_point')
                bounds.append(NO_SLATER_BOUND)
            else:
                bounds.append(max(abs(unconstrained) + offset, 1e-6) / margin)

        if len(inequalities) == 1:
            result = minimize_scalar(dual, bounds=(0.0, bounds[0]), method='bounded', options={'xatol': 1e-7})
            best_mu, best = np.array([result.x]), float(result.fun)
            converged = bool(result.success)
        else:
            result = minimize(dual, np.zeros(len(inequalities)), method='Powell',
                              bounds=[(0.0, b) for b in bounds],
                              options={'xtol': 1e-6, 'ftol': 1e-10, 'maxiter': self.config.max_iterations})
            best_mu, best = np.maximum(np.atleast_1d(result.x), 0.0), float(result.fun)
            converged = bool(result.success)

        if unconstrained <= best:
            return unconstrained, [0.0] * len(inequalities), converged
        if not converged:
            flags.append('dual_not_converged')
        return best, [float(m) for m in best_mu], converged


def average_distance_check(channel: Channel, constraint: ConstraintSet, optimal: CapacityResult, rho,
                           config: OptimizerConfig) -> float:
    """C̄ − χ_Φ(ρ) − D(Φ(ρ)‖Φ(ρ_av)) for a state ρ inside the constraint set.

    Non-negative whenever ``optimal`` really is optimal (up to solver tolerance).
    """
    state = rho if isinstance(rho, DensityMatrix) else DensityMatrix(as_array(rho))
    if not constraint_contains(constraint, state.matrix, tol=1e-8):
        raise InvalidInputError("ρ must lie in the constraint set")
    distance = output_relative_entropy(channel, state.matrix, optimal.average.matrix)
    chi_rho = ConvexRoofSolver(config).chi_function(channel, state)
    return optimal.value - chi_rho - distance


def donald_residual(channel: Channel, ensemble: Ensemble, reference) -> float:
    """|Σ π_i D(Φ(ρ_i)‖Φ(σ)) − χ − D(Φ(ρ_av)‖Φ(σ))|; +inf when a term leaves the support of Φ(σ)."""
    sigma = as_array(reference)
    if sigma.shape != (channel.din, channel.din):
        raise InvalidInputError(f"Reference of shape {sigma.shape} does not match channel input {channel.din}")
    average = average_state(ensemble).matrix
    terms = [output_relative_entropy(channel, s.matrix, sigma) for s in ensemble.states]
    to_average = output_relative_entropy(channel, average, sigma)
    if not np.all(np.isfinite(terms)) or not np.isfinite(to_average):
        logger.warning("Reference output misses the support of a term; residual marked infinite")
        return float('inf')
    return abs(float(ensemble.weights @ np.array(terms)) - chi_of_ensemble(channel, ensemble) - to_average)
