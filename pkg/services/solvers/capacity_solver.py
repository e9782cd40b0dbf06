import logging
from typing import Optional, Tuple

import numpy as np

from models.channel import KrausChannel
from models.constraint import ConstraintSet, FullConstraint, LinearConstraint, SingletonConstraint
from models.errors import ChiCapacityError, InvalidInputError, UnsupportedOperationError
from models.quantum_state import Ensemble, HermitianOperator, as_array
from models.result import CapacityResult, OptimizerConfig
from services.channel_ops import (Channel, chi_of_ensemble, output_entropy, pure_output_entropies,
                                  tensor_channels)
from services.constraints import (check_feasible, constraint_terms, has_slater_point, min_eigenspace,
                                  repair_vector, tensor_power_constraint, violation)
from services.quantum_ops import average_state
from services.solvers.certificate_solver import CertificateSolver
from services.solvers.convex_roof_solver import ConvexRoofSolver
from services.solvers.ensemble_optimizer import (EnsembleOptimizer, SearchOutcome, pure_average, to_ensemble)

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-8
SLACKNESS_TOL = 1e-6
KT_MAX_BISECTIONS = 40
KT_MAX_BRACKET = 2.0 ** 20


def chi_objective(channel: Channel, linear: Optional[np.ndarray] = None):
    """χ of a pure-state ensemble, plus Tr(linear·ρ_av) when a linear term is given."""

    def objective(weights: np.ndarray, vectors: np.ndarray) -> float:
        average = pure_average(weights, vectors)
        value = output_entropy(channel, average) - float(weights @ pure_output_entropies(channel, vectors))
        if linear is not None:
            value += float(np.real(np.trace(linear @ average)))
        return value

    return objective


def _trace(operator: np.ndarray, matrix: np.ndarray) -> float:
    return float(np.real(np.trace(operator @ matrix)))


class CapacitySolver:
    """
    Specialist solver: constrained χ-capacities and their Lagrangian relatives.

    Primary route is a multi-start ascent over pure-state ensembles with the
    constraint handed to SLSQP; an infeasible end point is repaired by mixing in a
    constraint-minimizing state, and a linear constraint whose direct route fails
    falls back to Kuhn–Tucker bisection on the Lagrangian problem. Every result is
    closed with a maximal-distance certificate, which decides ``converged``.
    """

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.optimizer = EnsembleOptimizer(config)
        self.roof = ConvexRoofSolver(config)
        self.certifier = CertificateSolver(config)

    # Public entry points

    def chi_capacity(self, channel: Channel, constraint: ConstraintSet, certify: bool = True) -> CapacityResult:
        check_feasible(constraint, channel.din)
        logger.debug(f"χ-capacity on din={channel.din} under {type(constraint).__name__}")

        if isinstance(constraint, SingletonConstraint):
            outcome = self.roof.decompose(channel, constraint.rho)
            return self._finalize(channel, constraint, outcome, certify=certify)

        if isinstance(constraint, LinearConstraint) and not has_slater_point(constraint):
            return self._solve_in_subspace(channel, constraint, certify)

        try:
            return self.solve(channel, constraint, certify=certify)
        except ChiCapacityError as e:
            if not isinstance(constraint, LinearConstraint):
                raise
            logger.warning(f"Direct constrained search failed ({e}); falling back to Kuhn–Tucker bisection")
            return self.kuhn_tucker_multiplier(channel, constraint.A, constraint.alpha)[1]

    def lagrangian_capacity(self, channel: Channel, effect, lam: float,
                            constraint: ConstraintSet = FullConstraint(), certify: bool = True,
                            initial: Optional[np.ndarray] = None) -> CapacityResult:
        """max over ensembles of χ + λ·Tr E ρ_av."""
        if lam < 0:
            raise InvalidInputError(f"λ must be non-negative, got {lam}")
        linear = lam * as_array(effect)
        return self.solve(channel, constraint, linear=linear, certify=certify, initial=initial, multiplier=lam)

    def solve(self, channel: Channel, constraint: ConstraintSet, linear: Optional[np.ndarray] = None,
              certify: bool = True, initial: Optional[np.ndarray] = None,
              multiplier: Optional[float] = None) -> CapacityResult:
        """Generic ensemble ascent for Full, Linear and Marginals constraints."""
        terms = constraint_terms(constraint, channel.din)
        outcome = self.optimizer.maximize_ensemble(chi_objective(channel, linear), channel.din,
                                                   self.config.size_for(channel.din), terms, initial=initial)
        if outcome.feasibility > FEASIBILITY_TOL:
            outcome = self._repair(outcome, constraint, channel.din, terms)
        return self._finalize(channel, constraint, outcome, linear, certify, multiplier)

    def kuhn_tucker_multiplier(self, channel: Channel, A, alpha: float) -> Tuple[float, CapacityResult]:
        """λ ≥ 0 with complementary slackness for Tr A ρ_av ≤ α, and the constrained optimum.

        Bisection runs on λ ↦ Tr A ρ*_av(λ), where ρ*_av(λ) maximizes χ + λ Tr(I − A)ρ.
        """
        constraint = LinearConstraint(A if isinstance(A, HermitianOperator) else HermitianOperator(A), alpha)
        check_feasible(constraint, channel.din)
        if not has_slater_point(constraint):
            raise InvalidInputError("No Slater point: α equals the smallest eigenvalue of A")
        A_matrix = constraint.A.matrix
        effect = np.eye(channel.din) - A_matrix

        def level(result: CapacityResult) -> float:
            return _trace(A_matrix, result.average.matrix)

        def solve_at(lam: float, warm: Optional[CapacityResult]) -> CapacityResult:
            return self.lagrangian_capacity(channel, effect, lam, certify=False,
                                            initial=warm.witness if warm is not None else None)

        lo_res = solve_at(0.0, None)
        if level(lo_res) <= alpha + 1e-9:
            logger.info("Constraint inactive at the unconstrained optimum; λ = 0")
            return 0.0, self._close_linear(channel, constraint, lo_res.ensemble, 0.0, flags=('inactive',))

        lo, hi, hi_res, overflow = 0.0, 1.0, None, False
        while True:
            hi_res = solve_at(hi, lo_res)
            if level(hi_res) <= alpha:
                break
            lo, lo_res = hi, hi_res
            hi *= 2.0
            if hi > KT_MAX_BRACKET:
                overflow = True
                break
        if overflow:
            logger.warning(f"Kuhn–Tucker bracket exceeded {KT_MAX_BRACKET:g}; reporting non-converged result")
            return lo, self._close_linear(channel, constraint, hi_res.ensemble, lo, flags=('bracket_overflow',))

        for step in range(KT_MAX_BISECTIONS):
            mid = 0.5 * (lo + hi)
            mid_res = solve_at(mid, hi_res)
            mid_level = level(mid_res)
            if abs(mid_level - alpha) <= SLACKNESS_TOL:
                lo = hi = mid
                lo_res = hi_res = mid_res
                break
            if mid_level > alpha:
                lo, lo_res = mid, mid_res
            else:
                hi, hi_res = mid, mid_res
            if hi - lo <= 1e-9 * max(1.0, hi):
                break
        lam = hi
        logger.info(f"Kuhn–Tucker multiplier λ = {lam:.9g} (bracket width {hi - lo:.2e})")

        ensemble = self._mix_to_level(lo_res.ensemble, hi_res.ensemble, A_matrix, alpha)
        return lam, self._close_linear(channel, constraint, ensemble, lam)

    def min_output_entropy(self, channel: Channel) -> Tuple[float, np.ndarray]:
        """min over pure ψ of H(Φ(ψψ†))."""
        outcome = self.optimizer.maximize_vector(
            lambda v: -float(pure_output_entropies(channel, v[np.newaxis])[0]), channel.din)
        return max(-outcome.value, 0.0), outcome.vectors[0]

    def additive_constraint_capacity(self, channel: KrausChannel, A, alpha: float, n: int) -> float:
        """(1/n)·C̄(Φ^{⊗n}; A⁽ⁿ⁾/n, α) for n ∈ {1, 2}."""
        n = int(n)
        if n not in (1, 2):
            raise UnsupportedOperationError(f"Additive constraints are supported for n ≤ 2, got n = {n}")
        if n == 1:
            return self.chi_capacity(channel, LinearConstraint(HermitianOperator(as_array(A)), alpha)).value
        if not isinstance(channel, KrausChannel):
            raise UnsupportedOperationError("Tensor powers need a Kraus channel")
        power = tensor_channels(channel, channel)
        operator = HermitianOperator(tensor_power_constraint(A, 2) / 2.0)
        return self.chi_capacity(power, LinearConstraint(operator, alpha)).value / 2.0

    # Helpers

    def _solve_in_subspace(self, channel: Channel, constraint: LinearConstraint, certify: bool) -> CapacityResult:
        """α at the bottom of spec A: averages must live in the minimal eigenspace."""
        basis = min_eigenspace(constraint.A)
        k = basis.shape[1]
        objective = chi_objective(channel)
        outcome = self.optimizer.maximize_ensemble(lambda w, c: objective(w, c @ basis.T), k,
                                                   self.config.size_for(k))
        outcome.vectors = outcome.vectors @ basis.T
        return self._finalize(channel, constraint, outcome, certify=certify, flags=('no_slater_point',))

    def _repair(self, outcome: SearchOutcome, constraint: ConstraintSet, din: int, terms) -> SearchOutcome:
        vector = repair_vector(constraint, din)
        if vector is None or terms.equalities:
            logger.warning(f"Infeasible end point ({outcome.feasibility:.2e}) with no repair state available")
            return outcome
        average = outcome.average
        projector = np.outer(vector, vector.conj())
        t = 0.0
        for M, level in terms.inequalities:
            current, floor = _trace(M, average), _trace(M, projector)
            if current > level and current > floor:
                t = max(t, (current - level) / (current - floor))
        t = min(t, 1.0)
        logger.info(f"Repairing infeasible average ({outcome.feasibility:.2e}) with mixing weight {t:.3e}")
        outcome.weights = np.append((1.0 - t) * outcome.weights, t)
        outcome.vectors = np.vstack([outcome.vectors, vector[np.newaxis]])
        outcome.feasibility = 0.0
        return outcome

    @staticmethod
    def _mix_to_level(above: Ensemble, below: Ensemble, A: np.ndarray, alpha: float) -> Ensemble:
        """Convex combination of two ensembles whose average meets Tr A ρ_av = α."""
        a_hi = _trace(A, average_state(above).matrix)
        a_lo = _trace(A, average_state(below).matrix)
        if a_hi <= alpha + 1e-12 or a_hi - a_lo <= 1e-15:
            return below
        t = float(np.clip((a_hi - alpha) / (a_hi - a_lo), 0.0, 1.0))
        weights = np.concatenate([(1.0 - t) * above.weights, t * below.weights])
        states = above.states + below.states
        keep = weights > 0
        weights = weights[keep]
        return Ensemble(weights / weights.sum(), tuple(s for s, k in zip(states, keep) if k))

    def _close_linear(self, channel, constraint: LinearConstraint, ensemble: Ensemble, lam: float,
                      flags: tuple = ()) -> CapacityResult:
        chi = chi_of_ensemble(channel, ensemble)
        average = average_state(ensemble)
        certificate = self.certifier.certify(channel, constraint, ensemble)
        slackness = abs(lam * (_trace(constraint.A.matrix, average.matrix) - constraint.alpha))
        feasibility = violation(constraint, average.matrix)
        converged = certificate.certified and slackness <= SLACKNESS_TOL and 'bracket_overflow' not in flags
        return CapacityResult(chi, ensemble, average, chi, certificate.value, certificate.gap, lam, converged,
                              0, feasibility, tuple(flags) + certificate.flags)

    def _finalize(self, channel: Channel, constraint: ConstraintSet, outcome: SearchOutcome,
                  linear: Optional[np.ndarray] = None, certify: bool = True,
                  multiplier: Optional[float] = None, flags: tuple = ()) -> CapacityResult:
        ensemble = to_ensemble(outcome.weights, outcome.vectors)
        average = average_state(ensemble)
        chi = chi_of_ensemble(channel, ensemble)
        value = chi + (_trace(linear, average.matrix) if linear is not None else 0.0)
        feasibility = violation(constraint, average.matrix)
        flags = list(flags)
        if feasibility > FEASIBILITY_TOL:
            flags.append('infeasible')
        if certify:
            certificate = self.certifier.certify(channel, constraint, ensemble, linear)
            cert_value, gap = certificate.value, certificate.gap
            flags.extend(certificate.flags)
            if np.isnan(gap):
                converged = outcome.success and feasibility <= FEASIBILITY_TOL
            else:
                converged = certificate.certified and feasibility <= FEASIBILITY_TOL
        else:
            cert_value, gap, converged = float('nan'), float('nan'), outcome.success

        return CapacityResult(value, ensemble, average, chi, cert_value, gap, multiplier, bool(converged),
                              outcome.iterations, feasibility, tuple(flags), witness=outcome.witness)
