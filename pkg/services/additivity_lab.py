import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Optional, Tuple

import numpy as np
from scipy.linalg import expm

from models.channel import BlockChannel, KrausChannel
from models.constraint import ConstraintSet, LinearConstraint, MarginalsConstraint, SingletonConstraint
from models.errors import ChiCapacityError, InvalidInputError
from models.quantum_state import DensityMatrix, HermitianOperator, as_array, hermitize, matrix_to_literal
from models.result import GapReport, OptimizerConfig
from services.channel_ops import (Channel, is_unitary_channel, noiseless, output_entropy, tensor_any,
                                  tensor_channels)
from services.quantum_ops import (entropy, make_rng, measurement_posteriors, random_entangled_state,
                                  reduce_operator)
from services.solvers.capacity_solver import CapacitySolver
from services.solvers.convex_roof_solver import ConvexRoofSolver

logger = logging.getLogger(__name__)

NOISELESS_TOL = 1e-2
SEARCH_STEP = 0.15

Mapper = Callable[[Callable, Iterable], Iterable]


def _state(value) -> DensityMatrix:
    return value if isinstance(value, DensityMatrix) else DensityMatrix(as_array(value))


def additivity_is_proven(phi: Channel, psi: Channel) -> bool:
    """Subadditivity is known when either factor is noiseless (up to a unitary) or entanglement breaking."""
    return any(is_unitary_channel(c) or getattr(c, 'is_entanglement_breaking', False) for c in (phi, psi))


def _same_channel(a: Channel, b: Channel) -> bool:
    if a is b:
        return True
    if not (isinstance(a, KrausChannel) and isinstance(b, KrausChannel)):
        return False
    return a.kraus_ops.shape == b.kraus_ops.shape and np.allclose(a.kraus_ops, b.kraus_ops)


def _is_product(matrix: np.ndarray, dims: Tuple[int, int], tol: float = 1e-9) -> bool:
    product = np.kron(reduce_operator(matrix, dims, 0), reduce_operator(matrix, dims, 1))
    return float(np.max(np.abs(matrix - product))) <= tol


@dataclass(frozen=True)
class RoofTerms:
    """Output entropies and convex-roof values shared by the χ- and Ĥ-gaps of one instance."""

    out_joint: float
    out_left: float
    out_right: float
    roof_joint: float
    roof_left: float
    roof_right: float
    product: bool

    @property
    def entropy_slack(self) -> float:
        """Subadditivity slack of the output entropy: H(Φ(σ^Φ)) + H(Ψ(σ^Ψ)) − H((Φ⊗Ψ)(σ))."""
        return self.out_left + self.out_right - self.out_joint


class AdditivityLab:
    """
    Gap evaluators for additivity-type statements and the suites that check
    their proven cases.

    Every report carries gap = rhs − lhs. Conjectured inequalities come back with
    status 'report'; proven ones (noiseless or entanglement-breaking factors, the
    direct-sum chain, trivial product directions) come back as 'pass' or 'fail'.
    """

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.roof = ConvexRoofSolver(config)
        self.capacity = CapacitySolver(config)

    @property
    def tolerance(self) -> float:
        return 2.0 * self.config.tol_certificate

    def _instance(self, **records) -> Dict:
        instance = {}
        for name, value in records.items():
            if hasattr(value, 'to_dict'):
                instance[name] = value.to_dict()
            elif isinstance(value, np.ndarray):
                instance[name] = matrix_to_literal(value)
            else:
                instance[name] = value
        return instance

    # χ-function and convex-roof gaps

    def roof_terms(self, phi: Channel, psi: KrausChannel, sigma) -> RoofTerms:
        matrix = _state(sigma).matrix
        dims = (phi.din, psi.din)
        if matrix.shape[0] != dims[0] * dims[1]:
            raise InvalidInputError(f"State of size {matrix.shape[0]} does not factor as {dims[0]}x{dims[1]}")
        left, right = reduce_operator(matrix, dims, 0), reduce_operator(matrix, dims, 1)
        joint = tensor_any(phi, psi)
        return RoofTerms(
            out_joint=output_entropy(joint, matrix),
            out_left=output_entropy(phi, left),
            out_right=output_entropy(psi, right),
            roof_joint=self.roof.decompose(joint, matrix).value,
            roof_left=self.roof.decompose(phi, left).value,
            roof_right=self.roof.decompose(psi, right).value,
            product=_is_product(matrix, dims),
        )

    def subadditivity_gap(self, phi: Channel, psi: KrausChannel, sigma,
                          terms: Optional[RoofTerms] = None) -> GapReport:
        """χ_Φ(σ^Φ) + χ_Ψ(σ^Ψ) − χ_{Φ⊗Ψ}(σ)."""
        terms = terms or self.roof_terms(phi, psi, sigma)
        lhs = terms.out_joint - terms.roof_joint
        rhs = (terms.out_left - terms.roof_left) + (terms.out_right - terms.roof_right)
        checks = {'product_trivial_direction': rhs - lhs <= self.tolerance} if terms.product else {}
        return GapReport('chi_subadditivity', lhs, rhs, self.tolerance,
                         instance=self._instance(phi=phi, psi=psi, sigma=_state(sigma)), seed=self.config.seed,
                         proven=additivity_is_proven(phi, psi), checks=checks)

    def hatH_superadditivity_gap(self, phi: Channel, psi: KrausChannel, sigma,
                                 terms: Optional[RoofTerms] = None) -> GapReport:
        """Ĥ_{Φ⊗Ψ}(σ) − Ĥ_Φ(σ^Φ) − Ĥ_Ψ(σ^Ψ)."""
        terms = terms or self.roof_terms(phi, psi, sigma)
        lhs = terms.roof_left + terms.roof_right
        checks = {'product_trivial_direction': terms.roof_joint - lhs <= self.tolerance} if terms.product else {}
        return GapReport('hatH_superadditivity', lhs, terms.roof_joint, self.tolerance,
                         instance=self._instance(phi=phi, psi=psi, sigma=_state(sigma)), seed=self.config.seed,
                         checks=checks)

    def equivalence_check(self, phi: Channel, psi: KrausChannel, sigma) -> Dict:
        """Both gaps on one instance; the χ-gap is the Ĥ-gap plus the output entropy slack."""
        terms = self.roof_terms(phi, psi, sigma)
        chi_gap = self.subadditivity_gap(phi, psi, sigma, terms)
        roof_gap = self.hatH_superadditivity_gap(phi, psi, sigma, terms)
        consistent = roof_gap.gap < -self.tolerance or chi_gap.gap >= -self.tolerance
        if not consistent:
            logger.error("Ĥ-superadditivity holds but χ-subadditivity fails on the same instance")
        return {'chi_subadditivity': chi_gap, 'hatH_superadditivity': roof_gap,
                'entropy_slack': terms.entropy_slack, 'consistent': consistent}

    def product_additivity_check(self, phi: Channel, psi: KrausChannel, rho, omega) -> GapReport:
        """χ_{Φ⊗Ψ}(ρ⊗ω) against χ_Φ(ρ) + χ_Ψ(ω); the joint value can never fall short."""
        rho, omega = _state(rho), _state(omega)
        joint = self.roof.chi_function(tensor_any(phi, psi), np.kron(rho.matrix, omega.matrix))
        lhs = self.roof.chi_function(phi, rho) + self.roof.chi_function(psi, omega)
        return GapReport('chi_product', lhs, joint, self.tolerance,
                         instance=self._instance(phi=phi, psi=psi, rho=rho, omega=omega), seed=self.config.seed,
                         proven=True)

    # Constrained capacities

    def constrained_additivity_gap(self, phi: Channel, A: ConstraintSet, psi: KrausChannel,
                                   B: ConstraintSet) -> GapReport:
        """C̄(Φ; A) + C̄(Ψ; B) − C̄(Φ⊗Ψ; A⊗B)."""
        left = self.capacity.chi_capacity(phi, A)
        right = self.capacity.chi_capacity(psi, B)
        joint = self.capacity.chi_capacity(tensor_any(phi, psi), MarginalsConstraint(A, B, dims=(phi.din, psi.din)))
        rhs = left.value + right.value
        return GapReport('constrained_additivity', joint.value, rhs, self.tolerance,
                         instance=self._instance(phi=phi, A=A, psi=psi, B=B), seed=self.config.seed,
                         converged=left.converged and right.converged and joint.converged,
                         proven=additivity_is_proven(phi, psi),
                         details={'left': left.value, 'right': right.value},
                         checks={'trivial_direction': rhs - joint.value <= self.tolerance})

    def noiseless_singleton_check(self, psi: KrausChannel, rho, omega) -> GapReport:
        """C̄(Id⊗Ψ; {ρ}⊗{ω}) = H(ρ) + χ_Ψ(ω)."""
        rho, omega = _state(rho), _state(omega)
        identity = noiseless(rho.dim)
        constraint = MarginalsConstraint(SingletonConstraint(rho), SingletonConstraint(omega), dims=(rho.dim, omega.dim))
        joint = self.capacity.chi_capacity(tensor_channels(identity, psi), constraint)
        rhs = entropy(rho) + self.roof.chi_function(psi, omega)
        return GapReport('noiseless_singleton', joint.value, rhs, NOISELESS_TOL,
                         instance=self._instance(psi=psi, rho=rho, omega=omega), seed=self.config.seed,
                         converged=joint.converged, proven=True, two_sided=True)

    def direct_sum_chain_check(self, phi0: KrausChannel, psi: KrausChannel, q: float, sigma) -> GapReport:
        """Subadditivity for q·Id ⊕ (1−q)·Φ₀ through its chain of intermediate bounds.

        L1 = χ_{Φ_q⊗Ψ}(σ)
        L2 = q χ_{Id⊗Ψ}(σ) + (1−q) χ_{Φ₀⊗Ψ}(σ)
        L3 = q [H(σ^Φ) + χ_Ψ(σ^Ψ)] + (1−q) [χ_{Φ₀}(σ^Φ) + χ_Ψ(σ^Ψ)]
        L4 = q H(σ^Φ) + (1−q) χ_{Φ₀}(σ^Φ) + χ_Ψ(σ^Ψ)
        L5 = χ_{Φ_q}(σ^Φ) + χ_Ψ(σ^Ψ)
        """
        if not 0.0 <= q <= 1.0:
            raise InvalidInputError(f"q must lie in [0, 1], got {q}")
        state = _state(sigma)
        dims = (phi0.din, psi.din)
        left = reduce_operator(state.matrix, dims, 0)
        right = reduce_operator(state.matrix, dims, 1)
        identity = noiseless(phi0.din)
        mixture = BlockChannel(((q, identity), (1.0 - q, phi0)))

        chi = self.roof.chi_function
        chi_right = chi(psi, right)
        chi_phi0 = chi(phi0, left)
        h_left = entropy(left)
        lines = {
            'L1': chi(tensor_any(mixture, psi), state.matrix),
            'L2': q * chi(tensor_channels(identity, psi), state.matrix)
                  + (1.0 - q) * chi(tensor_channels(phi0, psi), state.matrix),
            'L3': q * (h_left + chi_right) + (1.0 - q) * (chi_phi0 + chi_right),
            'L4': q * h_left + (1.0 - q) * chi_phi0 + chi_right,
            'L5': chi(mixture, left) + chi_right,
        }
        tol = self.tolerance
        checks = {
            'blockwise_bound': lines['L1'] <= lines['L2'] + tol,
            'pure_mixture_identity': abs(lines['L4'] - lines['L5']) <= tol,
        }
        inner_proven = additivity_is_proven(phi0, psi)
        if inner_proven:
            checks['componentwise_subadditivity'] = lines['L2'] <= lines['L3'] + tol
        return GapReport('direct_sum_chain', lines['L1'], lines['L5'], tol,
                         instance=self._instance(phi0=phi0, psi=psi, q=q, sigma=state), seed=self.config.seed,
                         proven=inner_proven, details=lines, checks=checks)

    def weak_additivity_check(self, phi: Channel, A, psi: KrausChannel, B, gamma: float,
                              grid_n: int = 11) -> GapReport:
        """C̄(Φ⊗Ψ; Tr(A⊗I + I⊗B)σ ≤ γ) against the best split α + β = γ on a grid."""
        A = A if isinstance(A, HermitianOperator) else HermitianOperator(as_array(A))
        B = B if isinstance(B, HermitianOperator) else HermitianOperator(as_array(B))
        a_min, b_min = float(A.spectrum.min()), float(B.spectrum.min())
        lo, hi = max(a_min, gamma - 1.0), min(1.0, gamma - b_min)
        if lo > hi + 1e-12:
            raise InvalidInputError(f"γ = {gamma:.6g} is infeasible for the joint constraint")
        if int(grid_n) < 1:
            raise InvalidInputError(f"grid_n must be ≥ 1, got {grid_n}")

        joint_operator = 0.5 * (np.kron(A.matrix, np.eye(psi.din)) + np.kron(np.eye(phi.din), B.matrix))
        joint = self.capacity.chi_capacity(tensor_any(phi, psi),
                                           LinearConstraint(HermitianOperator(joint_operator), min(gamma / 2.0, 1.0)))

        def split_value(alpha: float) -> float:
            beta = float(np.clip(gamma - alpha, b_min, 1.0))
            alpha = float(np.clip(alpha, a_min, 1.0))
            return (self.capacity.chi_capacity(phi, LinearConstraint(A, alpha)).value
                    + self.capacity.chi_capacity(psi, LinearConstraint(B, beta)).value)

        alphas = np.linspace(lo, hi, int(grid_n)) if grid_n > 1 else np.array([lo])
        values = np.array([split_value(a) for a in alphas])
        best = int(np.argmax(values))
        rhs = float(values[best])
        tol = self.tolerance
        checks = {'trivial_direction': rhs - joint.value <= tol}
        details = {'best_alpha': float(alphas[best]), 'grid': [float(a) for a in alphas],
                   'split_values': [float(v) for v in values]}
        if _same_channel(phi, psi) and np.allclose(A.matrix, B.matrix) and lo <= gamma / 2.0 <= hi:
            symmetric = split_value(gamma / 2.0)
            details['symmetric_value'] = symmetric
            checks['symmetric_split'] = symmetric >= rhs - tol
        return GapReport('weak_additivity', joint.value, rhs, tol,
                         instance=self._instance(phi=phi, A=A, psi=psi, B=B, gamma=gamma, grid_n=int(grid_n)),
                         seed=self.config.seed, converged=joint.converged, details=details, checks=checks)

    # Randomized search

    def violation_search(self, phi: Channel, psi: KrausChannel, budget: int, mapper: Mapper = map) -> GapReport:
        """Smallest χ-subadditivity gap found by sampling entangled states and hill-climbing from the best."""
        budget = int(budget)
        if budget < 1:
            raise InvalidInputError(f"Search budget must be ≥ 1, got {budget}")
        partitions = min(self.config.workers, budget)
        shares = [budget // partitions + (1 if p < budget % partitions else 0) for p in range(partitions)]

        def run_partition(p: int) -> Tuple[GapReport, int]:
            return self._search_partition(phi, psi, shares[p], make_rng([self.config.seed, p])), p

        found = [r for r in mapper(run_partition, range(partitions)) if r is not None]
        if not found:
            raise ChiCapacityError("Every search partition failed")
        best, partition = min(found, key=lambda item: (item[0].gap, item[1]))
        details = dict(best.details, partition=partition, budget=budget, partitions=partitions)
        logger.info(f"Search finished: min gap {best.gap:.3e} in partition {partition}")
        return GapReport(best.quantity, best.lhs, best.rhs, best.tolerance, best.instance, self.config.seed,
                         best.converged, best.proven, details, checks=best.checks)

    def _search_partition(self, phi: Channel, psi: KrausChannel, share: int,
                          rng: np.random.Generator) -> GapReport:
        dims = (phi.din, psi.din)
        samples = max(1, share // 2)
        best, best_sigma = None, None
        for _ in range(samples):
            sigma = random_entangled_state(dims, rank=int(rng.integers(1, 3)), bias=float(rng.uniform(0.5, 1.0)),
                                           seed=rng)
            report = self.subadditivity_gap(phi, psi, sigma)
            if best is None or report.gap < best.gap:
                best, best_sigma = report, sigma.matrix
        for _ in range(share - samples):
            generator = rng.normal(size=best_sigma.shape) + 1j * rng.normal(size=best_sigma.shape)
            rotation = expm(1j * SEARCH_STEP * hermitize(generator))
            candidate = hermitize(rotation @ best_sigma @ rotation.conj().T)
            report = self.subadditivity_gap(phi, psi, candidate)
            if report.gap < best.gap:
                best, best_sigma = report, candidate
        return GapReport(best.quantity, best.lhs, best.rhs, best.tolerance, best.instance, best.seed,
                         best.converged, best.proven, dict(best.details, evaluations=share), checks=best.checks)


def posterior_entropy_check(sigma, basis, dims: Tuple[int, int]) -> float:
    """H(σ) − Σ p_j H(σ_j) for the Lüders measurement {|e_j⟩⟨e_j| ⊗ I}; never negative."""
    outcomes = measurement_posteriors(sigma, basis, dims)
    return entropy(_state(sigma)) - float(sum(p * entropy(post) for p, post in outcomes))
