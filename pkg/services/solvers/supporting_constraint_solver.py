import logging
from typing import Callable, Iterable, List, Optional

import numpy as np

from models.constraint import LinearConstraint
from models.errors import ChiCapacityError, InvalidInputError, SupportVerificationError
from models.quantum_state import DensityMatrix, HermitianOperator, as_array
from models.result import AlphaProfile, OptimizerConfig, ProfilePoint, SupportingConstraint
from services.channel_ops import Channel, output_entropy
from services.quantum_ops import hermitian_basis
from services.solvers.capacity_solver import CapacitySolver
from services.solvers.convex_roof_solver import ConvexRoofSolver

logger = logging.getLogger(__name__)

MIN_EIGENVALUE = 1e-6
FD_STEP = 1e-4
FLAT_GRADIENT = 1e-9
PROFILE_TOL = 1e-5

Mapper = Callable[[Callable, Iterable], Iterable]


class SupportingConstraintSolver:
    """
    Specialist solver: a linear constraint (A, α) under which a given full-rank
    state ρ₀ maximizes the χ-function, and the α-profile of constrained capacities.

    The constraint comes from a finite-difference supergradient G of χ_Φ at ρ₀.
    For an exact supergradient no state in the half-space Tr Gρ ≤ Tr Gρ₀ beats ρ₀;
    the estimate is numerical, so each candidate is verified by solving the
    constrained capacity. When the primary orientation fails the complementary
    half-space is tried before giving up.
    """

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.capacity = CapacitySolver(config)
        self.roof = ConvexRoofSolver(config)

    def find_supporting_constraint(self, channel: Channel, rho0) -> SupportingConstraint:
        state = rho0 if isinstance(rho0, DensityMatrix) else DensityMatrix(as_array(rho0))
        if state.dim != channel.din:
            raise InvalidInputError(f"State dimension {state.dim} does not match channel input {channel.din}")
        lowest = float(state.eigenvalues.min())
        if lowest < MIN_EIGENVALUE:
            raise InvalidInputError(f"ρ₀ must be full rank (min eigenvalue {lowest:.2e} < {MIN_EIGENVALUE:g})")

        base = self.roof.decompose(channel, state.matrix)
        chi_at_point = max(output_entropy(channel, state.matrix) - base.value, 0.0)
        gradient = self._supergradient(channel, state.matrix, min(FD_STEP, 0.5 * lowest), base.witness)
        norm = float(np.max(np.abs(np.linalg.eigvalsh(gradient))))

        if norm < FLAT_GRADIENT:
            logger.info("Supergradient vanishes; ρ₀ is a global maximizer and every constraint supports it")
            candidates = [(np.eye(channel.din) / 2.0, 0.5, False)]
            degenerate = True
        else:
            A = 0.5 * (gradient / norm + np.eye(channel.din))
            alpha = 0.5 * (float(np.real(np.trace(gradient @ state.matrix))) / norm + 1.0)
            candidates = [(A, alpha, False), (np.eye(channel.din) - A, 1.0 - alpha, True)]
            degenerate = False

        gap = float('nan')
        for A, alpha, complemented in candidates:
            constraint = LinearConstraint(HermitianOperator(A), float(np.clip(alpha, 0.0, 1.0)))
            verified = self.capacity.chi_capacity(channel, constraint).value
            gap = verified - chi_at_point
            if abs(gap) <= 2.0 * self.config.tol_certificate:
                logger.info(f"Supporting constraint verified (gap {gap:.2e}, complemented={complemented})")
                return SupportingConstraint(constraint.A, constraint.alpha, chi_at_point, verified, gap,
                                            degenerate, complemented)
            logger.warning(f"Candidate constraint failed verification (gap {gap:.2e}, complemented={complemented})")

        raise SupportVerificationError(
            f"No supporting constraint verified at ρ₀ (last gap {gap:.3e}); χ may be nonsmooth there", gap=gap)

    def _supergradient(self, channel: Channel, rho: np.ndarray, step: float,
                       witness: Optional[np.ndarray]) -> np.ndarray:
        """Central differences of χ_Φ along a traceless Hermitian basis."""
        gradient = np.zeros_like(rho, dtype=complex)
        for generator in hermitian_basis(rho.shape[0]):
            plus = self.roof.chi_function(channel, rho + step * generator, initial=witness)
            minus = self.roof.chi_function(channel, rho - step * generator, initial=witness)
            gradient += (plus - minus) / (2.0 * step) * generator
        return 0.5 * (gradient + gradient.conj().T)

    def alpha_profile(self, channel: Channel, A, grid: Iterable[float],
                      mapper: Mapper = map) -> AlphaProfile:
        """C̄(Φ; A, α) over a grid of levels, with monotonicity and concavity checks."""
        operator = A if isinstance(A, HermitianOperator) else HermitianOperator(as_array(A))
        alphas = sorted(float(a) for a in grid)
        if not alphas:
            raise InvalidInputError("α grid must not be empty")
        a_min = float(operator.spectrum.min())
        if alphas[0] < a_min - 1e-9:
            raise InvalidInputError(f"α = {alphas[0]:.6g} lies below min spec A = {a_min:.6g}")

        def solve_point(alpha: float) -> ProfilePoint:
            try:
                result = self.capacity.chi_capacity(channel, LinearConstraint(operator, alpha))
                return ProfilePoint(alpha, result.value, result.converged)
            except ChiCapacityError as e:
                logger.warning(f"Profile point α={alpha:.6g} failed: {e}")
                return ProfilePoint(alpha, float('nan'), False)

        points = [p if p is not None else ProfilePoint(a, float('nan'), False)
                  for a, p in zip(alphas, mapper(solve_point, alphas))]
        max_drop, max_second = profile_shape(points)
        return AlphaProfile(points, max_drop <= PROFILE_TOL, max_second <= PROFILE_TOL, max_drop, max_second)


def profile_shape(points: List[ProfilePoint]):
    """Largest decrease between neighbours and largest concavity defect on a possibly uneven grid."""
    finite = [p for p in points if np.isfinite(p.value)]
    drops = [a.value - b.value for a, b in zip(finite, finite[1:])]
    defects = []
    for left, mid, right in zip(finite, finite[1:], finite[2:]):
        span = right.alpha - left.alpha
        if span <= 0:
            continue
        t = (right.alpha - mid.alpha) / span
        defects.append(2.0 * (t * left.value + (1.0 - t) * right.value - mid.value))
    return max(drops, default=0.0), max(defects, default=0.0)
