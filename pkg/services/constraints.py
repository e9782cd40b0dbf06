import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from models.constraint import (ConstraintSet, FullConstraint, LinearConstraint, MarginalsConstraint,
                               SingletonConstraint)
from models.errors import InvalidInputError, UnsupportedOperationError
from models.quantum_state import PSD_TOL, HermitianOperator, as_array, check_hermitian, hermitize
from services.quantum_ops import hermitian_basis, reduce_operator

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-8
SLATER_TOL = 1e-9


@dataclass(frozen=True)
class ConstraintTerms:
    """A constraint set unrolled into the pieces an ensemble search consumes.

    ``inequalities`` holds pairs (M, level) meaning Tr M ρ_av ≤ level. ``equalities``
    holds (dims, keep, target) meaning the kept marginal of ρ_av equals target.
    """

    inequalities: Tuple[Tuple[np.ndarray, float], ...] = ()
    equalities: Tuple[Tuple[Tuple[int, int], int, np.ndarray], ...] = ()

    @property
    def empty(self) -> bool:
        return not self.inequalities and not self.equalities


def normalize_linear(A, alpha: float) -> LinearConstraint:
    """Bring Tr A ρ ≤ α into the normalized form 0 ≤ A′ ≤ I, 0 ≤ α′ ≤ 1.

    Effects pass through unchanged, positive operators are scaled by their norm and
    indefinite Hermitian operators go through A′ = ½[A/‖A‖ + I].
    """
    matrix = as_array(A)
    check_hermitian(matrix, "constraint operator")
    operator = HermitianOperator(matrix)
    spectrum = operator.spectrum
    norm = float(np.max(np.abs(spectrum)))
    alpha = float(alpha)

    if operator.is_effect():
        normalized, level = operator.matrix, alpha
    elif norm == 0:
        normalized, level = np.zeros_like(operator.matrix), alpha
    elif spectrum.min() >= -PSD_TOL:
        normalized, level = operator.matrix / norm, alpha / norm
    else:
        normalized = 0.5 * (operator.matrix / norm + np.eye(operator.dim))
        level = 0.5 * (alpha / norm + 1.0)

    normalized = hermitize(normalized)
    a_min = float(np.linalg.eigvalsh(normalized).min())
    if level < a_min - SLATER_TOL:
        raise InvalidInputError(f"Linear constraint is infeasible: level {level:.6g} below min spectrum {a_min:.6g}")
    if level > 1.0:
        logger.debug(f"Linear constraint level {level:.6g} clipped to 1 (vacuous)")
    return LinearConstraint(HermitianOperator(normalized), float(np.clip(level, 0.0, 1.0)))


def tensor_power_constraint(A, n: int) -> np.ndarray:
    """A⁽ⁿ⁾ = A⊗I⊗…⊗I + … + I⊗…⊗I⊗A on H^{⊗n}."""
    matrix = as_array(A)
    n = int(n)
    if n < 1:
        raise InvalidInputError(f"Tensor power must be ≥ 1, got {n}")
    dim = matrix.shape[0]
    identity = np.eye(dim, dtype=complex)
    total = np.zeros((dim ** n, dim ** n), dtype=complex)
    for position in range(n):
        term = np.ones((1, 1), dtype=complex)
        for slot in range(n):
            term = np.kron(term, matrix if slot == position else identity)
        total += term
    return total


def constraint_dim(constraint: ConstraintSet) -> Optional[int]:
    if isinstance(constraint, MarginalsConstraint):
        if constraint.dims is not None:
            return constraint.dims[0] * constraint.dims[1]
        left, right = constraint_dim(constraint.left), constraint_dim(constraint.right)
        return left * right if left and right else None
    return getattr(constraint, 'dim', None)


def check_feasible(constraint: ConstraintSet, din: int) -> None:
    """Raise InvalidInputError when the constraint cannot hold on a din-dimensional input."""
    if isinstance(constraint, FullConstraint):
        return
    if isinstance(constraint, (LinearConstraint, SingletonConstraint)):
        if constraint.dim != din:
            raise InvalidInputError(f"Constraint dimension {constraint.dim} does not match input dimension {din}")
        if isinstance(constraint, LinearConstraint):
            a_min = float(constraint.A.spectrum.min())
            if constraint.alpha < a_min - SLATER_TOL:
                raise InvalidInputError(
                    f"Linear constraint infeasible: α = {constraint.alpha:.6g} < min spec A = {a_min:.6g}")
        return
    if isinstance(constraint, MarginalsConstraint):
        d_h, d_k = constraint.resolve_dims(din)
        check_feasible(constraint.left, d_h)
        check_feasible(constraint.right, d_k)
        return
    raise InvalidInputError(f"Unknown constraint type {type(constraint).__name__}")


def has_slater_point(constraint: LinearConstraint) -> bool:
    return constraint.alpha > float(constraint.A.spectrum.min()) + SLATER_TOL


def constraint_terms(constraint: ConstraintSet, din: int) -> ConstraintTerms:
    """Unroll Full, Linear and Marginals constraints; Singleton needs its own route."""
    check_feasible(constraint, din)
    if isinstance(constraint, FullConstraint):
        return ConstraintTerms()
    if isinstance(constraint, LinearConstraint):
        return ConstraintTerms(inequalities=((constraint.A.matrix, constraint.alpha),))
    if isinstance(constraint, SingletonConstraint):
        raise UnsupportedOperationError("Singleton constraints are handled by the decomposition search")

    d_h, d_k = constraint.resolve_dims(din)
    inequalities, equalities = [], []
    for keep, side, side_dim, other_dim in ((0, constraint.left, d_h, d_k), (1, constraint.right, d_k, d_h)):
        if isinstance(side, LinearConstraint):
            lifted = np.kron(side.A.matrix, np.eye(other_dim)) if keep == 0 else np.kron(np.eye(other_dim),
                                                                                         side.A.matrix)
            inequalities.append((lifted, side.alpha))
        elif isinstance(side, SingletonConstraint):
            equalities.append(((d_h, d_k), keep, side.rho.matrix))
    return ConstraintTerms(tuple(inequalities), tuple(equalities))


def equality_residuals(terms: ConstraintTerms, average: np.ndarray) -> np.ndarray:
    """Hilbert–Schmidt components of (marginal − target) along a traceless basis.

    Traces agree automatically, so only the traceless part is constrained; this
    keeps the equality Jacobian free of redundant rows.
    """
    residuals = []
    for dims, keep, target in terms.equalities:
        difference = reduce_operator(average, dims, keep) - target
        for generator in _basis(target.shape[0]):
            residuals.append(float(np.real(np.trace(generator @ difference))))
    return np.array(residuals)


_BASIS_CACHE = {}


def _basis(dim: int) -> List[np.ndarray]:
    if dim not in _BASIS_CACHE:
        _BASIS_CACHE[dim] = hermitian_basis(dim)
    return _BASIS_CACHE[dim]


def violation(constraint: ConstraintSet, average) -> float:
    """How far an average lies outside the constraint set (0 when inside)."""
    matrix = as_array(average)
    if isinstance(constraint, FullConstraint):
        return 0.0
    if isinstance(constraint, LinearConstraint):
        return max(float(np.real(np.trace(constraint.A.matrix @ matrix))) - constraint.alpha, 0.0)
    if isinstance(constraint, SingletonConstraint):
        return float(np.max(np.abs(matrix - constraint.rho.matrix)))
    d_h, d_k = constraint.resolve_dims(matrix.shape[0])
    return max(violation(constraint.left, reduce_operator(matrix, (d_h, d_k), 0)),
               violation(constraint.right, reduce_operator(matrix, (d_h, d_k), 1)))


def constraint_contains(constraint: ConstraintSet, average, tol: float = FEASIBILITY_TOL) -> bool:
    return violation(constraint, average) <= tol


def repair_vector(constraint: ConstraintSet, din: int) -> Optional[np.ndarray]:
    """Pure input that strictly minimizes every linear term, used to pull an
    infeasible average back into the set. None when no such vector is available."""
    if isinstance(constraint, LinearConstraint):
        _, vecs = np.linalg.eigh(constraint.A.matrix)
        return vecs[:, 0]
    if isinstance(constraint, FullConstraint):
        vector = np.zeros(din, dtype=complex)
        vector[0] = 1.0
        return vector
    if isinstance(constraint, MarginalsConstraint):
        d_h, d_k = constraint.resolve_dims(din)
        left, right = repair_vector(constraint.left, d_h), repair_vector(constraint.right, d_k)
        if left is None or right is None:
            return None
        return np.kron(left, right)
    return None


def min_eigenspace(A: HermitianOperator, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal columns spanning the eigenspace of the smallest eigenvalue of A."""
    vals, vecs = np.linalg.eigh(A.matrix)
    return vecs[:, vals <= vals[0] + tol]


def describe(constraint: ConstraintSet) -> str:
    if isinstance(constraint, LinearConstraint):
        return f"linear(α={constraint.alpha:.6g})"
    if isinstance(constraint, MarginalsConstraint):
        return f"marginals({describe(constraint.left)}, {describe(constraint.right)})"
    return 'full' if isinstance(constraint, FullConstraint) else 'singleton'
