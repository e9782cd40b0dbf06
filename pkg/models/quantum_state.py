from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from models.errors import InvalidInputError

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10
TRACE_TOL = 1e-10
WEIGHT_TOL = 1e-12

ArrayLike = Union['HermitianOperator', 'DensityMatrix', np.ndarray, Sequence]


def as_array(value) -> np.ndarray:
    """Return the complex ndarray behind a state/operator record or raw matrix."""
    if isinstance(value, (HermitianOperator, DensityMatrix)):
        return value.matrix
    matrix = np.asarray(value, dtype=complex)
    if matrix.ndim != 2:
        raise InvalidInputError(f"Expected a matrix, got array with shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InvalidInputError("Matrix contains NaN or Inf entries")
    return matrix


def hermitize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.conj().T)


def check_square(matrix: np.ndarray, what: str = "operator") -> None:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InvalidInputError(f"{what} must be square, got shape {matrix.shape}")


def check_hermitian(matrix: np.ndarray, what: str = "operator", tol: float = HERMITIAN_TOL) -> None:
    check_square(matrix, what)
    residual = float(np.max(np.abs(matrix - matrix.conj().T))) if matrix.size else 0.0
    if residual > tol:
        raise InvalidInputError(f"{what} is not Hermitian (residual {residual:.3e})")


def check_positive(matrix: np.ndarray, what: str = "operator", tol: float = PSD_TOL) -> None:
    check_hermitian(matrix, what)
    if matrix.size == 0:
        return
    min_eig = float(np.min(np.linalg.eigvalsh(hermitize(matrix))))
    if min_eig < -tol:
        raise InvalidInputError(f"{what} is not positive semidefinite (min eigenvalue {min_eig:.3e})")


def _freeze(matrix: np.ndarray) -> np.ndarray:
    frozen = np.array(matrix, dtype=complex, copy=True)
    frozen.setflags(write=False)
    return frozen


@dataclass(frozen=True)
class HermitianOperator:
    """Square Hermitian matrix; houses constraint operators and effects."""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = as_array(self.matrix)
        check_hermitian(matrix, "HermitianOperator")
        object.__setattr__(self, 'matrix', _freeze(hermitize(matrix)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def spectrum(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def is_effect(self, tol: float = PSD_TOL) -> bool:
        eigs = self.spectrum
        return bool(eigs.min() >= -tol and eigs.max() <= 1 + tol)

    @property
    def complement(self) -> 'HermitianOperator':
        """I − E, computed on demand."""
        return HermitianOperator(np.eye(self.dim) - self.matrix)

    def to_dict(self) -> List:
        return matrix_to_literal(self.matrix)


@dataclass(frozen=True)
class DensityMatrix:
    """Positive semidefinite unit-trace matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = as_array(self.matrix)
        check_positive(matrix, "DensityMatrix")
        trace = float(np.real(np.trace(matrix)))
        if abs(trace - 1.0) > TRACE_TOL:
            raise InvalidInputError(f"DensityMatrix trace must be 1, got {trace:.12f}")
        object.__setattr__(self, 'matrix', _freeze(hermitize(matrix)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    @classmethod
    def pure(cls, vector: Sequence[complex]) -> 'DensityMatrix':
        psi = np.asarray(vector, dtype=complex).reshape(-1)
        norm = np.linalg.norm(psi)
        if norm == 0:
            raise InvalidInputError("Cannot build a pure state from the zero vector")
        psi = psi / norm
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def basis(cls, dim: int, index: int) -> 'DensityMatrix':
        vector = np.zeros(dim, dtype=complex)
        vector[index] = 1.0
        return cls.pure(vector)

    @classmethod
    def maximally_mixed(cls, dim: int) -> 'DensityMatrix':
        return cls(np.eye(dim, dtype=complex) / dim)

    def to_dict(self) -> List:
        return matrix_to_literal(self.matrix)


@dataclass(frozen=True)
class Ensemble:
    """Finite weighted collection of states with a common dimension."""

    weights: np.ndarray
    states: Tuple[DensityMatrix, ...]

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        states = tuple(s if isinstance(s, DensityMatrix) else DensityMatrix(s) for s in self.states)
        if len(weights) != len(states) or len(states) == 0:
            raise InvalidInputError(
                f"Ensemble needs matching non-empty weights/states, got {len(weights)} and {len(states)}")
        if np.any(weights <= 0):
            raise InvalidInputError("Ensemble weights must be strictly positive")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidInputError(f"Ensemble weights must sum to 1, got {weights.sum():.15f}")
        dims = {s.dim for s in states}
        if len(dims) != 1:
            raise InvalidInputError(f"Ensemble states must share one dimension, got {sorted(dims)}")
        weights = weights.copy()
        weights.setflags(write=False)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'states', states)

    @property
    def dim(self) -> int:
        return self.states[0].dim

    def __len__(self) -> int:
        return len(self.states)

    @property
    def matrices(self) -> np.ndarray:
        return np.stack([s.matrix for s in self.states])

    @classmethod
    def from_pure_vectors(cls, weights: np.ndarray, vectors: np.ndarray) -> 'Ensemble':
        states = [DensityMatrix.pure(v) for v in vectors]
        weights = np.asarray(weights, dtype=float)
        return cls(weights / weights.sum(), tuple(states))

    def to_dict(self) -> Dict:
        return {
            'weights': [float(w) for w in self.weights],
            'states': [s.to_dict() for s in self.states],
        }


@dataclass(frozen=True)
class BlockState:
    """Direct-sum state: positive blocks whose traces sum to one."""

    blocks: Tuple[np.ndarray, ...]

    def __post_init__(self):
        blocks = []
        for index, block in enumerate(self.blocks):
            matrix = as_array(block)
            check_positive(matrix, f"block {index}")
            blocks.append(_freeze(hermitize(matrix)))
        total = sum(float(np.real(np.trace(b))) for b in blocks)
        if abs(total - 1.0) > TRACE_TOL:
            raise InvalidInputError(f"BlockState traces must sum to 1, got {total:.12f}")
        object.__setattr__(self, 'blocks', tuple(blocks))

    @property
    def weights(self) -> np.ndarray:
        return np.array([float(np.real(np.trace(b))) for b in self.blocks])

    @property
    def layout(self) -> Tuple[int, ...]:
        return tuple(b.shape[0] for b in self.blocks)

    def to_dict(self) -> Dict:
        return {'blocks': [matrix_to_literal(b) for b in self.blocks]}


@dataclass(frozen=True)
class IndexedState:
    """Array of d positive operators ρ_j with Σ Tr ρ_j = 1 (input of the extension)."""

    parts: Tuple[np.ndarray, ...]

    def __post_init__(self):
        parts = []
        for index, part in enumerate(self.parts):
            matrix = as_array(part)
            check_positive(matrix, f"part {index + 1}")
            parts.append(_freeze(hermitize(matrix)))
        if not parts:
            raise InvalidInputError("IndexedState needs at least one part")
        if len({p.shape[0] for p in parts}) != 1:
            raise InvalidInputError("IndexedState parts must share one dimension")
        total = sum(float(np.real(np.trace(p))) for p in parts)
        if abs(total - 1.0) > TRACE_TOL:
            raise InvalidInputError(f"IndexedState traces must sum to 1, got {total:.12f}")
        object.__setattr__(self, 'parts', tuple(parts))

    @property
    def d(self) -> int:
        return len(self.parts)

    @property
    def dim(self) -> int:
        return self.parts[0].shape[0]

    @property
    def total(self) -> np.ndarray:
        return sum(self.parts)


def matrix_to_literal(matrix: np.ndarray) -> List[List[List[float]]]:
    """Matrix literal: list of rows, each entry a [re, im] pair."""
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(matrix, dtype=complex)]


def literal_to_matrix(literal) -> np.ndarray:
    try:
        rows = [[complex(float(entry[0]), float(entry[1])) for entry in row] for row in literal]
    except (TypeError, ValueError, IndexError) as e:
        raise InvalidInputError(f"Malformed matrix literal: {e}") from e
    if not rows or any(len(row) != len(rows[0]) for row in rows):
        raise InvalidInputError("Matrix literal rows must be non-empty and of equal length")
    matrix = np.array(rows, dtype=complex)
    if not np.all(np.isfinite(matrix)):
        raise InvalidInputError("Matrix literal contains NaN or Inf entries")
    return matrix
