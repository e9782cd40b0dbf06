from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

from models.errors import InvalidInputError, UnsupportedOperationError
from models.quantum_state import DensityMatrix, HermitianOperator


@dataclass(frozen=True)
class FullConstraint:
    """No restriction on the ensemble average."""

    def to_dict(self) -> Dict:
        return {'type': 'full'}


@dataclass(frozen=True)
class LinearConstraint:
    """Tr A ρ_av ≤ α with 0 ≤ A ≤ I and 0 ≤ α ≤ 1 (normalized form)."""

    A: HermitianOperator
    alpha: float

    def __post_init__(self):
        A = self.A if isinstance(self.A, HermitianOperator) else HermitianOperator(self.A)
        if not A.is_effect():
            raise InvalidInputError("Linear constraint operator must satisfy 0 ≤ A ≤ I; normalize it first")
        if not 0.0 <= float(self.alpha) <= 1.0 + 1e-12:
            raise InvalidInputError(f"Linear constraint level must lie in [0, 1], got {self.alpha}")
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'alpha', min(float(self.alpha), 1.0))

    @property
    def dim(self) -> int:
        return self.A.dim

    def to_dict(self) -> Dict:
        return {'type': 'linear', 'A': self.A.to_dict(), 'alpha': self.alpha}


@dataclass(frozen=True)
class SingletonConstraint:
    """ρ_av = ρ."""

    rho: DensityMatrix

    def __post_init__(self):
        if not isinstance(self.rho, DensityMatrix):
            object.__setattr__(self, 'rho', DensityMatrix(self.rho))

    @property
    def dim(self) -> int:
        return self.rho.dim

    def to_dict(self) -> Dict:
        return {'type': 'singleton', 'rho': self.rho.to_dict()}


@dataclass(frozen=True)
class MarginalsConstraint:
    """Tr_K σ_av ∈ left and Tr_H σ_av ∈ right on H⊗K."""

    left: 'ConstraintSet'
    right: 'ConstraintSet'
    dims: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        for side in (self.left, self.right):
            if isinstance(side, MarginalsConstraint):
                raise UnsupportedOperationError("Nested marginal constraints are not supported")
        if self.dims is not None:
            object.__setattr__(self, 'dims', (int(self.dims[0]), int(self.dims[1])))

    def resolve_dims(self, din: int) -> Tuple[int, int]:
        """Factor din into (d_H, d_K) from declared dims or side dimensions."""
        if self.dims is not None:
            d_h, d_k = self.dims
        elif getattr(self.left, 'dim', None):
            d_h = self.left.dim
            d_k = din // d_h
        elif getattr(self.right, 'dim', None):
            d_k = self.right.dim
            d_h = din // d_k
        else:
            raise InvalidInputError("Cannot infer marginal dimensions; declare 'dims'")
        if d_h * d_k != din:
            raise InvalidInputError(f"Marginal dims {d_h}x{d_k} do not factor input dimension {din}")
        return d_h, d_k

    def to_dict(self) -> Dict:
        record = {'type': 'marginals', 'left': self.left.to_dict(), 'right': self.right.to_dict()}
        if self.dims is not None:
            record['dims'] = list(self.dims)
        return record


ConstraintSet = Union[FullConstraint, LinearConstraint, SingletonConstraint, MarginalsConstraint]
