from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from models.errors import InvalidInputError
from models.quantum_state import HermitianOperator, matrix_to_literal

COMPLETENESS_TOL = 1e-10


def completeness_residual(kraus_ops: np.ndarray) -> float:
    """‖Σ K†K − I‖∞ for a stack of Kraus operators."""
    din = kraus_ops.shape[2]
    total = np.einsum('koi,koj->ij', kraus_ops.conj(), kraus_ops)
    return float(np.max(np.abs(total - np.eye(din))))


@dataclass(frozen=True)
class KrausChannel:
    """CPTP map ρ ↦ Σ_k K_k ρ K_k† with Kraus stack of shape (n, dout, din)."""

    kraus_ops: np.ndarray
    record: Optional[Dict] = field(default=None, compare=False)
    measure_prepare: Optional[Tuple[Tuple[np.ndarray, ...], Tuple[np.ndarray, ...]]] = field(
        default=None, compare=False)

    def __post_init__(self):
        ops = np.asarray(self.kraus_ops, dtype=complex)
        if ops.ndim == 2:
            ops = ops[np.newaxis]
        if ops.ndim != 3 or ops.shape[0] == 0:
            raise InvalidInputError(f"Kraus stack must have shape (n, dout, din), got {ops.shape}")
        if not np.all(np.isfinite(ops)):
            raise InvalidInputError("Kraus operators contain NaN or Inf entries")
        residual = completeness_residual(ops)
        if residual > COMPLETENESS_TOL:
            raise InvalidInputError(f"Kraus operators are not trace preserving (residual {residual:.3e})")
        ops = ops.copy()
        ops.setflags(write=False)
        object.__setattr__(self, 'kraus_ops', ops)

    @property
    def din(self) -> int:
        return self.kraus_ops.shape[2]

    @property
    def dout(self) -> int:
        return self.kraus_ops.shape[1]

    @property
    def kraus_rank(self) -> int:
        return self.kraus_ops.shape[0]

    @property
    def is_entanglement_breaking(self) -> bool:
        return self.measure_prepare is not None

    def act(self, rho: np.ndarray) -> np.ndarray:
        """Σ K ρ K† on a raw (possibly subnormalized) operator."""
        return np.einsum('kai,ij,kbj->ab', self.kraus_ops, rho, self.kraus_ops.conj())

    def act_batch(self, rhos: np.ndarray) -> np.ndarray:
        return np.einsum('kai,mij,kbj->mab', self.kraus_ops, rhos, self.kraus_ops.conj())

    def act_pure(self, vectors: np.ndarray) -> np.ndarray:
        """Outputs Φ(ψψ†) for a stack of (unnormalized) vectors of shape (m, din)."""
        images = np.einsum('kai,mi->mka', self.kraus_ops, vectors)
        return np.einsum('mka,mkb->mab', images, images.conj())

    def adjoint(self, observable: np.ndarray) -> np.ndarray:
        """Heisenberg picture Σ K† X K."""
        return np.einsum('kai,ab,kbj->ij', self.kraus_ops.conj(), observable, self.kraus_ops)

    def to_dict(self) -> Dict:
        if self.record is not None:
            return dict(self.record)
        return {'kraus': [matrix_to_literal(k) for k in self.kraus_ops]}


@dataclass(frozen=True)
class BlockChannel:
    """Direct sum mixture ⊕_j q_j Φ_j of channels sharing one input space."""

    components: Tuple[Tuple[float, KrausChannel], ...]
    record: Optional[Dict] = field(default=None, compare=False)

    def __post_init__(self):
        components = tuple((float(q), channel) for q, channel in self.components)
        if not components:
            raise InvalidInputError("BlockChannel needs at least one component")
        weights = np.array([q for q, _ in components])
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"Block weights must be a probability vector, got {weights.tolist()}")
        if len({c.din for _, c in components}) != 1:
            raise InvalidInputError("All block components must share the input dimension")
        object.__setattr__(self, 'components', components)

    @property
    def din(self) -> int:
        return self.components[0][1].din

    @property
    def weights(self) -> np.ndarray:
        return np.array([q for q, _ in self.components])

    @property
    def layout(self) -> Tuple[int, ...]:
        return tuple(c.dout for _, c in self.components)

    def to_dict(self) -> Dict:
        if self.record is not None:
            return dict(self.record)
        return {'blocks': [{'weight': q, 'channel': c.to_dict()} for q, c in self.components]}


@dataclass(frozen=True)
class ShorExtension:
    """Φ̂(E, q, d): with probability 1−q acts as Φ, with probability q measures {E⊥, E}
    and on outcome E sends a d-valued classical index."""

    base: KrausChannel
    effect: HermitianOperator
    q: float
    d: int

    def __post_init__(self):
        effect = self.effect if isinstance(self.effect, HermitianOperator) else HermitianOperator(self.effect)
        if effect.dim != self.base.din:
            raise InvalidInputError(f"Effect dimension {effect.dim} does not match channel input {self.base.din}")
        if not effect.is_effect():
            raise InvalidInputError("Extension effect must satisfy 0 ≤ E ≤ I")
        if not 0.0 <= float(self.q) <= 1.0:
            raise InvalidInputError(f"q must lie in [0, 1], got {self.q}")
        if int(self.d) < 1:
            raise InvalidInputError(f"d must be a positive integer, got {self.d}")
        object.__setattr__(self, 'effect', effect)
        object.__setattr__(self, 'q', float(self.q))
        object.__setattr__(self, 'd', int(self.d))

    @property
    def din(self) -> int:
        return self.base.din

    def with_index_count(self, d: int, q: Optional[float] = None) -> 'ShorExtension':
        return ShorExtension(self.base, self.effect, self.q if q is None else q, d)

    def to_dict(self) -> Dict:
        return {
            'base': self.base.to_dict(),
            'effect': self.effect.to_dict(),
            'q': self.q,
            'd': self.d,
        }


def stack_kraus(ops: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack([np.asarray(k, dtype=complex) for k in ops])
