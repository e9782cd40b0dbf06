import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional

import numpy as np

from models.errors import InvalidInputError
from models.quantum_state import DensityMatrix, Ensemble, HermitianOperator


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs shared by every multi-start search."""

    restarts: int = 4
    max_iterations: int = 500
    ensemble_size: Optional[int] = None
    tol_value: float = 1e-7
    tol_certificate: float = 1e-3
    seed: int = 0
    workers: int = 4

    def __post_init__(self):
        for name in ('restarts', 'max_iterations', 'workers'):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"OptimizerConfig.{name} must be ≥ 1")
        if self.ensemble_size is not None and int(self.ensemble_size) < 1:
            raise InvalidInputError("OptimizerConfig.ensemble_size must be ≥ 1")
        if self.tol_value <= 0 or self.tol_certificate <= 0:
            raise InvalidInputError("Optimizer tolerances must be positive")

    @classmethod
    def from_env(cls) -> 'OptimizerConfig':
        ensemble_size = os.environ.get('CHICAP_ENSEMBLE_SIZE')
        return cls(
            restarts=int(os.environ.get('CHICAP_RESTARTS', 4)),
            max_iterations=int(os.environ.get('CHICAP_MAX_ITERATIONS', 500)),
            ensemble_size=int(ensemble_size) if ensemble_size else None,
            tol_value=float(os.environ.get('CHICAP_TOL_VALUE', 1e-7)),
            tol_certificate=float(os.environ.get('CHICAP_TOL_CERTIFICATE', 1e-3)),
            seed=int(os.environ.get('CHICAP_SEED', 0)),
            workers=int(os.environ.get('CHICAP_WORKERS', 4)),
        )

    def with_overrides(self, **overrides) -> 'OptimizerConfig':
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def size_for(self, din: int) -> int:
        return int(self.ensemble_size) if self.ensemble_size else din * din

    def to_dict(self) -> Dict:
        return {
            'restarts': self.restarts,
            'max_iterations': self.max_iterations,
            'ensemble_size': self.ensemble_size,
            'tol_value': self.tol_value,
            'tol_certificate': self.tol_certificate,
            'seed': self.seed,
            'workers': self.workers,
        }


@dataclass(frozen=True)
class CapacityResult:
    """Optimum of a capacity-type problem.

    ``value`` is the optimized objective; ``chi`` is the χ-quantity of the returned
    ensemble. They coincide for plain χ-capacities and differ by the linear term
    for Lagrangian objectives.
    """

    value: float
    ensemble: Ensemble
    average: DensityMatrix
    chi: float
    certificate: float = float('nan')
    certificate_gap: float = float('nan')
    multiplier: Optional[float] = None
    converged: bool = False
    iterations: int = 0
    feasibility: float = 0.0
    flags: tuple = ()
    witness: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> Dict:
        return {
            'value': self.value,
            'chi': self.chi,
            'certificate': self.certificate,
            'certificate_gap': self.certificate_gap,
            'multiplier': self.multiplier,
            'converged': self.converged,
            'iterations': self.iterations,
            'feasibility': self.feasibility,
            'flags': list(self.flags),
            'ensemble': self.ensemble.to_dict(),
        }


@dataclass(frozen=True)
class Certificate:
    """Maximal-distance certificate for a candidate ensemble."""

    value: float
    chi: float
    gap: float
    certified: bool
    converged: bool = True
    multipliers: tuple = ()
    flags: tuple = ()

    def to_dict(self) -> Dict:
        return {
            'certificate': self.value,
            'chi': self.chi,
            'gap': self.gap,
            'certified': self.certified,
            'converged': self.converged,
            'multipliers': list(self.multipliers),
            'flags': list(self.flags),
        }


@dataclass(frozen=True)
class SupportingConstraint:
    """Linear constraint (A, α) for which ρ₀ maximizes the χ-function."""

    A: HermitianOperator
    alpha: float
    chi_at_point: float
    verified_value: float
    gap: float
    degenerate: bool = False
    complemented: bool = False

    def to_dict(self) -> Dict:
        return {
            'A': self.A.to_dict(),
            'alpha': self.alpha,
            'chi_at_point': self.chi_at_point,
            'verified_value': self.verified_value,
            'gap': self.gap,
            'degenerate': self.degenerate,
            'complemented': self.complemented,
        }


@dataclass(frozen=True)
class ProfilePoint:
    alpha: float
    value: float
    converged: bool


@dataclass(frozen=True)
class AlphaProfile:
    """C̄(Φ; A, α) over a grid together with its shape checks."""

    points: List[ProfilePoint]
    nondecreasing: bool
    concave: bool
    max_drop: float
    max_second_difference: float

    @property
    def alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.points])

    @property
    def passed(self) -> bool:
        return self.nondecreasing and self.concave


@dataclass(frozen=True)
class GapReport:
    """Additivity-type deficit ``gap = rhs − lhs`` with replay information."""

    quantity: str
    lhs: float
    rhs: float
    tolerance: float
    instance: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    converged: bool = True
    proven: bool = False
    details: Dict[str, Any] = field(default_factory=dict)
    two_sided: bool = False
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.rhs - self.lhs

    @property
    def violated(self) -> bool:
        if not all(self.checks.values()):
            return True
        if self.two_sided:
            return abs(self.gap) > self.tolerance
        return self.gap < -self.tolerance

    @property
    def status(self) -> str:
        if not self.proven:
            return 'report'
        return 'fail' if self.violated else 'pass'

    def to_dict(self) -> Dict:
        return {
            'quantity': self.quantity,
            'lhs': self.lhs,
            'rhs': self.rhs,
            'gap': self.gap,
            'tolerance': self.tolerance,
            'status': self.status,
            'converged': self.converged,
            'checks': dict(self.checks),
            'details': self.details,
            'instance': self.instance,
            'seed': self.seed,
        }


@dataclass(frozen=True)
class ExtensionBoundRecord:
    """One row of the extension bound check."""

    d: int
    q: float
    lhs: float
    rhs: float
    bound: float
    slack: float
    converged: bool = True

    @property
    def deviation(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def passed(self) -> bool:
        return self.deviation <= self.bound + self.slack

    def to_dict(self) -> Dict:
        return {
            'd': self.d,
            'q': self.q,
            'lhs': self.lhs,
            'rhs': self.rhs,
            'deviation': self.deviation,
            'bound': self.bound,
            'slack': self.slack,
            'status': 'pass' if self.passed else 'fail',
            'converged': self.converged,
        }


@dataclass(frozen=True)
class AsymptoticRow:
    """Extension capacity at one index count d with q = λ / log₂ d."""

    d: int
    q: float
    capacity: float
    target: float
    limit: float
    bound: float
    converged: bool = True

    @property
    def deviation(self) -> float:
        return abs(self.capacity - self.target)

    @property
    def limit_deviation(self) -> float:
        return abs(self.capacity - self.limit)

    def to_dict(self) -> Dict:
        return {
            'd': self.d,
            'q': self.q,
            'capacity': self.capacity,
            'target': self.target,
            'deviation': self.deviation,
            'limit': self.limit,
            'limit_deviation': self.limit_deviation,
            'bound': self.bound,
            'converged': self.converged,
        }


@dataclass
class RunConfig:
    """Everything a CLI command needs, validated before any solve starts."""

    command: str
    records: Dict[str, Any]
    optimizer: OptimizerConfig
    output: str = 'table'
    assert_proven: bool = False


@dataclass(frozen=True)
class ChannelDiagnostics:
    """Structural report on a Kraus set or block channel."""

    din: int
    dout: Any
    kraus_rank: int
    completeness_residual: float
    trace_preserving: bool
    entanglement_breaking: bool = False

    def to_dict(self) -> Dict:
        return {
            'din': self.din,
            'dout': self.dout,
            'kraus_rank': self.kraus_rank,
            'completeness_residual': self.completeness_residual,
            'trace_preserving': self.trace_preserving,
            'entanglement_breaking': self.entanglement_breaking,
        }
