import logging
from typing import Optional, Tuple

import numpy as np

from models.errors import InvalidInputError
from models.quantum_state import DensityMatrix, Ensemble, as_array
from models.result import OptimizerConfig
from services.channel_ops import Channel, output_entropy, pure_output_entropies
from services.solvers.ensemble_optimizer import EnsembleOptimizer, SearchOutcome, to_ensemble

logger = logging.getLogger(__name__)


class ConvexRoofSolver:
    """
    Specialist solver: convex roof Ĥ_Φ and the χ-function.

    Ĥ_Φ(ρ) is the smallest average output entropy over pure decompositions of ρ;
    χ_Φ(ρ) = H(Φ(ρ)) − Ĥ_Φ(ρ). The search runs over isometries acting on √ρ, so
    every candidate is an exact decomposition and no constraint handling is needed.
    """

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.optimizer = EnsembleOptimizer(config)

    def decompose(self, channel: Channel, rho, initial: Optional[np.ndarray] = None) -> SearchOutcome:
        matrix = self._check_input(channel, rho)

        def average_output_entropy(probs, vectors):
            return float(probs @ pure_output_entropies(channel, vectors))

        outcome = self.optimizer.optimize_decomposition(average_output_entropy, matrix,
                                                        self.config.size_for(channel.din), initial=initial)
        eigen = self.eigen_decomposition(channel, matrix)
        if eigen.value < outcome.value:
            logger.debug(f"Search ended at {outcome.value:.9g}, above the eigen-decomposition {eigen.value:.9g}")
            return eigen
        return outcome

    @staticmethod
    def eigen_decomposition(channel: Channel, matrix: np.ndarray) -> SearchOutcome:
        eigenvalues, eigenvectors = np.linalg.eigh(matrix)
        weights = np.clip(eigenvalues, 0.0, None)
        weights = weights / weights.sum()
        vectors = eigenvectors.T
        value = float(weights @ pure_output_entropies(channel, vectors))
        return SearchOutcome(weights, vectors, value, True, 0, -1)

    def hat_H(self, channel: Channel, rho, initial: Optional[np.ndarray] = None) -> Tuple[float, Ensemble]:
        outcome = self.decompose(channel, rho, initial)
        logger.debug(f"Ĥ = {outcome.value:.9g} after {outcome.iterations} iterations")
        return outcome.value, to_ensemble(outcome.weights, outcome.vectors)

    def chi_function(self, channel: Channel, rho, initial: Optional[np.ndarray] = None) -> float:
        matrix = self._check_input(channel, rho)
        value = output_entropy(channel, matrix) - self.decompose(channel, matrix, initial).value
        return max(value, 0.0)

    @staticmethod
    def _check_input(channel: Channel, rho) -> np.ndarray:
        state = rho if isinstance(rho, DensityMatrix) else DensityMatrix(as_array(rho))
        if state.dim != channel.din:
            raise InvalidInputError(f"State dimension {state.dim} does not match channel input {channel.din}")
        return state.matrix
