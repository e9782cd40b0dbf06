import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
from scipy.optimize import minimize

from models.errors import ChiCapacityError
from models.quantum_state import Ensemble, hermitize
from models.result import OptimizerConfig
from services.constraints import ConstraintTerms, equality_residuals

logger = logging.getLogger(__name__)

PRUNE_WEIGHT = 1e-8
MERGE_FIDELITY = 1e-8
PENALTY_WEIGHT = 1e4

EnsembleObjective = Callable[[np.ndarray, np.ndarray], float]
VectorObjective = Callable[[np.ndarray], float]


@dataclass
class SearchOutcome:
    """Best point of a multi-start search: pure-state ensemble rows plus bookkeeping."""

    weights: np.ndarray
    vectors: np.ndarray
    value: float
    success: bool
    iterations: int
    restart: int
    feasibility: float = 0.0
    witness: Optional[np.ndarray] = None

    @property
    def average(self) -> np.ndarray:
        return pure_average(self.weights, self.vectors)


def pure_average(weights: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    return hermitize(np.einsum('i,ia,ib->ab', weights, vectors, vectors.conj()))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def normalize_rows(raw: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(raw, axis=1)
    return raw / np.maximum(norms, 1e-300)[:, np.newaxis]


def isometry(z: np.ndarray) -> np.ndarray:
    """Columns of z orthonormalized; the map fixes every isometry."""
    q, r = np.linalg.qr(z)
    diagonal = np.diag(r)
    magnitude = np.abs(diagonal)
    phases = np.where(magnitude > 0, diagonal / np.where(magnitude > 0, magnitude, 1.0), 1.0)
    return q * phases[np.newaxis, :]


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(hermitize(matrix))
    return (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.conj().T


def compress(weights: np.ndarray, vectors: np.ndarray):
    """Drop negligible weights and merge (numerically) identical pure states."""
    keep = weights > PRUNE_WEIGHT
    if not np.any(keep):
        keep = weights == weights.max()
    merged_w, merged_v = [], []
    for w, v in zip(weights[keep], vectors[keep]):
        for k, existing in enumerate(merged_v):
            if abs(np.vdot(existing, v)) ** 2 > 1.0 - MERGE_FIDELITY:
                merged_w[k] += w
                break
        else:
            merged_w.append(float(w))
            merged_v.append(v)
    merged_w = np.array(merged_w)
    return merged_w / merged_w.sum(), np.array(merged_v)


def to_ensemble(weights: np.ndarray, vectors: np.ndarray) -> Ensemble:
    w, v = compress(weights, vectors)
    return Ensemble.from_pure_vectors(w, v)


class EnsembleOptimizer:
    """
    Multi-start search engine shared by every capacity-type solver.

    Three parametrizations are offered:
    - free ensembles: softmax weights and normalized complex vectors
    - decompositions of a fixed state: isometries applied to its square root
    - single pure inputs on the unit sphere (optionally inside a subspace)

    Restart ``i`` draws from ``default_rng([seed, i])`` and the best restart wins,
    ties going to the smaller index, so thread scheduling never changes a result.
    """

    def __init__(self, config: OptimizerConfig):
        self.config = config

    # Free ensembles

    def maximize_ensemble(self, objective: EnsembleObjective, din: int, n_components: int,
                          terms: ConstraintTerms = ConstraintTerms(),
                          initial: Optional[np.ndarray] = None) -> SearchOutcome:
        m = int(n_components)

        def decode(x):
            weights = softmax(x[:m])
            raw = (x[m:m + m * din] + 1j * x[m + m * din:]).reshape(m, din)
            return weights, normalize_rows(raw)

        def start(rng, index):
            if initial is not None and index == 0:
                return np.asarray(initial, dtype=float)
            vectors = rng.normal(size=(2, m, din))
            return np.concatenate([0.1 * rng.normal(size=m), vectors[0].ravel(), vectors[1].ravel()])

        def run_one(index: int) -> SearchOutcome:
            rng = np.random.default_rng([self.config.seed, index])
            x0 = start(rng, index)
            result, feasibility = self._solve(lambda x: -objective(*decode(x)), x0, decode, terms)
            weights, vectors = decode(result.x)
            return SearchOutcome(weights, vectors, float(objective(weights, vectors)), bool(result.success),
                                 int(result.nit), index, feasibility, witness=result.x)

        return self._multistart(run_one)

    def _solve(self, loss, x0, decode, terms: ConstraintTerms):
        options = {'maxiter': self.config.max_iterations}
        if terms.empty:
            result = minimize(loss, x0, method='L-BFGS-B',
                              options={**options, 'ftol': 1e-15, 'gtol': 1e-10,
                                       'maxfun': self.config.max_iterations * (x0.size + 1) * 2})
            return result, 0.0

        def average(x):
            return pure_average(*decode(x))

        constraints = [{'type': 'ineq',
                        'fun': lambda x, M=M, level=level: level - float(np.real(np.trace(M @ average(x))))}
                       for M, level in terms.inequalities]
        if terms.equalities:
            constraints.append({'type': 'eq', 'fun': lambda x: equality_residuals(terms, average(x))})

        def infeasibility(x):
            avg = average(x)
            gaps = [max(float(np.real(np.trace(M @ avg))) - level, 0.0) for M, level in terms.inequalities]
            if terms.equalities:
                gaps.append(float(np.max(np.abs(equality_residuals(terms, avg)))))
            return max(gaps)

        try:
            result = minimize(loss, x0, method='SLSQP', constraints=constraints, options={**options, 'ftol': 1e-12})
            feasibility = infeasibility(result.x)
            if result.success or feasibility <= 1e-8:
                return result, feasibility
            logger.warning(f"SLSQP stopped infeasible ({result.message}); switching to penalty route")
        except (ValueError, np.linalg.LinAlgError) as e:
            logger.warning(f"SLSQP failed ({e}); switching to penalty route")

        return self._penalty_route(loss, x0, infeasibility)

    def _penalty_route(self, loss, x0, infeasibility):
        """Quadratic-penalty fallback for constrained searches."""
        result = minimize(lambda x: loss(x) + PENALTY_WEIGHT * infeasibility(x) ** 2, x0, method='L-BFGS-B',
                          options={'maxiter': self.config.max_iterations, 'ftol': 1e-15,
                                   'maxfun': self.config.max_iterations * (x0.size + 1) * 2})
        return result, infeasibility(result.x)

    # Decompositions of a fixed state

    def optimize_decomposition(self, objective: EnsembleObjective, rho: np.ndarray, n_components: int,
                               maximize: bool = False, initial: Optional[np.ndarray] = None) -> SearchOutcome:
        """Search over pure decompositions ρ = Σ p_i ψ_iψ_i†.

        Every decomposition with m ≥ dim ρ components is φ_i = √ρ·conj(w_i) for the
        rows w_i of an m×dim isometry W, so the search runs over W.
        """
        d = rho.shape[0]
        m = max(int(n_components), d)
        root_t = psd_sqrt(rho).T
        sign = -1.0 if maximize else 1.0
        fallback = np.zeros(d, dtype=complex)
        fallback[0] = 1.0

        def decode(x):
            frame = isometry((x[:m * d] + 1j * x[m * d:]).reshape(m, d))
            phis = np.conj(frame) @ root_t
            probs = np.real(np.einsum('ia,ia->i', phis, phis.conj()))
            vectors = np.where((probs > 1e-300)[:, np.newaxis],
                               phis / np.sqrt(np.maximum(probs, 1e-300))[:, np.newaxis], fallback)
            return probs, vectors, frame

        def run_one(index: int) -> SearchOutcome:
            rng = np.random.default_rng([self.config.seed, index])
            if initial is not None and index == 0:
                frame0 = np.asarray(initial, dtype=complex)
            else:
                frame0 = rng.normal(size=(m, d)) + 1j * rng.normal(size=(m, d))
            x0 = np.concatenate([frame0.real.ravel(), frame0.imag.ravel()])
            result = minimize(lambda x: sign * objective(*decode(x)[:2]), x0, method='L-BFGS-B',
                              options={'maxiter': self.config.max_iterations, 'ftol': 1e-15, 'gtol': 1e-10,
                                       'maxfun': self.config.max_iterations * (x0.size + 1) * 2})
            probs, vectors, frame = decode(result.x)
            return SearchOutcome(probs, vectors, sign * float(result.fun), bool(result.success), int(result.nit),
                                 index, witness=frame)

        if maximize:
            return self._multistart(run_one)
        return self._multistart(run_one, prefer=lambda o: -o.value)

    # Single pure inputs

    def maximize_vector(self, objective: VectorObjective, din: int,
                        subspace: Optional[np.ndarray] = None) -> SearchOutcome:
        """max over unit ψ (in the span of ``subspace`` columns when given) of objective(ψ)."""
        basis = np.eye(din, dtype=complex) if subspace is None else np.asarray(subspace, dtype=complex)
        k = basis.shape[1]

        def decode(x):
            coefficients = x[:k] + 1j * x[k:]
            vector = basis @ coefficients
            return vector / max(np.linalg.norm(vector), 1e-300)

        def run_one(index: int) -> SearchOutcome:
            rng = np.random.default_rng([self.config.seed, index])
            x0 = rng.normal(size=2 * k)
            if k == 1:
                vector = decode(x0)
                return SearchOutcome(np.ones(1), vector[np.newaxis], float(objective(vector)), True, 0, index)
            result = minimize(lambda x: -objective(decode(x)), x0, method='L-BFGS-B',
                              options={'maxiter': self.config.max_iterations, 'ftol': 1e-15, 'gtol': 1e-10})
            vector = decode(result.x)
            return SearchOutcome(np.ones(1), vector[np.newaxis], float(objective(vector)), bool(result.success),
                                 int(result.nit), index)

        return self._multistart(run_one)

    # Restart fan-out

    def _multistart(self, run_one: Callable[[int], SearchOutcome],
                    prefer: Callable[[SearchOutcome], float] = lambda o: o.value) -> SearchOutcome:
        outcomes: Dict[int, SearchOutcome] = {}
        errors = []
        restarts = self.config.restarts
        with ThreadPoolExecutor(max_workers=min(self.config.workers, restarts)) as executor:
            future_to_restart = {executor.submit(run_one, index): index for index in range(restarts)}
            for future in as_completed(future_to_restart):
                index = future_to_restart[future]
                try:
                    outcomes[index] = future.result()
                except Exception as e:
                    logger.warning(f"Restart {index} failed: {e}")
                    errors.append((index, e))

        if not outcomes:
            first = min(errors, key=lambda item: item[0])[1]
            if isinstance(first, ChiCapacityError):
                raise first
            raise ChiCapacityError(f"All {restarts} restarts failed: {first}") from first

        feasible = [o for o in outcomes.values() if o.feasibility <= 1e-8] or list(outcomes.values())
        best = max(feasible, key=lambda o: (prefer(o), -o.restart))
        best.iterations = sum(o.iterations for o in outcomes.values())
        return best
