import logging
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.stats import unitary_group

from models.errors import InvalidInputError
from models.quantum_state import (PSD_TOL, TRACE_TOL, BlockState, DensityMatrix, Ensemble, HermitianOperator,
                                  as_array, check_hermitian, check_positive, check_square, hermitize)

logger = logging.getLogger(__name__)

LOG_BASE = 2.0
EIGEN_CUTOFF = 1e-12
SUPPORT_WEIGHT_TOL = 1e-10
ORTHONORMAL_TOL = 1e-10

Seed = Union[int, Sequence[int], np.random.Generator, None]


def _log(values: np.ndarray) -> np.ndarray:
    return np.log(values) / np.log(LOG_BASE)


def spectrum_entropy(eigenvalues: np.ndarray) -> float:
    """−Σ λ log λ with eigenvalues below the cutoff treated as zero."""
    eigs = np.asarray(eigenvalues, dtype=float).reshape(-1)
    eigs = eigs[eigs > EIGEN_CUTOFF]
    if eigs.size == 0:
        return 0.0
    return max(-float(np.sum(eigs * _log(eigs))), 0.0)


def matrix_entropy(matrix: np.ndarray) -> float:
    """Entropy of a raw Hermitian positive matrix, no validation."""
    return spectrum_entropy(np.linalg.eigvalsh(hermitize(matrix)))


def batch_entropies(stack: np.ndarray) -> np.ndarray:
    """Entropies of a stack of positive matrices of shape (m, d, d)."""
    eigs = np.linalg.eigvalsh(0.5 * (stack + np.conj(np.swapaxes(stack, -1, -2))))
    safe = np.where(eigs > EIGEN_CUTOFF, eigs, 1.0)
    terms = np.where(eigs > EIGEN_CUTOFF, -eigs * _log(safe), 0.0)
    return terms.sum(axis=-1)


def entropy(rho) -> float:
    """von Neumann entropy H(ρ) in bits."""
    matrix = as_array(rho)
    check_hermitian(matrix, "entropy argument")
    return matrix_entropy(matrix)


def subnormalized_entropy(S) -> float:
    """−Tr S log S for a positive operator with 0 ≤ Tr S ≤ 1."""
    matrix = as_array(S)
    check_positive(matrix, "subnormalized operator")
    trace = float(np.real(np.trace(matrix)))
    if trace > 1.0 + TRACE_TOL:
        raise InvalidInputError(f"Subnormalized operator has trace {trace:.12f} > 1")
    return matrix_entropy(matrix)


def relative_entropy_raw(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Tr ρ(log ρ − log σ) for positive operators, evaluated in σ's eigenbasis.

    Returns +inf when ρ has weight outside the support of σ.
    """
    sigma_eigs, sigma_vecs = np.linalg.eigh(hermitize(sigma))
    rho_diag = np.real(np.einsum('ik,ij,jk->k', sigma_vecs.conj(), rho, sigma_vecs))
    off_support = sigma_eigs < EIGEN_CUTOFF
    if np.any(rho_diag[off_support] > SUPPORT_WEIGHT_TOL):
        return float('inf')
    on_support = ~off_support
    cross = float(np.sum(rho_diag[on_support] * _log(sigma_eigs[on_support])))
    return -matrix_entropy(rho) - cross


def relative_entropy(rho, sigma) -> float:
    """H(ρ‖σ) in bits, +inf when supp ρ ⊄ supp σ."""
    rho_m, sigma_m = as_array(rho), as_array(sigma)
    check_square(rho_m, "ρ")
    check_square(sigma_m, "σ")
    if rho_m.shape != sigma_m.shape:
        raise InvalidInputError(f"Relative entropy needs equal dimensions, got {rho_m.shape} and {sigma_m.shape}")
    value = relative_entropy_raw(rho_m, sigma_m)
    return value if np.isinf(value) else max(value, 0.0)


def binary_entropy(x: float) -> float:
    """h₂(x) = −x log x − (1−x) log(1−x)."""
    if not 0.0 <= x <= 1.0:
        raise InvalidInputError(f"Binary entropy argument must lie in [0, 1], got {x}")
    return spectrum_entropy(np.array([x, 1.0 - x]))


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(a, b)


def tensor(rho, omega) -> DensityMatrix:
    """ρ ⊗ ω."""
    return DensityMatrix(np.kron(as_array(rho), as_array(omega)))


def _keep_index(keep) -> int:
    if keep in (0, 'left', 'H', 'first'):
        return 0
    if keep in (1, 'right', 'K', 'second'):
        return 1
    raise InvalidInputError(f"keep must name the left or right factor, got {keep!r}")


def reduce_operator(matrix: np.ndarray, dims: Tuple[int, int], keep) -> np.ndarray:
    """Partial trace of a raw operator on H⊗K keeping one factor."""
    d_h, d_k = int(dims[0]), int(dims[1])
    if matrix.shape != (d_h * d_k, d_h * d_k):
        raise InvalidInputError(f"Operator of shape {matrix.shape} does not factor as {d_h}x{d_k}")
    blocks = matrix.reshape(d_h, d_k, d_h, d_k)
    if _keep_index(keep) == 0:
        return np.einsum('ikjk->ij', blocks)
    return np.einsum('kikj->ij', blocks)


def partial_trace(sigma, dims: Tuple[int, int], keep) -> DensityMatrix:
    """Marginal of a bipartite state on the kept factor."""
    return DensityMatrix(reduce_operator(as_array(sigma), dims, keep))


def check_orthonormal_basis(basis: np.ndarray) -> np.ndarray:
    basis = np.asarray(basis, dtype=complex)
    check_square(basis, "measurement basis")
    residual = float(np.max(np.abs(basis.conj().T @ basis - np.eye(basis.shape[0]))))
    if residual > ORTHONORMAL_TOL:
        raise InvalidInputError(f"Measurement basis is not orthonormal (residual {residual:.3e})")
    return basis


def measurement_posteriors(sigma, basis, dims: Tuple[int, int]) -> List[Tuple[float, DensityMatrix]]:
    """Outcome probabilities and posterior states of the measurement {|e_j⟩⟨e_j| ⊗ I}.

    ``basis`` holds the orthonormal vectors e_j as columns. Outcomes with
    probability ≤ EIGEN_CUTOFF are dropped.
    """
    matrix = as_array(sigma)
    basis = check_orthonormal_basis(basis)
    d_h, d_k = int(dims[0]), int(dims[1])
    if basis.shape[0] != d_h or matrix.shape[0] != d_h * d_k:
        raise InvalidInputError(f"Basis of size {basis.shape[0]} and state of size {matrix.shape[0]} "
                                f"do not match dims {d_h}x{d_k}")
    outcomes = []
    for j in range(d_h):
        projector = np.kron(np.outer(basis[:, j], basis[:, j].conj()), np.eye(d_k))
        pinched = projector @ matrix @ projector
        p = float(np.real(np.trace(pinched)))
        if p <= EIGEN_CUTOFF:
            continue
        outcomes.append((p, DensityMatrix(hermitize(pinched / p))))
    return outcomes


def average_state(ensemble: Ensemble) -> DensityMatrix:
    """ρ_av = Σ π_i ρ_i."""
    return DensityMatrix(np.einsum('i,ijk->jk', ensemble.weights, ensemble.matrices))


def _blocks(state) -> Sequence[np.ndarray]:
    return state.blocks if isinstance(state, BlockState) else [np.asarray(b, dtype=complex) for b in state]


def block_entropy(state) -> float:
    """Entropy of a direct-sum state: −Σ λ log λ over the eigenvalues of every block."""
    eigs = [np.linalg.eigvalsh(hermitize(b)) for b in _blocks(state) if b.size]
    return spectrum_entropy(np.concatenate(eigs)) if eigs else 0.0


def block_entropy_by_weights(state) -> float:
    """H(w) + Σ_j w_j H(S_j / w_j) with w_j = Tr S_j."""
    blocks = _blocks(state)
    weights = np.array([float(np.real(np.trace(b))) for b in blocks])
    total = spectrum_entropy(weights)
    for w, block in zip(weights, blocks):
        if w > EIGEN_CUTOFF:
            total += w * matrix_entropy(block / w)
    return total


def block_relative_entropy(state, reference) -> float:
    """Σ_j Tr S_j(log S_j − log T_j) over matching blocks."""
    blocks, refs = _blocks(state), _blocks(reference)
    if len(blocks) != len(refs):
        raise InvalidInputError(f"Block layouts differ: {len(blocks)} vs {len(refs)} blocks")
    total = 0.0
    for block, ref in zip(blocks, refs):
        if block.shape != ref.shape:
            raise InvalidInputError(f"Block shapes differ: {block.shape} vs {ref.shape}")
        if not block.size or float(np.real(np.trace(block))) <= EIGEN_CUTOFF:
            continue
        total += relative_entropy_raw(block, ref)
    return total


def hermitian_basis(dim: int) -> List[np.ndarray]:
    """Traceless Hermitian operators, orthonormal in the Hilbert–Schmidt product."""
    basis = []
    for j in range(dim):
        for k in range(j + 1, dim):
            sym = np.zeros((dim, dim), dtype=complex)
            sym[j, k] = sym[k, j] = 1 / np.sqrt(2)
            anti = np.zeros((dim, dim), dtype=complex)
            anti[j, k], anti[k, j] = -1j / np.sqrt(2), 1j / np.sqrt(2)
            basis.extend([sym, anti])
    for level in range(1, dim):
        diag = np.zeros(dim)
        diag[:level] = 1.0
        diag[level] = -level
        basis.append(np.diag(diag / np.sqrt(level * (level + 1))).astype(complex))
    return basis


def make_rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_dim(dim: int) -> int:
    if int(dim) < 1:
        raise InvalidInputError(f"Dimension must be positive, got {dim}")
    return int(dim)


def random_unitary(dim: int, seed: Seed = None) -> np.ndarray:
    """Haar-random unitary."""
    dim = _check_dim(dim)
    if dim == 1:
        return np.ones((1, 1), dtype=complex)
    return unitary_group.rvs(dim, random_state=make_rng(seed))


def random_pure_vector(dim: int, seed: Seed = None) -> np.ndarray:
    rng = make_rng(seed)
    vector = rng.normal(size=_check_dim(dim)) + 1j * rng.normal(size=dim)
    return vector / np.linalg.norm(vector)


def random_state(dim: int, rank: int = None, seed: Seed = None) -> DensityMatrix:
    """Random density matrix of the given rank (Wishart-style)."""
    dim = _check_dim(dim)
    rank = dim if rank is None else int(rank)
    if not 1 <= rank <= dim:
        raise InvalidInputError(f"Rank must lie in [1, {dim}], got {rank}")
    rng = make_rng(seed)
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    matrix = g @ g.conj().T
    return DensityMatrix(hermitize(matrix / np.real(np.trace(matrix))))


def random_effect(dim: int, seed: Seed = None) -> HermitianOperator:
    """Random operator with spectrum in [0, 1]."""
    rng = make_rng(seed)
    unitary = random_unitary(_check_dim(dim), rng)
    spectrum = rng.uniform(0.0, 1.0, size=dim)
    return HermitianOperator(hermitize(unitary @ np.diag(spectrum) @ unitary.conj().T))


def random_ensemble(dim: int, n: int, seed: Seed = None) -> Ensemble:
    if int(n) < 1:
        raise InvalidInputError(f"Ensemble size must be ≥ 1, got {n}")
    rng = make_rng(seed)
    weights = rng.dirichlet(np.ones(n))
    weights = np.maximum(weights, 1e-6)
    states = tuple(random_state(dim, dim, rng) for _ in range(n))
    return Ensemble(weights / weights.sum(), states)


def maximally_entangled_vector(d_h: int, d_k: int) -> np.ndarray:
    m = min(d_h, d_k)
    vector = np.zeros(d_h * d_k, dtype=complex)
    for i in range(m):
        vector[i * d_k + i] = 1.0
    return vector / np.sqrt(m)


def random_entangled_state(dims: Tuple[int, int], rank: int = 1, bias: float = 0.5,
                           seed: Seed = None) -> DensityMatrix:
    """Mixture of ``rank`` pure states pulled toward locally rotated maximally entangled vectors.

    ``bias`` = 0 gives Haar-like pure components; ``bias`` = 1 gives maximally
    entangled components.
    """
    if not 0.0 <= bias <= 1.0:
        raise InvalidInputError(f"bias must lie in [0, 1], got {bias}")
    d_h, d_k = _check_dim(dims[0]), _check_dim(dims[1])
    if not 1 <= int(rank) <= d_h * d_k:
        raise InvalidInputError(f"Rank must lie in [1, {d_h * d_k}], got {rank}")
    rng = make_rng(seed)
    phi = maximally_entangled_vector(d_h, d_k)
    weights = rng.dirichlet(np.ones(rank)) if rank > 1 else np.ones(1)
    matrix = np.zeros((d_h * d_k, d_h * d_k), dtype=complex)
    for w in weights:
        generic = random_pure_vector(d_h * d_k, rng)
        local = np.kron(random_unitary(d_h, rng), random_unitary(d_k, rng)) @ phi
        vector = (1.0 - bias) * generic + bias * local
        norm = np.linalg.norm(vector)
        vector = local if norm < 1e-12 else vector / norm
        matrix += w * np.outer(vector, vector.conj())
    return DensityMatrix(hermitize(matrix / np.real(np.trace(matrix))))


__all__ = [
    'LOG_BASE', 'EIGEN_CUTOFF', 'PSD_TOL',
    'entropy', 'subnormalized_entropy', 'relative_entropy', 'binary_entropy', 'tensor', 'partial_trace',
    'measurement_posteriors', 'average_state', 'block_entropy', 'block_entropy_by_weights',
    'block_relative_entropy', 'random_state', 'random_effect', 'random_ensemble', 'random_unitary',
    'random_pure_vector', 'random_entangled_state', 'hermitian_basis',
]
