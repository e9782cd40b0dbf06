import logging
from typing import List, Sequence, Tuple, Union

import numpy as np

from models.channel import BlockChannel, KrausChannel, completeness_residual, stack_kraus
from models.errors import ConsistencyError, InvalidInputError
from models.quantum_state import (BlockState, DensityMatrix, Ensemble, as_array, check_positive, hermitize,
                                  matrix_to_literal)
from models.result import ChannelDiagnostics
from services.quantum_ops import (EIGEN_CUTOFF, _log, batch_entropies, block_entropy, make_rng, matrix_entropy,
                                  random_state, random_unitary, relative_entropy_raw, spectrum_entropy)

logger = logging.getLogger(__name__)

Channel = Union[KrausChannel, BlockChannel]

POVM_TOL = 1e-10
BLOCKWISE_TOL = 1e-10
REFERENCE_FLOOR = 1e-10


def _check_input(channel: Channel, rho: np.ndarray) -> None:
    if rho.shape != (channel.din, channel.din):
        raise InvalidInputError(f"Input of shape {rho.shape} does not match channel input dimension {channel.din}")


def apply(channel: KrausChannel, rho) -> DensityMatrix:
    """Φ(ρ) = Σ_k K_k ρ K_k†."""
    matrix = as_array(rho)
    _check_input(channel, matrix)
    return DensityMatrix(hermitize(channel.act(matrix)))


def apply_block(channel: BlockChannel, rho) -> BlockState:
    """[q_j Φ_j(ρ)] for a direct sum mixture."""
    matrix = as_array(rho)
    _check_input(channel, matrix)
    return BlockState(tuple(q * hermitize(c.act(matrix)) for q, c in channel.components))


# Constructors

def _check_dim(d: int) -> int:
    if int(d) < 2:
        raise InvalidInputError(f"Channel dimension must be ≥ 2, got {d}")
    return int(d)


def _check_probability(p: float, name: str = 'p') -> float:
    if not 0.0 <= float(p) <= 1.0:
        raise InvalidInputError(f"{name} must lie in [0, 1], got {p}")
    return float(p)


def noiseless(d: int) -> KrausChannel:
    d = _check_dim(d)
    return KrausChannel(np.eye(d, dtype=complex)[np.newaxis], record={'family': 'noiseless', 'params': {'d': d}})


def weyl_operators(d: int) -> List[np.ndarray]:
    """X^a Z^b for a, b = 0..d−1 (generalized Paulis)."""
    shift = np.roll(np.eye(d, dtype=complex), 1, axis=0)
    clock = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    return [np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b) for a in range(d) for b in range(d)]


def depolarizing(p: float, d: int = 2) -> KrausChannel:
    """ρ ↦ (1−p)ρ + p·I/d."""
    d, p = _check_dim(d), _check_probability(p)
    ops = weyl_operators(d)
    kraus = [np.sqrt(1.0 - p + p / d ** 2) * ops[0]]
    if p > 0:
        kraus += [np.sqrt(p / d ** 2) * w for w in ops[1:]]
    return KrausChannel(stack_kraus(kraus), record={'family': 'depolarizing', 'params': {'p': p, 'd': d}})


def completely_depolarizing(d: int) -> KrausChannel:
    channel = depolarizing(1.0, d)
    return KrausChannel(channel.kraus_ops, record={'family': 'completely_depolarizing', 'params': {'d': d}})


def dephasing(p: float, d: int = 2) -> KrausChannel:
    """ρ ↦ (1−p)ρ + p·diag(ρ)."""
    d, p = _check_dim(d), _check_probability(p)
    kraus = [np.sqrt(1.0 - p) * np.eye(d, dtype=complex)]
    if p > 0:
        for j in range(d):
            projector = np.zeros((d, d), dtype=complex)
            projector[j, j] = np.sqrt(p)
            kraus.append(projector)
    return KrausChannel(stack_kraus(kraus), record={'family': 'dephasing', 'params': {'p': p, 'd': d}})


def amplitude_damping(gamma: float) -> KrausChannel:
    gamma = _check_probability(gamma, 'gamma')
    k0 = np.array([[1.0, 0.0], [0.0, np.sqrt(1.0 - gamma)]], dtype=complex)
    k1 = np.array([[0.0, np.sqrt(gamma)], [0.0, 0.0]], dtype=complex)
    return KrausChannel(stack_kraus([k0, k1]), record={'family': 'amplitude_damping', 'params': {'gamma': gamma}})


def trivial_channel() -> KrausChannel:
    """The 1 → 1 dimensional identity; the tensor unit."""
    return KrausChannel(np.ones((1, 1, 1), dtype=complex), record={'family': 'trivial', 'params': {}})


def entanglement_breaking(povm: Sequence, outputs: Sequence) -> KrausChannel:
    """Measure-and-prepare channel ρ ↦ Σ_k Tr(M_k ρ) σ_k in Kraus form."""
    effects = [as_array(m) for m in povm]
    states = [o if isinstance(o, DensityMatrix) else DensityMatrix(o) for o in outputs]
    if not effects or len(effects) != len(states):
        raise InvalidInputError(f"POVM and outputs must be non-empty and matched, got {len(effects)} and {len(states)}")
    din = effects[0].shape[0]
    for index, effect in enumerate(effects):
        if effect.shape != (din, din):
            raise InvalidInputError(f"POVM element {index} has shape {effect.shape}, expected {(din, din)}")
        check_positive(effect, f"POVM element {index}")
    residual = float(np.max(np.abs(sum(effects) - np.eye(din))))
    if residual > POVM_TOL:
        raise InvalidInputError(f"POVM is not complete (residual {residual:.3e})")
    if len({s.dim for s in states}) != 1:
        raise InvalidInputError("Prepared states must share one dimension")

    kraus = []
    for effect, state in zip(effects, states):
        m_vals, m_vecs = np.linalg.eigh(hermitize(effect))
        s_vals, s_vecs = np.linalg.eigh(state.matrix)
        for m, a in zip(m_vals, m_vecs.T):
            if m <= 1e-14:
                continue
            for s, b in zip(s_vals, s_vecs.T):
                if s <= 1e-14:
                    continue
                kraus.append(np.sqrt(m * s) * np.outer(b, a.conj()))
    record = {
        'family': 'entanglement_breaking',
        'params': {'povm': [matrix_to_literal(e) for e in effects], 'outputs': [s.to_dict() for s in states]},
    }
    return KrausChannel(stack_kraus(kraus), record=record,
                        measure_prepare=(tuple(effects), tuple(s.matrix for s in states)))


def constant_channel(omega, din: int) -> KrausChannel:
    """ρ ↦ ω."""
    channel = entanglement_breaking([np.eye(din)], [omega])
    state = omega if isinstance(omega, DensityMatrix) else DensityMatrix(omega)
    return KrausChannel(channel.kraus_ops, measure_prepare=channel.measure_prepare,
                        record={'family': 'constant', 'params': {'omega': state.to_dict(), 'din': int(din)}})


def trace_to_flag(d: int) -> KrausChannel:
    """Discards the input and outputs the one-dimensional flag state."""
    kraus = [np.eye(d, dtype=complex)[j:j + 1, :] for j in range(d)]
    return KrausChannel(stack_kraus(kraus), record={'family': 'flag', 'params': {'d': int(d)}})


def erasure(q: float, d: int = 2) -> BlockChannel:
    """q·Id ⊕ (1−q)·(constant-to-flag): the input survives with probability q."""
    q, d = _check_probability(q, 'q'), _check_dim(d)
    return BlockChannel(((q, noiseless(d)), (1.0 - q, trace_to_flag(d))),
                        record={'family': 'erasure', 'params': {'q': q, 'd': d}})


def random_channel(din: int, dout: int = None, n_kraus: int = 2, seed=None) -> KrausChannel:
    """Channel built from a Haar-random isometry din → n_kraus·dout."""
    dout = din if dout is None else int(dout)
    if n_kraus * dout < din:
        raise InvalidInputError(f"Need n_kraus·dout ≥ din, got {n_kraus}·{dout} < {din}")
    isometry = random_unitary(n_kraus * dout, make_rng(seed))[:, :din]
    kraus = isometry.reshape(n_kraus, dout, din)
    record = {'family': 'random', 'params': {'din': int(din), 'dout': dout, 'n_kraus': int(n_kraus), 'seed': seed}}
    return KrausChannel(kraus, record=record if isinstance(seed, (int, type(None))) else None)


def random_eb_channel(din: int, dout: int = None, outcomes: int = 2, seed=None) -> KrausChannel:
    """Entanglement-breaking channel with a random POVM and random prepared states."""
    dout = din if dout is None else int(dout)
    rng = make_rng(seed)
    raw = [hermitize(g @ g.conj().T) for g in
           (rng.normal(size=(din, din)) + 1j * rng.normal(size=(din, din)) for _ in range(outcomes))]
    total = sum(raw)
    vals, vecs = np.linalg.eigh(total)
    inv_sqrt = vecs @ np.diag(vals ** -0.5) @ vecs.conj().T
    povm = [hermitize(inv_sqrt @ r @ inv_sqrt) for r in raw]
    povm[-1] = hermitize(np.eye(din) - sum(povm[:-1]))
    outputs = [random_state(dout, dout, rng) for _ in range(outcomes)]
    return entanglement_breaking(povm, outputs)


# Composition

def tensor_channels(a: KrausChannel, b: KrausChannel) -> KrausChannel:
    """Φ⊗Ψ with Kraus operators K_i ⊗ L_j."""
    kraus = np.einsum('iab,jcd->ijacbd', a.kraus_ops, b.kraus_ops).reshape(
        a.kraus_rank * b.kraus_rank, a.dout * b.dout, a.din * b.din)
    record = {'tensor': [a.to_dict(), b.to_dict()]}
    return KrausChannel(kraus, record=record)


def tensor_block(a: BlockChannel, b: KrausChannel) -> BlockChannel:
    """(⊕ q_j Φ_j) ⊗ Ψ = ⊕ q_j (Φ_j ⊗ Ψ)."""
    return BlockChannel(tuple((q, tensor_channels(c, b)) for q, c in a.components),
                        record={'tensor': [a.to_dict(), b.to_dict()]})


def tensor_any(a: Channel, b: KrausChannel) -> Channel:
    return tensor_block(a, b) if isinstance(a, BlockChannel) else tensor_channels(a, b)


# Entropic evaluation shared by every solver

def output_entropy(channel: Channel, rho: np.ndarray) -> float:
    """Entropy of the (block) output of a raw input matrix."""
    if isinstance(channel, BlockChannel):
        return block_entropy([q * c.act(rho) for q, c in channel.components])
    return matrix_entropy(channel.act(rho))


def output_entropies(channel: Channel, rhos: np.ndarray) -> np.ndarray:
    """Output entropies for a stack of input matrices of shape (m, din, din)."""
    if isinstance(channel, BlockChannel):
        eigs = [np.linalg.eigvalsh(q * hermitize_stack(c.act_batch(rhos))) for q, c in channel.components]
        return _stacked_spectrum_entropy(np.concatenate(eigs, axis=-1))
    return batch_entropies(channel.act_batch(rhos))


def pure_output_entropies(channel: Channel, vectors: np.ndarray) -> np.ndarray:
    """Output entropies H(Φ(ψψ†)) for a stack of unit vectors of shape (m, din)."""
    if isinstance(channel, BlockChannel):
        eigs = [np.linalg.eigvalsh(q * hermitize_stack(c.act_pure(vectors))) for q, c in channel.components]
        return _stacked_spectrum_entropy(np.concatenate(eigs, axis=-1))
    return batch_entropies(channel.act_pure(vectors))


def hermitize_stack(stack: np.ndarray) -> np.ndarray:
    return 0.5 * (stack + np.conj(np.swapaxes(stack, -1, -2)))


def _stacked_spectrum_entropy(eigs: np.ndarray) -> np.ndarray:
    safe = np.where(eigs > EIGEN_CUTOFF, eigs, 1.0)
    return np.where(eigs > EIGEN_CUTOFF, -eigs * _log(safe), 0.0).sum(axis=-1)


def component_entropy_weight(channel: Channel) -> float:
    """H(q) of the block weights (zero for a plain Kraus channel)."""
    if isinstance(channel, BlockChannel):
        return spectrum_entropy(channel.weights)
    return 0.0


def relative_entropy_kernel(channel: Channel, reference: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Observable L with D(Φ(ω)‖Φ(ref)) = −[H(Φ(ω)) − H(q)] − Tr ωL for every input ω.

    When an output of the reference is rank deficient its logarithm is taken on
    a floored spectrum and the second return value is True.
    """
    deficient = False
    kernel = np.zeros((channel.din, channel.din), dtype=complex)
    components = channel.components if isinstance(channel, BlockChannel) else ((1.0, channel),)
    for q, component in components:
        if q <= 0:
            continue
        out = hermitize(component.act(reference))
        vals, vecs = np.linalg.eigh(out)
        if vals.min() < EIGEN_CUTOFF:
            deficient = True
        vals = np.maximum(vals, REFERENCE_FLOOR)
        log_out = vecs @ np.diag(_log(vals)) @ vecs.conj().T
        kernel += q * component.adjoint(log_out)
    return hermitize(kernel), deficient


def output_relative_entropy(channel: Channel, omega: np.ndarray, reference: np.ndarray) -> float:
    """D(Φ(ω)‖Φ(ref)); block channels sum over blocks."""
    if isinstance(channel, BlockChannel):
        return sum(q * relative_entropy_raw(c.act(omega), c.act(reference)) for q, c in channel.components if q > 0)
    return relative_entropy_raw(channel.act(omega), channel.act(reference))


def adjoint(channel: Channel, observable) -> np.ndarray:
    """Heisenberg-picture action Σ K†XK (blockwise for a direct sum; X given per block)."""
    if isinstance(channel, BlockChannel):
        return sum(q * c.adjoint(as_array(x)) for (q, c), x in zip(channel.components, observable))
    return channel.adjoint(as_array(observable))


def chi_from_matrices(channel: Channel, weights: np.ndarray, matrices: np.ndarray) -> float:
    average = np.einsum('i,ijk->jk', weights, matrices)
    return output_entropy(channel, average) - float(weights @ output_entropies(channel, matrices))


def chi_of_ensemble(channel: Channel, ensemble: Ensemble) -> float:
    """χ_Φ({π_i, ρ_i}) = H(Φ(ρ_av)) − Σ π_i H(Φ(ρ_i)).

    For a direct sum mixture the value is Σ_j q_j χ_{Φ_j}, cross-checked against the
    block-entropy evaluation of the whole output.
    """
    if ensemble.dim != channel.din:
        raise InvalidInputError(f"Ensemble dimension {ensemble.dim} does not match channel input {channel.din}")
    weights, matrices = ensemble.weights, ensemble.matrices
    if not isinstance(channel, BlockChannel):
        return chi_from_matrices(channel, weights, matrices)

    blockwise = sum(q * chi_from_matrices(c, weights, matrices) for q, c in channel.components if q > 0)
    direct = chi_from_matrices(channel, weights, matrices)
    if abs(blockwise - direct) > BLOCKWISE_TOL:
        raise ConsistencyError(f"Blockwise χ {blockwise:.12f} disagrees with direct χ {direct:.12f}",
                               discrepancy=abs(blockwise - direct))
    return blockwise


def chi_relative_entropy_form(channel: Channel, ensemble: Ensemble) -> float:
    """Σ π_i D(Φ(ρ_i)‖Φ(ρ_av)); equals χ for every ensemble."""
    average = np.einsum('i,ijk->jk', ensemble.weights, ensemble.matrices)
    return float(sum(w * output_relative_entropy(channel, s.matrix, average)
                     for w, s in zip(ensemble.weights, ensemble.states)))


def validate_channel(channel) -> ChannelDiagnostics:
    """Completeness residual, dimensions and Kraus rank of a channel or a raw Kraus set."""
    if isinstance(channel, BlockChannel):
        residuals = [completeness_residual(c.kraus_ops) for _, c in channel.components]
        return ChannelDiagnostics(din=channel.din, dout=list(channel.layout),
                                  kraus_rank=sum(c.kraus_rank for _, c in channel.components),
                                  completeness_residual=max(residuals),
                                  trace_preserving=max(residuals) <= 1e-10)
    if isinstance(channel, KrausChannel):
        ops = channel.kraus_ops
        eb = channel.is_entanglement_breaking
    else:
        ops = stack_kraus(channel)
        eb = False
    residual = completeness_residual(ops)
    diagnostics = ChannelDiagnostics(din=ops.shape[2], dout=ops.shape[1], kraus_rank=ops.shape[0],
                                     completeness_residual=residual, trace_preserving=residual <= 1e-10,
                                     entanglement_breaking=eb)
    if not diagnostics.trace_preserving:
        logger.warning(f"Kraus set fails completeness: residual {residual:.3e}")
    return diagnostics


def output_dim(channel: Channel) -> int:
    """Total output dimension (sum of block sizes for a direct sum)."""
    if isinstance(channel, BlockChannel):
        return int(sum(channel.layout))
    return channel.dout


def is_unitary_channel(channel: Channel) -> bool:
    """Single square unitary Kraus operator (noiseless up to a basis change)."""
    if not isinstance(channel, KrausChannel) or channel.kraus_rank != 1 or channel.din != channel.dout:
        return False
    op = channel.kraus_ops[0]
    return bool(np.max(np.abs(op @ op.conj().T - np.eye(channel.dout))) <= 1e-10)
