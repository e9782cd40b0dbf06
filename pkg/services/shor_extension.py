import logging
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from models.channel import BlockChannel, KrausChannel, ShorExtension, stack_kraus
from models.constraint import ConstraintSet, FullConstraint, LinearConstraint, MarginalsConstraint
from models.errors import ConsistencyError, InvalidInputError, UnsupportedOperationError
from models.quantum_state import BlockState, DensityMatrix, Ensemble, HermitianOperator, IndexedState, as_array
from models.result import (AsymptoticRow, CapacityResult, Certificate, ExtensionBoundRecord, GapReport,
                           OptimizerConfig)
from services.channel_ops import chi_of_ensemble, tensor_channels, trace_to_flag, trivial_channel
from services.quantum_ops import block_entropy, subnormalized_entropy
from services.solvers.capacity_solver import CapacitySolver
from services.solvers.certificate_solver import CertificateSolver
from services.solvers.ensemble_optimizer import psd_sqrt

logger = logging.getLogger(__name__)

DUAL_PATH_WARN = 1e-9
DUAL_PATH_FAIL = 1e-6
UNREDUCED_MAX_D = 2

Mapper = Callable[[Callable, Iterable], Iterable]


def _matrix(value) -> np.ndarray:
    return as_array(value)


def _complement(x: ShorExtension) -> np.ndarray:
    return np.eye(x.din) - x.effect.matrix


def _check_parts(parts: Sequence[np.ndarray], dim: int, what: str) -> None:
    for index, part in enumerate(parts):
        if part.shape != (dim, dim):
            raise InvalidInputError(f"{what} part {index + 1} has shape {part.shape}, expected {(dim, dim)}")


# Indexed inputs and the extension's action

def delta_embed(sigma, j: int, d: int) -> IndexedState:
    """δ_j(σ): σ at slot j (1-based) and zeros elsewhere."""
    j, d = int(j), int(d)
    if d < 1 or not 1 <= j <= d:
        raise InvalidInputError(f"Slot {j} out of range for d = {d}")
    state = sigma if isinstance(sigma, DensityMatrix) else DensityMatrix(_matrix(sigma))
    zero = np.zeros_like(state.matrix)
    return IndexedState(tuple(state.matrix if slot == j else zero for slot in range(1, d + 1)))


def apply_extension(x: ShorExtension, indexed: IndexedState) -> BlockState:
    """[(1−q)Φ(ρ), q·diag(Tr ρE⊥, Tr ρ₁E, …, Tr ρ_dE)] with ρ = Σ ρ_j."""
    if indexed.d != x.d:
        raise InvalidInputError(f"Indexed state has {indexed.d} slots, extension expects d = {x.d}")
    _check_parts(indexed.parts, x.din, "Indexed state")
    rho = indexed.total
    E = x.effect.matrix
    classical = [float(np.real(np.trace(rho @ _complement(x))))]
    classical += [float(np.real(np.trace(part @ E))) for part in indexed.parts]
    return BlockState(((1.0 - x.q) * x.base.act(rho), x.q * np.diag(np.maximum(classical, 0.0)).astype(complex)))


def reduced_map(psi: KrausChannel, A, sigma) -> np.ndarray:
    """Ψ_A(σ) = Tr_H (A⊗I)(Id⊗Ψ)(σ), a completely positive trace-nonincreasing map."""
    A = _matrix(A)
    matrix = _matrix(sigma)
    d_h, d_k = A.shape[0], psi.din
    if matrix.shape != (d_h * d_k, d_h * d_k):
        raise InvalidInputError(f"Joint operator of shape {matrix.shape} does not factor as {d_h}x{d_k}")
    # A on H commutes with Ψ on K, so weight H by A, trace it out and then apply Ψ.
    weighted = np.einsum('ba,akbl->kl', A, matrix.reshape(d_h, d_k, d_h, d_k))
    return psi.act(weighted)


def apply_extension_tensor(x: ShorExtension, psi: KrausChannel, parts: Sequence) -> BlockState:
    """(Φ̂⊗Ψ)(σ̂) as blocks [(1−q)(Φ⊗Ψ)(σ), qΨ_{E⊥}(σ), qΨ_E(σ₁), …, qΨ_E(σ_d)]."""
    parts = [_matrix(p) for p in parts]
    if len(parts) != x.d:
        raise InvalidInputError(f"Got {len(parts)} slots, extension expects d = {x.d}")
    _check_parts(parts, x.din * psi.din, "Joint indexed state")
    total = float(np.real(sum(np.trace(p) for p in parts)))
    if abs(total - 1.0) > 1e-10:
        raise InvalidInputError(f"Slot traces must sum to 1, got {total:.12f}")
    sigma = sum(parts)
    joint = tensor_channels(x.base, psi)
    blocks = [(1.0 - x.q) * joint.act(sigma), x.q * reduced_map(psi, _complement(x), sigma)]
    blocks += [x.q * reduced_map(psi, x.effect.matrix, part) for part in parts]
    return BlockState(tuple(blocks))


# Closed forms

def split_effect_chi(psi: KrausChannel, effect, ensemble: Ensemble) -> float:
    """χ_{Ψ_E}(e) + χ_{Ψ_{E⊥}}(e) for the two trace-nonincreasing branches of a binary measurement."""
    E = _matrix(effect)
    complement = np.eye(E.shape[0]) - E
    total = 0.0
    for A in (E, complement):
        average = reduced_map(psi, A, sum(w * s.matrix for w, s in zip(ensemble.weights, ensemble.states)))
        terms = [subnormalized_entropy(_psd(reduced_map(psi, A, s.matrix))) for s in ensemble.states]
        total += subnormalized_entropy(_psd(average)) - float(ensemble.weights @ np.array(terms))
    return max(total, 0.0)


def _psd(matrix: np.ndarray) -> np.ndarray:
    """Clip rounding-level negative eigenvalues so entropy validation accepts the operator."""
    vals, vecs = np.linalg.eigh(0.5 * (matrix + matrix.conj().T))
    return (vecs * np.maximum(vals, 0.0)) @ vecs.conj().T


def reduced_block_channel(x: ShorExtension, psi: Optional[KrausChannel] = None) -> BlockChannel:
    """(1−q)(Φ⊗Ψ) ⊕ q·M on H⊗K, where M records which branch of {E⊥, E} fired and keeps Ψ's output.

    On symmetrized ensembles {μ_i/d, δ_j(σ_i)} the extension's χ equals χ of this
    channel plus q·log₂d·Tr σ_av(E⊗I).
    """
    psi = trivial_channel() if psi is None else psi
    d_h = x.din
    flags = np.eye(2, dtype=complex)
    kraus = []
    for flag, branch in ((flags[:, :1], psd_sqrt(_complement(x))), (flags[:, 1:], psd_sqrt(x.effect.matrix))):
        for a in range(d_h):
            row = branch[a:a + 1, :]
            for L in psi.kraus_ops:
                kraus.append(np.kron(flag, np.kron(row, L)))
    measure = KrausChannel(stack_kraus(kraus))
    return BlockChannel(((1.0 - x.q, tensor_channels(x.base, psi)), (x.q, measure)),
                        record={'reduced_extension': x.to_dict()})


def extension_as_block_channel(x: ShorExtension) -> BlockChannel:
    """The extension on C^d⊗H; any input is read through its block-diagonal part {ρ_j}."""
    d, d_h = x.d, x.din
    identity = np.eye(d_h, dtype=complex)
    selectors = [np.kron(np.eye(d, dtype=complex)[j:j + 1, :], identity) for j in range(d)]
    channel_part = [K @ S for S in selectors for K in x.base.kraus_ops]

    outputs = np.eye(d + 1, dtype=complex)
    root_c, root_e = psd_sqrt(_complement(x)), psd_sqrt(x.effect.matrix)
    measure_part = []
    for j, S in enumerate(selectors):
        for a in range(d_h):
            measure_part.append(np.kron(outputs[:, :1], root_c[a:a + 1, :]) @ S)
            measure_part.append(np.kron(outputs[:, j + 1:j + 2], root_e[a:a + 1, :]) @ S)
    return BlockChannel(((1.0 - x.q, KrausChannel(stack_kraus(channel_part))),
                         (x.q, KrausChannel(stack_kraus(measure_part)))),
                        record={'extension': x.to_dict()})


def chi_extension_ensemble(x: ShorExtension, psi: Optional[KrausChannel], ensemble: Ensemble) -> Tuple[float, float]:
    """χ of Φ̂⊗Ψ on {μ_i/d, δ_j(σ_i)}: closed form and direct block-entropy evaluation."""
    psi = trivial_channel() if psi is None else psi
    if ensemble.dim != x.din * psi.din:
        raise InvalidInputError(f"Ensemble dimension {ensemble.dim} does not match {x.din}x{psi.din}")
    weights, matrices = ensemble.weights, ensemble.matrices
    average = np.einsum('i,ijk->jk', weights, matrices)
    E_joint = np.kron(x.effect.matrix, np.eye(psi.din))
    index_term = x.q * np.log2(x.d) * float(np.real(np.trace(average @ E_joint)))
    joint_chi = chi_of_ensemble(tensor_channels(x.base, psi), ensemble)
    closed = (1.0 - x.q) * joint_chi + index_term + x.q * split_effect_chi(psi, x.effect, ensemble)

    def slots(sigma: np.ndarray, j: Optional[int]) -> List[np.ndarray]:
        if j is None:
            return [sigma / x.d] * x.d
        zero = np.zeros_like(sigma)
        return [sigma if slot == j else zero for slot in range(x.d)]

    output_entropy = block_entropy(apply_extension_tensor(x, psi, slots(average, None)))
    per_state = [block_entropy(apply_extension_tensor(x, psi, slots(s, j)))
                 for s in matrices for j in range(x.d)]
    direct = output_entropy - float(np.repeat(weights / x.d, x.d) @ np.array(per_state))

    discrepancy = abs(closed - direct)
    if discrepancy > DUAL_PATH_FAIL:
        raise ConsistencyError(f"Extension χ closed form {closed:.12f} disagrees with direct {direct:.12f}",
                               discrepancy=discrepancy)
    if discrepancy > DUAL_PATH_WARN:
        logger.warning(f"Extension χ paths differ by {discrepancy:.2e}")
    return closed, direct


# Capacities

def joint_constraint(B: ConstraintSet, d_h: int, d_k: int) -> ConstraintSet:
    """Constraint on σ_av over H⊗K that only restricts its K-marginal."""
    if isinstance(B, FullConstraint):
        return FullConstraint()
    return MarginalsConstraint(FullConstraint(), B, dims=(d_h, d_k))


def _index_multiplier(x: ShorExtension) -> float:
    return x.q * float(np.log2(x.d))


def extension_capacity_joint(x: ShorExtension, psi: Optional[KrausChannel] = None,
                             B: ConstraintSet = FullConstraint(),
                             cfg: Optional[OptimizerConfig] = None) -> CapacityResult:
    """C̄(Φ̂⊗Ψ; S_Φ̂⊗B) through the symmetry-reduced ensembles."""
    cfg = cfg or OptimizerConfig.from_env()
    psi = trivial_channel() if psi is None else psi
    channel = reduced_block_channel(x, psi)
    effect = np.kron(x.effect.matrix, np.eye(psi.din))
    lam = _index_multiplier(x)
    logger.info(f"Extension capacity: d={x.d}, q={x.q:.6g}, λ=q·log₂d={lam:.6g}")
    return CapacitySolver(cfg).lagrangian_capacity(channel, effect, lam, joint_constraint(B, x.din, psi.din))


def extension_capacity(x: ShorExtension, cfg: Optional[OptimizerConfig] = None) -> CapacityResult:
    return extension_capacity_joint(x, None, FullConstraint(), cfg)


def extension_capacity_unreduced(x: ShorExtension, cfg: Optional[OptimizerConfig] = None) -> CapacityResult:
    """Direct search over all ensembles of indexed states (small d only)."""
    if x.d > UNREDUCED_MAX_D:
        raise UnsupportedOperationError(f"Unreduced extension search supports d ≤ {UNREDUCED_MAX_D}, got {x.d}")
    return CapacitySolver(cfg or OptimizerConfig.from_env()).chi_capacity(extension_as_block_channel(x),
                                                                          FullConstraint())


def lagrangian_joint_max(phi: KrausChannel, psi: KrausChannel, effect, lam: float,
                         B: ConstraintSet = FullConstraint(),
                         cfg: Optional[OptimizerConfig] = None) -> CapacityResult:
    """max over σ with Tr_H σ ∈ B of χ_{Φ⊗Ψ}(σ) + λ Tr σ(E⊗I)."""
    joint_effect = np.kron(_matrix(effect), np.eye(psi.din))
    return CapacitySolver(cfg or OptimizerConfig.from_env()).lagrangian_capacity(
        tensor_channels(phi, psi), joint_effect, lam, joint_constraint(B, phi.din, psi.din))


def _damped_lagrangian(phi: KrausChannel, psi: KrausChannel, effect, q: float, lam: float, B: ConstraintSet,
                       cfg: OptimizerConfig) -> CapacityResult:
    """max over σ of (1−q)χ_{Φ⊗Ψ}(σ) + λ Tr σ(E⊗I); the discarded branch contributes no χ."""
    joint = tensor_channels(phi, psi)
    channel = BlockChannel(((1.0 - q, joint), (q, trace_to_flag(joint.din))))
    joint_effect = np.kron(_matrix(effect), np.eye(psi.din))
    return CapacitySolver(cfg).lagrangian_capacity(channel, joint_effect, lam, joint_constraint(B, phi.din, psi.din))


def extension_bound_check(phi: KrausChannel, psi: Optional[KrausChannel], effect, q: float, d: int,
                          B: ConstraintSet = FullConstraint(),
                          cfg: Optional[OptimizerConfig] = None) -> ExtensionBoundRecord:
    """Compare C̄(Φ̂⊗Ψ; S_Φ̂⊗B) with its d-free approximation; they differ by at most q(log₂ dim K′ + 1)."""
    cfg = cfg or OptimizerConfig.from_env()
    psi = trivial_channel() if psi is None else psi
    x = ShorExtension(phi, HermitianOperator(_matrix(effect)), q, d)
    lhs = extension_capacity_joint(x, psi, B, cfg)
    rhs = _damped_lagrangian(phi, psi, x.effect.matrix, x.q, _index_multiplier(x), B, cfg)
    bound = x.q * (np.log2(psi.dout) + 1.0)
    record = ExtensionBoundRecord(x.d, x.q, lhs.value, rhs.value, float(bound), cfg.tol_certificate,
                                  lhs.converged and rhs.converged)
    logger.info(f"{'✓' if record.passed else '✗'} d={x.d} q={x.q:.4g}: |lhs−rhs|={record.deviation:.3e} "
                f"bound={record.bound:.3e}")
    return record


def asymptotic_sweep(phi: KrausChannel, effect, lam: float, ds: Sequence[int],
                     cfg: Optional[OptimizerConfig] = None, mapper: Mapper = map) -> List[AsymptoticRow]:
    """Extension capacities along d with q = λ/log₂d against their finite and limiting targets."""
    cfg = cfg or OptimizerConfig.from_env()
    E = HermitianOperator(_matrix(effect))
    ds = [int(d) for d in ds]
    for d in ds:
        if d < 2:
            raise InvalidInputError(f"Sweep needs d ≥ 2, got {d}")
        if lam / np.log2(d) > 1.0:
            raise InvalidInputError(f"q = λ/log₂d = {lam / np.log2(d):.4g} exceeds 1 at d = {d}")

    psi = trivial_channel()
    limit = lagrangian_joint_max(phi, psi, E.matrix, lam, FullConstraint(), cfg).value

    def evaluate(d: int) -> AsymptoticRow:
        q = lam / np.log2(d)
        capacity = extension_capacity(ShorExtension(phi, E, q, d), cfg)
        target = _damped_lagrangian(phi, psi, E.matrix, q, lam, FullConstraint(), cfg)
        return AsymptoticRow(d, q, capacity.value, target.value, limit, q, capacity.converged and target.converged)

    rows = []
    for d, row in zip(ds, mapper(evaluate, ds)):
        q = lam / np.log2(d)
        rows.append(row if row is not None else AsymptoticRow(d, q, float('nan'), float('nan'), limit, q, False))
    return rows


def extension_certificate(x: ShorExtension, psi: Optional[KrausChannel], B: ConstraintSet, candidate: Ensemble,
                          cfg: Optional[OptimizerConfig] = None) -> Certificate:
    """Maximal-distance certificate for a reduced ensemble {μ_i, σ_i} on H⊗K."""
    if not isinstance(B, (FullConstraint, LinearConstraint)):
        raise UnsupportedOperationError("Extension certificates support Full or Linear constraints on Ψ's input")
    psi = trivial_channel() if psi is None else psi
    linear = _index_multiplier(x) * np.kron(x.effect.matrix, np.eye(psi.din))
    return CertificateSolver(cfg or OptimizerConfig.from_env()).certify(
        reduced_block_channel(x, psi), joint_constraint(B, x.din, psi.din), candidate, linear)


def extension_additivity_gap(phi: KrausChannel, effect, lam: float, d: int, psi: KrausChannel,
                             B: ConstraintSet = FullConstraint(),
                             cfg: Optional[OptimizerConfig] = None) -> GapReport:
    """C̄(Φ̂) + C̄(Ψ; B) − C̄(Φ̂⊗Ψ; S_Φ̂⊗B) at finite d; reported, never asserted."""
    cfg = cfg or OptimizerConfig.from_env()
    if d < 2:
        raise InvalidInputError(f"d must be ≥ 2, got {d}")
    x = ShorExtension(phi, HermitianOperator(_matrix(effect)), lam / np.log2(d), d)
    single = extension_capacity(x, cfg)
    other = CapacitySolver(cfg).chi_capacity(psi, B)
    joint = extension_capacity_joint(x, psi, B, cfg)
    tolerance = 2.0 * cfg.tol_certificate
    rhs = single.value + other.value
    return GapReport('extension_additivity', joint.value, rhs, tolerance,
                     instance={'extension': x.to_dict(), 'psi': psi.to_dict(), 'B': B.to_dict()},
                     seed=cfg.seed, converged=single.converged and other.converged and joint.converged,
                     details={'extension_capacity': single.value, 'psi_capacity': other.value,
                              'trivial_direction': rhs - joint.value <= tolerance})
