import numpy as np
import pytest
from numpy.testing import assert_allclose

from models.channel import BlockChannel, KrausChannel, ShorExtension
from models.errors import InvalidInputError
from models.quantum_state import DensityMatrix, Ensemble
from services import channel_ops
from services.quantum_ops import random_effect, random_ensemble, random_state


class TestConstructors:
    """Standard channel families act as documented."""

    def test_noiseless_is_identity(self, qubit_identity):
        rho = random_state(2, seed=1)
        assert_allclose(channel_ops.apply(qubit_identity, rho).matrix, rho.matrix, atol=1e-12)

    def test_depolarizing_mixes_toward_identity(self):
        out = channel_ops.apply(channel_ops.depolarizing(0.5, 2), DensityMatrix.basis(2, 0))
        assert_allclose(out.matrix, np.diag([0.75, 0.25]), atol=1e-12)

    def test_completely_depolarizing_output(self):
        out = channel_ops.apply(channel_ops.completely_depolarizing(3), random_state(3, seed=2))
        assert_allclose(out.matrix, np.eye(3) / 3, atol=1e-12)

    def test_full_amplitude_damping_resets_to_ground(self):
        out = channel_ops.apply(channel_ops.amplitude_damping(1.0), DensityMatrix.basis(2, 1))
        assert_allclose(out.matrix, np.diag([1.0, 0.0]), atol=1e-12)

    def test_full_dephasing_removes_coherence(self, plus_state):
        out = channel_ops.apply(channel_ops.dephasing(1.0, 2), plus_state)
        assert_allclose(out.matrix, np.eye(2) / 2, atol=1e-12)

    def test_constant_channel(self):
        omega = random_state(2, seed=3)
        out = channel_ops.apply(channel_ops.constant_channel(omega, 3), random_state(3, seed=4))
        assert_allclose(out.matrix, omega.matrix, atol=1e-10)

    def test_probability_out_of_range(self):
        with pytest.raises(InvalidInputError, match="must lie in"):
            channel_ops.depolarizing(1.2, 2)

    def test_incomplete_kraus_set_rejected(self):
        with pytest.raises(InvalidInputError, match="not trace preserving"):
            KrausChannel(np.array([[[1.0, 0.0], [0.0, 0.5]]]))

    def test_incomplete_povm_rejected(self):
        with pytest.raises(InvalidInputError, match="POVM is not complete"):
            channel_ops.entanglement_breaking([np.diag([1.0, 0.0])], [DensityMatrix.basis(2, 0)])

    def test_entanglement_breaking_flag(self):
        channel = channel_ops.entanglement_breaking(
            [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])], [DensityMatrix.basis(2, 1), DensityMatrix.basis(2, 0)])
        assert channel.is_entanglement_breaking
        out = channel_ops.apply(channel, DensityMatrix.basis(2, 0))
        assert_allclose(out.matrix, np.diag([0.0, 1.0]), atol=1e-12)

    def test_measure_and_prepare_action(self):
        E = random_effect(2, seed=34).matrix
        povm = [E, np.eye(2) - E]
        outputs = [random_state(3, seed=35), random_state(3, seed=36)]
        channel = channel_ops.entanglement_breaking(povm, outputs)
        for seed in (37, 38, 39):
            rho = random_state(2, seed=seed).matrix
            expected = sum(np.real(np.trace(M @ rho)) * s.matrix for M, s in zip(povm, outputs))
            assert_allclose(channel.act(rho), expected, atol=1e-10)

    def test_erasure_layout(self):
        channel = channel_ops.erasure(0.5, 2)
        assert channel.layout == (2, 1)
        assert channel_ops.output_dim(channel) == 3

    def test_block_weights_must_sum_to_one(self, qubit_identity):
        with pytest.raises(InvalidInputError, match="probability vector"):
            BlockChannel(((0.5, qubit_identity), (0.4, qubit_identity)))

    def test_extension_rejects_bad_effect(self, qubit_identity):
        with pytest.raises(InvalidInputError, match="0 ≤ E ≤ I"):
            ShorExtension(qubit_identity, np.diag([0.0, 2.0]), 0.5, 2)


class TestComposition:
    """Tensor products and adjoints."""

    def test_tensor_dimensions(self, qubit_identity, depolarizing_03):
        joint = channel_ops.tensor_channels(qubit_identity, depolarizing_03)
        assert (joint.din, joint.dout) == (4, 4)
        assert joint.kraus_rank == depolarizing_03.kraus_rank

    def test_tensor_acts_on_products(self, damping_04, depolarizing_03):
        rho, omega = random_state(2, seed=5), random_state(2, seed=6)
        joint = channel_ops.tensor_channels(damping_04, depolarizing_03)
        expected = np.kron(damping_04.act(rho.matrix), depolarizing_03.act(omega.matrix))
        assert_allclose(joint.act(np.kron(rho.matrix, omega.matrix)), expected, atol=1e-12)

    def test_tensor_with_block_channel_keeps_blocks(self, depolarizing_03):
        joint = channel_ops.tensor_any(channel_ops.erasure(0.3, 2), depolarizing_03)
        assert isinstance(joint, BlockChannel)
        assert joint.layout == (4, 2)

    def test_adjoint_duality(self, damping_04):
        rho = random_state(2, seed=7)
        observable = random_effect(2, seed=8).matrix
        lhs = np.trace(damping_04.act(rho.matrix) @ observable)
        rhs = np.trace(rho.matrix @ channel_ops.adjoint(damping_04, observable))
        assert lhs == pytest.approx(rhs, abs=1e-12)


class TestHolevoQuantity:
    """χ of explicit ensembles."""

    def test_noiseless_orthogonal_ensemble(self, qubit_identity):
        ensemble = Ensemble(np.array([0.5, 0.5]), (DensityMatrix.basis(2, 0), DensityMatrix.basis(2, 1)))
        assert channel_ops.chi_of_ensemble(qubit_identity, ensemble) == pytest.approx(1.0)

    def test_erasure_chi_is_weighted_by_survival(self):
        ensemble = Ensemble(np.array([0.5, 0.5]), (DensityMatrix.basis(2, 0), DensityMatrix.basis(2, 1)))
        assert channel_ops.chi_of_ensemble(channel_ops.erasure(0.5, 2), ensemble) == pytest.approx(0.5)

    def test_relative_entropy_form_agrees(self, depolarizing_03):
        ensemble = random_ensemble(2, 3, seed=9)
        direct = channel_ops.chi_of_ensemble(depolarizing_03, ensemble)
        assert channel_ops.chi_relative_entropy_form(depolarizing_03, ensemble) == pytest.approx(direct, abs=1e-10)

    def test_dimension_mismatch(self, qubit_identity):
        with pytest.raises(InvalidInputError, match="does not match"):
            channel_ops.chi_of_ensemble(qubit_identity, random_ensemble(3, 2, seed=1))

    def test_completely_depolarizing_carries_nothing(self):
        ensemble = random_ensemble(2, 4, seed=10)
        assert channel_ops.chi_of_ensemble(channel_ops.completely_depolarizing(2), ensemble) == pytest.approx(
            0.0, abs=1e-10)

    @pytest.mark.parametrize('seed', [31, 41, 51])
    def test_blockwise_chi_on_random_blocks(self, seed):
        channel = BlockChannel(((0.3, channel_ops.random_channel(2, 2, 2, seed=seed)),
                                (0.7, channel_ops.random_channel(2, 3, 2, seed=seed + 1))))
        ensemble = random_ensemble(2, 4, seed=seed + 2)
        expected = sum(q * channel_ops.chi_of_ensemble(c, ensemble) for q, c in channel.components)
        assert channel_ops.chi_of_ensemble(channel, ensemble) == pytest.approx(expected, abs=1e-10)


class TestDiagnostics:
    """validate_channel and structural predicates."""

    def test_raw_incomplete_kraus_list(self):
        diagnostics = channel_ops.validate_channel([np.diag([1.0, 0.5])])
        assert not diagnostics.trace_preserving
        assert diagnostics.completeness_residual == pytest.approx(0.75)

    def test_block_channel_diagnostics(self):
        diagnostics = channel_ops.validate_channel(channel_ops.erasure(0.2, 2))
        assert diagnostics.trace_preserving
        assert diagnostics.dout == [2, 1]

    def test_unitary_detection(self, qubit_identity, depolarizing_03):
        assert channel_ops.is_unitary_channel(qubit_identity)
        assert not channel_ops.is_unitary_channel(depolarizing_03)
