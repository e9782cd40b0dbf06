import numpy as np
import pytest
from numpy.testing import assert_allclose

from models.channel import ShorExtension
from models.constraint import FullConstraint, LinearConstraint, MarginalsConstraint
from models.errors import InvalidInputError, UnsupportedOperationError
from models.quantum_state import DensityMatrix, IndexedState
from services import channel_ops
from services.quantum_ops import block_entropy, random_effect, random_ensemble, random_state
from services.solvers import lagrangian_capacity
from services.shor_extension import (apply_extension, apply_extension_tensor, asymptotic_sweep,
                                     chi_extension_ensemble, delta_embed, extension_additivity_gap,
                                     extension_as_block_channel, extension_bound_check, extension_capacity,
                                     extension_capacity_unreduced, extension_certificate, joint_constraint,
                                     lagrangian_joint_max, reduced_block_channel, reduced_map, split_effect_chi)


@pytest.fixture
def extension(damping_04):
    return ShorExtension(damping_04, random_effect(2, seed=21), 0.3, 3)


class TestIndexedInputs:
    """Embedding states into the extension's indexed input space."""

    def test_delta_embed_places_the_state(self):
        sigma = random_state(2, seed=1)
        indexed = delta_embed(sigma, 2, 3)
        assert indexed.d == 3
        assert_allclose(indexed.parts[1], sigma.matrix)
        assert_allclose(indexed.parts[0], np.zeros((2, 2)))

    def test_delta_embed_slot_out_of_range(self):
        with pytest.raises(InvalidInputError, match="out of range"):
            delta_embed(DensityMatrix.basis(2, 0), 4, 3)

    def test_apply_extension_blocks(self, qubit_identity):
        x = ShorExtension(qubit_identity, np.diag([0.0, 1.0]), 0.5, 2)
        output = apply_extension(x, delta_embed(DensityMatrix.basis(2, 1), 2, 2))
        assert_allclose(output.blocks[0], np.diag([0.0, 0.5]), atol=1e-12)
        assert_allclose(output.blocks[1], np.diag([0.0, 0.0, 0.5]), atol=1e-12)

    def test_apply_extension_slot_count(self, extension):
        indexed = IndexedState((np.eye(2) / 2,))
        with pytest.raises(InvalidInputError, match="slots"):
            apply_extension(extension, indexed)


class TestReducedMaps:
    """Ψ_A and the tensor action on joint indexed inputs."""

    def test_identity_weight_is_marginal_then_channel(self, depolarizing_03):
        sigma = random_state(6, seed=2)
        marginal = np.einsum('akal->kl', sigma.matrix.reshape(3, 2, 3, 2))
        assert_allclose(reduced_map(depolarizing_03, np.eye(3), sigma), depolarizing_03.act(marginal), atol=1e-12)

    def test_branches_add_up(self, depolarizing_03):
        sigma = random_state(4, seed=3)
        E = random_effect(2, seed=4).matrix
        total = reduced_map(depolarizing_03, E, sigma) + reduced_map(depolarizing_03, np.eye(2) - E, sigma)
        assert_allclose(total, reduced_map(depolarizing_03, np.eye(2), sigma), atol=1e-12)

    def test_tensor_action_is_a_block_state(self, extension, depolarizing_03):
        sigma = random_state(4, seed=5).matrix
        output = apply_extension_tensor(extension, depolarizing_03, [sigma / 3] * 3)
        assert output.layout == (4, 2, 2, 2, 2)
        assert output.weights.sum() == pytest.approx(1.0)

    def test_tensor_action_rejects_unnormalized_slots(self, extension, depolarizing_03):
        sigma = random_state(4, seed=5).matrix
        with pytest.raises(InvalidInputError, match="sum to 1"):
            apply_extension_tensor(extension, depolarizing_03, [sigma] * 3)


class TestClosedForms:
    """Symmetrized ensembles: closed-form χ against the direct block-entropy evaluation."""

    def test_closed_form_matches_direct(self, extension, depolarizing_03):
        ensemble = random_ensemble(4, 3, seed=6)
        closed, direct = chi_extension_ensemble(extension, depolarizing_03, ensemble)
        assert closed == pytest.approx(direct, abs=1e-9)

    def test_closed_form_without_partner(self, extension):
        ensemble = random_ensemble(2, 4, seed=7)
        closed, direct = chi_extension_ensemble(extension, None, ensemble)
        assert closed == pytest.approx(direct, abs=1e-9)

    def test_reduced_channel_reproduces_the_closed_form(self, extension, depolarizing_03):
        ensemble = random_ensemble(4, 3, seed=8)
        closed, _ = chi_extension_ensemble(extension, depolarizing_03, ensemble)
        average = np.einsum('i,ijk->jk', ensemble.weights, ensemble.matrices)
        index_term = extension.q * np.log2(extension.d) * np.real(
            np.trace(average @ np.kron(extension.effect.matrix, np.eye(2))))
        reduced = channel_ops.chi_of_ensemble(reduced_block_channel(extension, depolarizing_03), ensemble)
        assert reduced + index_term == pytest.approx(closed, abs=1e-9)

    def test_split_effect_chi_vanishes_for_trivial_effect(self, depolarizing_03):
        ensemble = random_ensemble(4, 3, seed=9)
        assert split_effect_chi(depolarizing_03, np.zeros((2, 2)), ensemble) == pytest.approx(
            channel_ops.chi_of_ensemble(channel_ops.tensor_channels(
                channel_ops.constant_channel(DensityMatrix.basis(1, 0), 2), depolarizing_03), ensemble), abs=1e-9)

    def test_unreduced_channel_matches_block_embedding(self, qubit_identity):
        x = ShorExtension(qubit_identity, np.diag([0.0, 1.0]), 0.4, 2)
        sigma = random_state(2, seed=10)
        indexed = delta_embed(sigma, 1, 2)
        direct = block_entropy(apply_extension(x, indexed))
        embedded = np.kron(np.diag([1.0, 0.0]), sigma.matrix)
        assert block_entropy([q * c.act(embedded) for q, c in extension_as_block_channel(x).components]) == \
            pytest.approx(direct, abs=1e-10)


class TestExtensionCapacities:
    """Capacities of the extension and its comparison bounds."""

    def test_joint_constraint_only_touches_the_partner(self, excited_projector):
        assert isinstance(joint_constraint(FullConstraint(), 2, 2), FullConstraint)
        constraint = joint_constraint(LinearConstraint(excited_projector, 0.3), 3, 2)
        assert isinstance(constraint, MarginalsConstraint)
        assert constraint.dims == (3, 2)

    def test_unreduced_search_limited_to_small_d(self, extension):
        with pytest.raises(UnsupportedOperationError, match="d ≤ 2"):
            extension_capacity_unreduced(extension)

    def test_sweep_rejects_q_above_one(self, damping_04, excited_projector, fast_config):
        with pytest.raises(InvalidInputError, match="exceeds 1"):
            asymptotic_sweep(damping_04, excited_projector, 2.0, [2], fast_config)

    def test_sweep_needs_at_least_two_indices(self, damping_04, excited_projector, fast_config):
        with pytest.raises(InvalidInputError, match="d ≥ 2"):
            asymptotic_sweep(damping_04, excited_projector, 0.5, [1], fast_config)

    def test_certificate_needs_simple_partner_constraint(self, extension):
        constraint = MarginalsConstraint(FullConstraint(), FullConstraint(), dims=(2, 1))
        with pytest.raises(UnsupportedOperationError, match="Full or Linear"):
            extension_certificate(extension, None, constraint, random_ensemble(2, 2, seed=11))

    def test_certificate_bounds_any_candidate(self, extension, fast_config):
        certificate = extension_certificate(extension, None, FullConstraint(), random_ensemble(2, 3, seed=12),
                                            fast_config)
        assert certificate.gap >= -1e-4

    def test_additivity_gap_needs_two_indices(self, damping_04, depolarizing_03, excited_projector, fast_config):
        with pytest.raises(InvalidInputError, match="d must be ≥ 2"):
            extension_additivity_gap(damping_04, excited_projector, 0.5, 1, depolarizing_03, cfg=fast_config)

    @pytest.mark.slow
    def test_reduced_and_unreduced_capacities_agree(self, qubit_identity, fast_config):
        x = ShorExtension(qubit_identity, np.diag([0.0, 1.0]), 0.3, 2)
        reduced = extension_capacity(x, fast_config)
        unreduced = extension_capacity_unreduced(x, fast_config)
        assert reduced.value == pytest.approx(unreduced.value, abs=5e-3)

    @pytest.mark.slow
    def test_bound_check_passes(self, damping_04, fast_config):
        record = extension_bound_check(damping_04, None, np.diag([0.0, 1.0]), 0.3, 4, FullConstraint(), fast_config)
        assert record.passed
        assert record.bound == pytest.approx(0.3)

    def test_joint_max_with_trivial_partner_is_the_lagrangian(self, damping_04, excited_projector, fast_config):
        joint = lagrangian_joint_max(damping_04, channel_ops.trivial_channel(), excited_projector.matrix, 0.5,
                                     cfg=fast_config)
        single = lagrangian_capacity(damping_04, excited_projector, 0.5, fast_config)
        assert joint.value == pytest.approx(single.value, abs=1e-4)

    @pytest.mark.slow
    def test_joint_max_of_noiseless_pair(self, qubit_identity, excited_projector, fast_config):
        result = lagrangian_joint_max(qubit_identity, qubit_identity, excited_projector.matrix, 0.0, cfg=fast_config)
        assert result.value == pytest.approx(2.0, abs=1e-3)

    @pytest.mark.slow
    def test_sweep_approaches_the_limit(self, damping_04, excited_projector, fast_config):
        rows = asymptotic_sweep(damping_04, excited_projector, 0.5, [2, 16, 256], fast_config)
        deviations = [row.limit_deviation for row in rows]
        assert deviations[1] <= deviations[0] + 1e-4
        assert deviations[2] <= deviations[1] + 1e-4
        assert deviations[2] < deviations[0]
        assert all(row.deviation <= row.bound + fast_config.tol_certificate for row in rows)
