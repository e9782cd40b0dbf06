import numpy as np
import pytest

from models.constraint import FullConstraint, LinearConstraint
from models.errors import InvalidInputError
from models.quantum_state import DensityMatrix
from models.result import GapReport
from services import channel_ops
from services.additivity_lab import AdditivityLab, additivity_is_proven, posterior_entropy_check
from services.quantum_ops import random_entangled_state, random_state, tensor


@pytest.fixture
def lab(fast_config):
    return AdditivityLab(fast_config)


@pytest.fixture
def flip_channel():
    return channel_ops.entanglement_breaking(
        [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])], [DensityMatrix.basis(2, 1), DensityMatrix.basis(2, 0)])


class TestGapReport:
    """Status and violation logic of gap reports."""

    def test_conjectured_report_has_report_status(self):
        assert GapReport('q', 1.0, 0.5, 1e-3).status == 'report'

    def test_proven_one_sided_violation(self):
        assert GapReport('q', 1.0, 0.5, 1e-3, proven=True).status == 'fail'
        assert GapReport('q', 0.5, 1.0, 1e-3, proven=True).status == 'pass'

    def test_two_sided_check(self):
        assert GapReport('q', 0.5, 1.0, 1e-3, proven=True, two_sided=True).violated

    def test_failed_check_marks_violation(self):
        report = GapReport('q', 0.5, 1.0, 1e-3, proven=True, checks={'identity': False})
        assert report.violated
        assert report.to_dict()['checks'] == {'identity': False}


class TestProvenCases:
    """Recognition of factors for which additivity is known."""

    def test_noiseless_factor(self, qubit_identity, depolarizing_03):
        assert additivity_is_proven(qubit_identity, depolarizing_03)

    def test_entanglement_breaking_factor(self, depolarizing_03, flip_channel):
        assert additivity_is_proven(depolarizing_03, flip_channel)

    def test_generic_pair(self, depolarizing_03, damping_04):
        assert not additivity_is_proven(depolarizing_03, damping_04)


class TestPosteriorEntropy:
    """Average posterior entropy never exceeds the prior entropy."""

    def test_maximally_mixed_loses_one_bit(self):
        assert posterior_entropy_check(DensityMatrix.maximally_mixed(4), np.eye(2), (2, 2)) == pytest.approx(1.0)

    def test_pure_state_stays_pure(self, bell_state):
        assert posterior_entropy_check(bell_state, np.eye(2), (2, 2)) == pytest.approx(0.0, abs=1e-9)

    def test_random_states_are_non_negative(self):
        basis = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
        for seed in range(5):
            assert posterior_entropy_check(random_state(6, seed=seed), basis, (2, 3)) >= -1e-10


class TestChiGaps:
    """χ-function subadditivity and convex-roof superadditivity."""

    def test_equivalence_check_splits_the_chi_gap(self, lab, depolarizing_03, damping_04):
        sigma = random_entangled_state((2, 2), rank=2, bias=0.7, seed=3)
        check = lab.equivalence_check(damping_04, depolarizing_03, sigma)
        chi_gap = check['chi_subadditivity'].gap
        roof_gap = check['hatH_superadditivity'].gap
        assert chi_gap == pytest.approx(roof_gap + check['entropy_slack'], abs=1e-12)
        assert check['entropy_slack'] >= -1e-10

    def test_dimension_mismatch(self, lab, depolarizing_03):
        with pytest.raises(InvalidInputError, match="does not factor"):
            lab.subadditivity_gap(depolarizing_03, depolarizing_03, random_state(3, seed=1))

    @pytest.mark.slow
    def test_noiseless_factor_is_subadditive(self, lab, qubit_identity, depolarizing_03):
        sigma = random_entangled_state((2, 2), rank=2, bias=0.8, seed=4)
        report = lab.subadditivity_gap(qubit_identity, depolarizing_03, sigma)
        assert report.proven
        assert report.status == 'pass'

    @pytest.mark.slow
    def test_product_inputs(self, lab, damping_04, depolarizing_03):
        report = lab.product_additivity_check(damping_04, depolarizing_03, random_state(2, seed=5),
                                              random_state(2, seed=6))
        assert report.status == 'pass'


class TestConstrainedGaps:
    """Constrained additivity, proven suites and the weak-additivity check."""

    @pytest.mark.slow
    def test_entanglement_breaking_constrained_additivity(self, lab, flip_channel, damping_04, excited_projector):
        report = lab.constrained_additivity_gap(flip_channel, LinearConstraint(excited_projector, 0.3),
                                                damping_04, FullConstraint())
        assert report.proven
        assert report.status == 'pass'
        assert report.checks['trivial_direction']

    @pytest.mark.slow
    def test_noiseless_singleton_identity(self, lab, depolarizing_03):
        report = lab.noiseless_singleton_check(depolarizing_03, np.diag([0.7, 0.3]), np.diag([0.6, 0.4]))
        assert report.two_sided
        assert report.status == 'pass'

    @pytest.mark.slow
    def test_direct_sum_chain(self, lab, flip_channel, depolarizing_03):
        sigma = random_entangled_state((2, 2), rank=2, bias=0.6, seed=7)
        report = lab.direct_sum_chain_check(flip_channel, depolarizing_03, 0.4, sigma)
        assert all(report.checks.values())
        assert set(report.details) == {'L1', 'L2', 'L3', 'L4', 'L5'}
        assert report.status == 'pass'

    def test_direct_sum_rejects_bad_weight(self, lab, flip_channel, depolarizing_03, bell_state):
        with pytest.raises(InvalidInputError, match="q must lie"):
            lab.direct_sum_chain_check(flip_channel, depolarizing_03, 1.5, bell_state)

    def test_weak_additivity_infeasible_level(self, lab, depolarizing_03, excited_projector):
        with pytest.raises(InvalidInputError, match="infeasible"):
            lab.weak_additivity_check(depolarizing_03, excited_projector, depolarizing_03, excited_projector, -0.5)

    def test_search_budget_must_be_positive(self, lab, depolarizing_03):
        with pytest.raises(InvalidInputError, match="budget"):
            lab.violation_search(depolarizing_03, depolarizing_03, 0)

    @pytest.mark.slow
    def test_search_is_reproducible(self, lab, depolarizing_03, damping_04):
        first = lab.violation_search(damping_04, depolarizing_03, 4)
        second = lab.violation_search(damping_04, depolarizing_03, 4)
        assert first.gap == second.gap
        assert first.details['budget'] == 4

    def test_product_state_detection_adds_trivial_direction(self, lab, qubit_identity, depolarizing_03):
        sigma = tensor(DensityMatrix.basis(2, 0), DensityMatrix.maximally_mixed(2))
        report = lab.subadditivity_gap(qubit_identity, depolarizing_03, sigma)
        assert 'product_trivial_direction' in report.checks
