import math

import pytest

from models.result import GapReport
from services.orchestration import CapacityOrchestrator


@pytest.fixture
def orchestrator(fast_config):
    return CapacityOrchestrator(fast_config)


class TestFanOut:
    """Thread-pool mapping keeps order and isolates failures."""

    def test_results_keep_input_order(self, orchestrator):
        assert orchestrator._map(lambda x: x * x, [3, 1, 2]) == [9, 1, 4]

    def test_failed_task_becomes_none(self, orchestrator):
        assert orchestrator._map(lambda x: 1 / x, [1, 0, 2]) == [1.0, None, 0.5]

    def test_empty_input(self, orchestrator):
        assert orchestrator._map(lambda x: x, []) == []


class TestReports:
    """Named gap reports, flattened in task order."""

    def test_lists_are_flattened(self, orchestrator):
        first = GapReport('first', 0.0, 1.0, 1e-3)
        pair = [GapReport('second', 0.0, 1.0, 1e-3), GapReport('third', 0.0, 1.0, 1e-3)]
        reports = orchestrator.run_reports({'a': lambda: first, 'b': lambda: pair})
        assert [r.quantity for r in reports] == ['first', 'second', 'third']

    def test_failed_report_is_a_nan_row(self, orchestrator):
        def broken():
            raise RuntimeError("boom")

        reports = orchestrator.run_reports({'ok': lambda: GapReport('ok', 0.0, 0.5, 1e-3), 'broken': broken})
        failed = reports[1]
        assert failed.quantity == 'broken'
        assert math.isnan(failed.gap)
        assert not failed.converged
        assert failed.details == {'error': 'evaluation failed'}
        assert failed.status == 'report'
        assert failed.tolerance == pytest.approx(orchestrator.lab.tolerance)


class TestCommands:
    """End-to-end orchestration of small instances."""

    def test_capacity_of_noiseless_qubit(self, orchestrator, qubit_identity):
        result = orchestrator.run_capacity(qubit_identity)
        assert result.value == pytest.approx(1.0, abs=1e-3)

    def test_search_fans_out_over_partitions(self, orchestrator, qubit_identity, depolarizing_03):
        report = orchestrator.run_search(qubit_identity, depolarizing_03, 2)
        assert report.details['partitions'] == 2
        assert report.proven
