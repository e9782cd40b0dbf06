import numpy as np
import pytest
from numpy.testing import assert_allclose

from models.errors import ChiCapacityError
from services.solvers.ensemble_optimizer import (EnsembleOptimizer, SearchOutcome, compress, isometry, psd_sqrt,
                                                 to_ensemble)


class TestEnsembleHelpers:
    """Parametrization helpers shared by every search."""

    def test_isometry_columns_are_orthonormal(self):
        rng = np.random.default_rng(0)
        frame = isometry(rng.normal(size=(5, 2)) + 1j * rng.normal(size=(5, 2)))
        assert_allclose(frame.conj().T @ frame, np.eye(2), atol=1e-12)

    def test_psd_sqrt_squares_back(self):
        matrix = np.array([[0.6, 0.2j], [-0.2j, 0.4]])
        root = psd_sqrt(matrix)
        assert_allclose(root @ root, matrix, atol=1e-12)

    def test_compress_merges_identical_states(self):
        vector = np.array([1.0, 1.0j]) / np.sqrt(2)
        weights, vectors = compress(np.array([0.3, 0.7]), np.stack([vector, 1j * vector]))
        assert_allclose(weights, [1.0])
        assert vectors.shape == (1, 2)

    def test_compress_drops_negligible_weights(self):
        weights, _ = compress(np.array([1.0 - 1e-10, 1e-10]), np.eye(2, dtype=complex))
        assert len(weights) == 1

    def test_to_ensemble_normalizes(self):
        ensemble = to_ensemble(np.array([0.25, 0.75]), np.eye(2, dtype=complex))
        assert ensemble.weights.sum() == pytest.approx(1.0)
        assert len(ensemble) == 2


class TestMultistart:
    """Restart fan-out and its deterministic reduction."""

    def test_ties_go_to_the_first_restart(self, fast_config):
        optimizer = EnsembleOptimizer(fast_config.with_overrides(restarts=3))

        def run_one(index):
            return SearchOutcome(np.ones(1), np.ones((1, 1)), 1.0, True, 1, index)

        best = optimizer._multistart(run_one)
        assert best.restart == 0
        assert best.iterations == 3

    def test_failed_restarts_are_skipped(self, fast_config):
        optimizer = EnsembleOptimizer(fast_config.with_overrides(restarts=3))

        def run_one(index):
            if index == 0:
                raise RuntimeError("diverged")
            return SearchOutcome(np.ones(1), np.ones((1, 1)), float(index), True, 1, index)

        assert optimizer._multistart(run_one).restart == 2

    def test_all_restarts_failing_raises(self, fast_config):
        optimizer = EnsembleOptimizer(fast_config)

        def run_one(index):
            raise RuntimeError("diverged")

        with pytest.raises(ChiCapacityError, match="All 2 restarts failed"):
            optimizer._multistart(run_one)

    def test_vector_search_finds_top_eigenvector(self, fast_config):
        observable = np.diag([0.1, 0.9, 0.4])
        outcome = EnsembleOptimizer(fast_config).maximize_vector(
            lambda v: float(np.real(np.vdot(v, observable @ v))), 3)
        assert outcome.value == pytest.approx(0.9, abs=1e-6)

    def test_searches_are_reproducible(self, fast_config):
        observable = np.diag([0.1, 0.9, 0.4])

        def objective(v):
            return float(np.real(np.vdot(v, observable @ v)))

        first = EnsembleOptimizer(fast_config).maximize_vector(objective, 3)
        second = EnsembleOptimizer(fast_config).maximize_vector(objective, 3)
        assert first.value == second.value
        assert first.restart == second.restart
