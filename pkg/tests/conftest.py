import numpy as np
import pytest

from models.quantum_state import DensityMatrix, HermitianOperator
from models.result import OptimizerConfig
from services import channel_ops


@pytest.fixture
def fast_config():
    """Small restart count and fixed seed so optimizer tests stay quick and reproducible."""
    return OptimizerConfig(restarts=2, max_iterations=300, seed=7, workers=2)


@pytest.fixture
def qubit_identity():
    return channel_ops.noiseless(2)


@pytest.fixture
def depolarizing_03():
    return channel_ops.depolarizing(0.3, 2)


@pytest.fixture
def damping_04():
    return channel_ops.amplitude_damping(0.4)


@pytest.fixture
def excited_projector():
    return HermitianOperator(np.diag([0.0, 1.0]))


@pytest.fixture
def bell_state():
    vector = np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2)
    return DensityMatrix.pure(vector)


@pytest.fixture
def plus_state():
    return DensityMatrix.pure(np.array([1.0, 1.0]) / np.sqrt(2))
