from models.channel import BlockChannel, KrausChannel, ShorExtension
from models.constraint import (ConstraintSet, FullConstraint, LinearConstraint, MarginalsConstraint,
                               SingletonConstraint)
from models.errors import (ChiCapacityError, ConsistencyError, InvalidInputError, SupportVerificationError,
                           UnsupportedOperationError)
from models.quantum_state import BlockState, DensityMatrix, Ensemble, HermitianOperator, IndexedState
from models.result import AsymptoticRow, CapacityResult, ExtensionBoundRecord, GapReport, OptimizerConfig
