import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from models.channel import KrausChannel, ShorExtension
from models.constraint import ConstraintSet, FullConstraint
from models.quantum_state import Ensemble
from models.result import (AlphaProfile, AsymptoticRow, CapacityResult, Certificate, ExtensionBoundRecord, GapReport,
                           OptimizerConfig)
from services.additivity_lab import AdditivityLab
from services.channel_ops import Channel
from services.constraints import describe
from services.shor_extension import asymptotic_sweep, extension_bound_check
from services.solvers.capacity_solver import CapacitySolver
from services.solvers.certificate_solver import CertificateSolver
from services.solvers.supporting_constraint_solver import SupportingConstraintSolver

logger = logging.getLogger(__name__)


class CapacityOrchestrator:
    """
    Coordinator for every command the lab runs.

    Specialists:
    1. CapacitySolver - constrained and Lagrangian χ-capacities, Kuhn–Tucker multipliers
    2. CertificateSolver - maximal-distance optimality certificates
    3. SupportingConstraintSolver - supporting constraints and α-profiles
    4. AdditivityLab - gap evaluators and proven-case suites

    Independent pieces of work (points of a d-sweep or α-grid, search partitions,
    separate gap reports) fan out over a thread pool. A failed task is logged and
    replaced by a 'failed' row so one bad point never aborts the whole run.
    """

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.capacity = CapacitySolver(config)
        self.certifier = CertificateSolver(config)
        self.supporting = SupportingConstraintSolver(config)
        self.lab = AdditivityLab(config)
        logger.info(f"CapacityOrchestrator ready (restarts={config.restarts}, workers={config.workers}, "
                    f"seed={config.seed})")

    def _map(self, fn: Callable, items: Iterable, label: str = 'task') -> List:
        """Ordered results of fn over items; None where a task raised."""
        items = list(items)
        results: Dict[int, object] = {}
        with ThreadPoolExecutor(max_workers=max(1, min(self.config.workers, len(items) or 1))) as executor:
            future_to_index = {executor.submit(fn, item): index for index, item in enumerate(items)}
            for future in as_completed(future_to_index):
                index = future_to_index[future]
                try:
                    results[index] = future.result()
                    logger.info(f"  ✓ {label} {items[index]} completed")
                except Exception as e:
                    logger.error(f"  ✗ {label} {items[index]} failed: {e}")
                    results[index] = None
        return [results[index] for index in range(len(items))]

    def run_capacity(self, channel: Channel, constraint: ConstraintSet = FullConstraint()) -> CapacityResult:
        logger.info(f"🚀 χ-capacity under {describe(constraint)}")
        result = self.capacity.chi_capacity(channel, constraint)
        logger.info(f"{'✓' if result.converged else '✗'} value={result.value:.9g} gap={result.certificate_gap:.3e}")
        return result

    def run_certify(self, channel: Channel, constraint: ConstraintSet, candidate: Ensemble,
                    linear: Optional[np.ndarray] = None) -> Certificate:
        certificate = self.certifier.certify(channel, constraint, candidate, linear)
        logger.info(f"{'✓' if certificate.certified else '✗'} certificate={certificate.value:.9g} "
                    f"gap={certificate.gap:.3e}")
        return certificate

    def run_shor_check(self, x: ShorExtension, psi: Optional[KrausChannel], B: ConstraintSet,
                       ds: Optional[Sequence[int]] = None) -> List[ExtensionBoundRecord]:
        """Extension bound rows for x.d or for every d in a sweep (q held fixed)."""
        ds = [x.d] if not ds else [int(d) for d in ds]
        logger.info(f"🔄 Extension bound check over d ∈ {ds}")

        def check(d: int) -> ExtensionBoundRecord:
            return extension_bound_check(x.base, psi, x.effect, x.q, d, B, self.config)

        rows = []
        dout = psi.dout if psi is not None else 1
        for d, row in zip(ds, self._map(check, ds, label='d =')):
            if row is None:
                row = ExtensionBoundRecord(d, x.q, float('nan'), float('nan'), x.q * (np.log2(dout) + 1.0),
                                           self.config.tol_certificate, converged=False)
            rows.append(row)
        return rows

    def run_asymptotic_sweep(self, phi: KrausChannel, effect, lam: float, ds: Sequence[int]) -> List[AsymptoticRow]:
        logger.info(f"🔄 Asymptotic sweep at λ={lam:.6g} over d ∈ {list(ds)}")
        return asymptotic_sweep(phi, effect, lam, ds, self.config,
                                mapper=lambda fn, items: self._map(fn, items, label='d ='))

    def run_profile(self, channel: Channel, A, grid: Sequence[float]) -> AlphaProfile:
        logger.info(f"🔄 α-profile over {len(grid)} levels")
        profile = self.supporting.alpha_profile(channel, A, grid,
                                                mapper=lambda fn, items: self._map(fn, items, label='α ='))
        logger.info(f"{'✓' if profile.passed else '✗'} nondecreasing={profile.nondecreasing} "
                    f"concave={profile.concave}")
        return profile

    def run_search(self, phi: Channel, psi: KrausChannel, budget: int) -> GapReport:
        logger.info(f"🔄 Violation search with budget {budget}")
        return self.lab.violation_search(phi, psi, budget,
                                         mapper=lambda fn, items: self._map(fn, items, label='partition'))

    def run_reports(self, tasks: Dict[str, Callable[[], object]]) -> List[GapReport]:
        """Evaluate named gap reports in parallel; failures become NaN 'report' rows.

        A task may return a single GapReport or a list of them.
        """
        names = list(tasks)
        reports: List[GapReport] = []
        for name, outcome in zip(names, self._map(lambda n: tasks[n](), names, label='report')):
            if outcome is None:
                outcome = GapReport(name, float('nan'), float('nan'), self.lab.tolerance, seed=self.config.seed,
                                    converged=False, details={'error': 'evaluation failed'})
            reports.extend(outcome if isinstance(outcome, list) else [outcome])
        return reports
