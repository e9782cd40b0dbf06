import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

from models.constraint import LinearConstraint
from models.errors import ChiCapacityError, InvalidInputError
from models.result import GapReport, OptimizerConfig, RunConfig
from services.constraints import has_slater_point
from services.orchestration import CapacityOrchestrator
from services.quantum_ops import entropy, measurement_posteriors
from services.additivity_lab import posterior_entropy_check
from models.quantum_state import matrix_to_literal
from utils import (format_table, parse_basis, parse_channel, parse_constraint, parse_effect, parse_ensemble,
                   parse_extension, parse_grid, parse_int_list, parse_number, parse_state, to_record_line)

logger = logging.getLogger('chicap')

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID_INPUT = 2
EXIT_NOT_CONVERGED = 3

GAP_COLUMNS = ('quantity', 'lhs', 'rhs', 'gap', 'tolerance', 'status', 'converged')


def _field(records: Dict, name: str):
    if not isinstance(records, dict):
        raise InvalidInputError(f"Config section holding '{name}' must be an object, got {type(records).__name__}")
    if name not in records:
        raise InvalidInputError(f"Config is missing required field '{name}'")
    return records[name]


def _emit(run: RunConfig, records: List[Dict], columns) -> None:
    if run.output == 'records':
        for record in records:
            print(to_record_line(record))
    else:
        print(format_table(records, columns))


def _report_record(report: GapReport, command: str) -> Dict:
    return dict(report.to_dict(), command=command)


def _gap_exit(run: RunConfig, reports: List[GapReport]) -> int:
    """Gap commands only fail under --assert-proven, and only on proven statements."""
    if run.assert_proven:
        failed = [r for r in reports if (r.proven and r.violated) or not all(r.checks.values())]
        for report in failed:
            logger.error(f"✗ proven statement violated: {report.quantity} gap={report.gap:.3e}")
        if failed:
            return EXIT_CHECK_FAILED
    return EXIT_OK


# Commands

def cmd_capacity(run: RunConfig) -> int:
    channel = parse_channel(_field(run.records, 'channel'), run.optimizer.seed)
    constraint = parse_constraint(run.records.get('constraint', {'type': 'full'}))
    orchestrator = CapacityOrchestrator(run.optimizer)

    if isinstance(constraint, LinearConstraint) and has_slater_point(constraint):
        _, result = orchestrator.capacity.kuhn_tucker_multiplier(channel, constraint.A, constraint.alpha)
    else:
        result = orchestrator.run_capacity(channel, constraint)

    record = dict(result.to_dict(), command='capacity', tolerance=run.optimizer.tol_certificate,
                  status='pass' if result.converged else 'not_converged',
                  instance={'channel': channel.to_dict(), 'constraint': constraint.to_dict()},
                  seed=run.optimizer.seed)
    if run.output == 'records':
        print(to_record_line(record))
    else:
        print(format_table([record], ('value', 'certificate', 'certificate_gap', 'multiplier', 'converged')))
        print(format_table([{'weight': w, 'purity': float(np.real(np.trace(s.matrix @ s.matrix)))}
                            for w, s in zip(result.ensemble.weights, result.ensemble.states)],
                           ('weight', 'purity')))
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_certify(run: RunConfig) -> int:
    channel = parse_channel(_field(run.records, 'channel'), run.optimizer.seed)
    constraint = parse_constraint(run.records.get('constraint', {'type': 'full'}))
    candidate = parse_ensemble(_field(run.records, 'candidate'))
    certificate = CapacityOrchestrator(run.optimizer).run_certify(channel, constraint, candidate)

    if not np.isfinite(certificate.gap):
        status, code = 'unavailable', EXIT_NOT_CONVERGED
    elif certificate.certified:
        status, code = 'pass', EXIT_OK
    else:
        status, code = 'fail', EXIT_CHECK_FAILED
    record = dict(certificate.to_dict(), command='certify', tolerance=run.optimizer.tol_certificate, status=status,
                  instance={'channel': channel.to_dict(), 'constraint': constraint.to_dict(),
                            'candidate': candidate.to_dict()},
                  seed=run.optimizer.seed)
    _emit(run, [record], ('certificate', 'chi', 'gap', 'tolerance', 'status'))
    return code


def cmd_shor_check(run: RunConfig) -> int:
    x = parse_extension(_field(run.records, 'extension'), run.optimizer.seed)
    psi = parse_channel(run.records['psi'], run.optimizer.seed) if 'psi' in run.records else None
    B = parse_constraint(run.records.get('B', {'type': 'full'}))
    ds = run.records.get('ds')
    sweep = run.records.get('sweep')
    if sweep is not None:
        lam = parse_number(_field(sweep, 'lambda'), 'lambda')
        sweep_effect = parse_effect(sweep['effect']) if 'effect' in sweep else x.effect
        sweep_ds = parse_int_list(_field(sweep, 'ds'), 'ds')
    orchestrator = CapacityOrchestrator(run.optimizer)

    rows = orchestrator.run_shor_check(x, psi, B, ds)
    instance = {'extension': x.to_dict(), 'B': B.to_dict()}
    if psi is not None:
        instance['psi'] = psi.to_dict()
    records = [dict(r.to_dict(), command='shor-check', tolerance=r.slack, instance=instance, seed=run.optimizer.seed)
               for r in rows]
    passed = all(r.passed for r in rows)

    if sweep is not None:
        for row in orchestrator.run_asymptotic_sweep(x.base, sweep_effect, lam, sweep_ds):
            ok = row.deviation <= row.bound + run.optimizer.tol_certificate
            passed = passed and ok
            records.append(dict(row.to_dict(), command='shor-sweep', tolerance=run.optimizer.tol_certificate,
                                status='pass' if ok else 'fail', instance=dict(instance, **{'lambda': lam}),
                                seed=run.optimizer.seed))

    _emit(run, records, ('d', 'q', 'lhs', 'rhs', 'capacity', 'target', 'deviation', 'bound', 'status'))
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def cmd_additivity(run: RunConfig) -> int:
    records = run.records
    phi = parse_channel(_field(records, 'phi'), run.optimizer.seed)
    psi = parse_channel(_field(records, 'psi'), run.optimizer.seed)
    A = parse_constraint(records.get('A', {'type': 'full'}))
    B = parse_constraint(records.get('B', {'type': 'full'}))
    sigma = parse_state(records['sigma']) if 'sigma' in records else None
    product = (parse_state(records['rho']), parse_state(records['omega'])) if 'rho' in records else None
    chain = records.get('chain')
    chain_inputs = (parse_channel(_field(chain, 'phi0'), run.optimizer.seed),
                    parse_number(_field(chain, 'q'), 'q'),
                    parse_state(_field(chain, 'sigma'))) if chain else None
    noiseless = records.get('noiseless')
    noiseless_inputs = (parse_state(_field(noiseless, 'rho')), parse_state(_field(noiseless, 'omega'))) \
        if noiseless else None
    posterior = records.get('posterior')
    posterior_inputs = (parse_state(_field(posterior, 'sigma')),
                        parse_basis(_field(posterior, 'basis')),
                        tuple(parse_int_list(_field(posterior, 'dims'), 'dims'))) if posterior else None

    orchestrator = CapacityOrchestrator(run.optimizer)
    lab = orchestrator.lab
    tasks = {'constrained_additivity': lambda: lab.constrained_additivity_gap(phi, A, psi, B)}
    if sigma is not None:
        tasks['equivalence_check'] = lambda: _equivalence_reports(lab, phi, psi, sigma)
    if product is not None:
        tasks['chi_product'] = lambda: lab.product_additivity_check(phi, psi, *product)
    if chain_inputs is not None:
        tasks['direct_sum_chain'] = lambda: lab.direct_sum_chain_check(chain_inputs[0], psi, chain_inputs[1],
                                                                       chain_inputs[2])
    if noiseless_inputs is not None:
        tasks['noiseless_singleton'] = lambda: lab.noiseless_singleton_check(psi, *noiseless_inputs)
    if posterior_inputs is not None:
        tasks['posterior_entropy'] = lambda: _posterior_report(run, *posterior_inputs)

    reports = orchestrator.run_reports(tasks)
    _emit(run, [_report_record(r, 'additivity') for r in reports], GAP_COLUMNS)
    return _gap_exit(run, reports)


def _equivalence_reports(lab, phi, psi, sigma) -> List[GapReport]:
    check = lab.equivalence_check(phi, psi, sigma)
    extra = {'entropy_slack': check['entropy_slack'], 'consistent': check['consistent']}
    return [replace(check['chi_subadditivity'], details=dict(check['chi_subadditivity'].details, **extra)),
            check['hatH_superadditivity']]


def _posterior_report(run: RunConfig, sigma, basis, dims) -> GapReport:
    residual = posterior_entropy_check(sigma, basis, dims)
    prior = entropy(sigma)
    return GapReport('posterior_entropy', prior - residual, prior, 1e-9,
                     instance={'sigma': sigma.to_dict(), 'basis': matrix_to_literal(basis), 'dims': list(dims),
                               'outcomes': len(measurement_posteriors(sigma, basis, dims))},
                     seed=run.optimizer.seed, proven=True)


def cmd_weak_additivity(run: RunConfig) -> int:
    records = run.records
    phi = parse_channel(_field(records, 'phi'), run.optimizer.seed)
    psi = parse_channel(_field(records, 'psi'), run.optimizer.seed)
    A = parse_effect(_field(records, 'A'))
    B = parse_effect(_field(records, 'B'))
    gamma = parse_number(_field(records, 'gamma'), 'gamma')
    grid_n = parse_number(records.get('grid_n', 11), 'grid_n', int)
    report = CapacityOrchestrator(run.optimizer).lab.weak_additivity_check(phi, A, psi, B, gamma, grid_n)
    _emit(run, [_report_record(report, 'weak-additivity')], GAP_COLUMNS)
    return _gap_exit(run, [report])


def cmd_profile_alpha(run: RunConfig) -> int:
    channel = parse_channel(_field(run.records, 'channel'), run.optimizer.seed)
    A = parse_effect(_field(run.records, 'A'))
    grid = parse_grid(run.records.get('grid'), default=np.linspace(0.0, 1.0, 21))
    profile = CapacityOrchestrator(run.optimizer).run_profile(channel, A, grid)

    status = 'pass' if profile.passed else 'fail'
    records = [{'alpha': p.alpha, 'value': p.value, 'converged': p.converged} for p in profile.points]
    summary = {'command': 'profile-alpha', 'nondecreasing': profile.nondecreasing, 'concave': profile.concave,
               'max_drop': profile.max_drop, 'max_second_difference': profile.max_second_difference,
               'tolerance': 1e-5, 'status': status,
               'instance': {'channel': channel.to_dict(), 'A': A.to_dict(), 'grid': list(grid)},
               'seed': run.optimizer.seed}
    if run.output == 'records':
        for record in records:
            print(to_record_line(dict(record, command='profile-alpha', seed=run.optimizer.seed)))
        print(to_record_line(summary))
    else:
        print(format_table(records, ('alpha', 'value', 'converged')))
        print(format_table([summary], ('nondecreasing', 'concave', 'max_drop', 'max_second_difference', 'status')))
    if not profile.passed:
        return EXIT_CHECK_FAILED
    return EXIT_OK if all(p.converged for p in profile.points) else EXIT_NOT_CONVERGED


def cmd_search(run: RunConfig) -> int:
    phi = parse_channel(_field(run.records, 'phi'), run.optimizer.seed)
    psi = parse_channel(_field(run.records, 'psi'), run.optimizer.seed)
    budget = parse_number(run.records.get('budget', 20), 'budget', int)
    report = CapacityOrchestrator(run.optimizer).run_search(phi, psi, budget)
    _emit(run, [_report_record(report, 'search')], GAP_COLUMNS)
    return _gap_exit(run, [report])


COMMANDS = {
    'capacity': cmd_capacity,
    'certify': cmd_certify,
    'shor-check': cmd_shor_check,
    'additivity': cmd_additivity,
    'weak-additivity': cmd_weak_additivity,
    'profile-alpha': cmd_profile_alpha,
    'search': cmd_search,
}


# Entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='chicap', description='Constrained χ-capacity and additivity lab')
    parser.add_argument('command', choices=sorted(COMMANDS), help='what to run')
    parser.add_argument('--config', default='-', help="JSON config file, or '-' for stdin (default)")
    parser.add_argument('--seed', type=int, help='base seed for every restart (env CHICAP_SEED, default 0)')
    parser.add_argument('--restarts', type=int, help='multi-start restarts (env CHICAP_RESTARTS, default 4)')
    parser.add_argument('--tol', type=float, help='certificate tolerance in bits (env CHICAP_TOL_CERTIFICATE, '
                                                  'default 1e-3)')
    parser.add_argument('--workers', type=int, help='thread pool size (env CHICAP_WORKERS, default 4)')
    parser.add_argument('--output', choices=('table', 'records'), default='table', help='output format')
    parser.add_argument('--assert-proven', action='store_true',
                        help='exit 1 when a proven statement is violated')
    parser.add_argument('--log-level', default=None, help='logging level (env CHICAP_LOG_LEVEL, default INFO)')
    return parser


def load_run(args: argparse.Namespace) -> RunConfig:
    """Read the config and resolve optimizer settings: flags > config file > environment > defaults."""
    try:
        if args.config == '-':
            records = json.load(sys.stdin)
        else:
            with open(args.config, 'r', encoding='utf-8') as handle:
                records = json.load(handle)
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"Config is not valid JSON: {e}") from e
    except OSError as e:
        raise InvalidInputError(f"Cannot read config: {e}") from e
    if not isinstance(records, dict):
        raise InvalidInputError("Config must be a JSON object")

    file_overrides = records.get('optimizer', {})
    if not isinstance(file_overrides, dict):
        raise InvalidInputError("'optimizer' must be an object")
    try:
        optimizer = OptimizerConfig.from_env().with_overrides(**file_overrides).with_overrides(
            seed=args.seed, restarts=args.restarts, tol_certificate=args.tol, workers=args.workers)
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"Invalid optimizer settings: {e}") from e
    return RunConfig(args.command, records, optimizer, args.output, args.assert_proven)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(args.log_level or os.environ.get('CHICAP_LOG_LEVEL', 'INFO')).upper(),
                        stream=sys.stderr, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        run = load_run(args)
        logger.info(f"Running '{run.command}' with {run.optimizer.to_dict()}")
        return COMMANDS[run.command](run)
    except InvalidInputError as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_INVALID_INPUT
    except ChiCapacityError as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        return EXIT_NOT_CONVERGED


if __name__ == '__main__':
    sys.exit(main())
