import json
import math
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from models.channel import BlockChannel, KrausChannel, ShorExtension, stack_kraus
from models.constraint import ConstraintSet, FullConstraint, MarginalsConstraint, SingletonConstraint
from models.errors import InvalidInputError
from models.quantum_state import DensityMatrix, Ensemble, HermitianOperator, literal_to_matrix
from services import channel_ops
from services.constraints import normalize_linear

CHANNEL_FAMILIES = {
    'noiseless': lambda p: channel_ops.noiseless(p['d']),
    'depolarizing': lambda p: channel_ops.depolarizing(p['p'], p.get('d', 2)),
    'completely_depolarizing': lambda p: channel_ops.completely_depolarizing(p['d']),
    'dephasing': lambda p: channel_ops.dephasing(p['p'], p.get('d', 2)),
    'amplitude_damping': lambda p: channel_ops.amplitude_damping(p['gamma']),
    'trivial': lambda p: channel_ops.trivial_channel(),
    'flag': lambda p: channel_ops.trace_to_flag(p['d']),
    'constant': lambda p: channel_ops.constant_channel(parse_state(p['omega']), p['din']),
    'entanglement_breaking': lambda p: channel_ops.entanglement_breaking(
        [literal_to_matrix(m) for m in p['povm']], [parse_state(s) for s in p['outputs']]),
    'random': lambda p: channel_ops.random_channel(p['din'], p.get('dout'), p.get('n_kraus', 2), p.get('seed')),
    'random_eb': lambda p: channel_ops.random_eb_channel(p['din'], p.get('dout'), p.get('outcomes', 2),
                                                         p.get('seed')),
    'erasure': lambda p: channel_ops.erasure(p['q'], p.get('d', 2)),
}

SEEDED_FAMILIES = ('random', 'random_eb')


def _require(record: Any, kind: str) -> Dict:
    if not isinstance(record, dict):
        raise InvalidInputError(f"{kind} record must be an object, got {type(record).__name__}")
    return record


def parse_number(value, name: str, kind=float):
    """float or int field; anything non-numeric or non-finite is invalid input."""
    if isinstance(value, bool):
        raise InvalidInputError(f"'{name}' must be a number, got {value!r}")
    try:
        number = kind(value)
    except (TypeError, ValueError, OverflowError) as e:
        raise InvalidInputError(f"'{name}' must be a number, got {value!r}") from e
    if not math.isfinite(number):
        raise InvalidInputError(f"'{name}' must be finite, got {value!r}")
    return number


def parse_int_list(values, name: str) -> List[int]:
    if not isinstance(values, (list, tuple)):
        raise InvalidInputError(f"'{name}' must be a list, got {type(values).__name__}")
    return [parse_number(v, name, int) for v in values]


def parse_basis(record) -> np.ndarray:
    """Orthonormal basis as a matrix literal whose columns are the basis vectors."""
    return literal_to_matrix(record)


def parse_state(record) -> DensityMatrix:
    """Matrix literal, or {"pure": [[re, im], ...]} for a pure state."""
    if isinstance(record, dict) and 'pure' in record:
        try:
            vector = np.array([complex(float(re), float(im)) for re, im in record['pure']])
        except (TypeError, ValueError) as e:
            raise InvalidInputError(f"Malformed pure state: {e}") from e
        return DensityMatrix.pure(vector)
    return DensityMatrix(literal_to_matrix(record))


def parse_channel(record, seed: Optional[int] = None) -> Any:
    """Channel record: family/params, raw Kraus list, weighted blocks or a tensor pair.

    Random families without their own seed draw from ``seed`` and record it, so
    the emitted instance rebuilds the same channel.
    """
    record = _require(record, 'Channel')
    try:
        if 'family' in record:
            family = record['family']
            if family not in CHANNEL_FAMILIES:
                raise InvalidInputError(f"Unknown channel family '{family}'")
            params = _require(record.get('params', {}), 'Channel params')
            if family in SEEDED_FAMILIES and params.get('seed') is None and seed is not None:
                params = dict(params, seed=int(seed))
            return CHANNEL_FAMILIES[family](params)
        if 'kraus' in record:
            return KrausChannel(stack_kraus([literal_to_matrix(k) for k in record['kraus']]))
        if 'blocks' in record:
            return BlockChannel(tuple((parse_number(b['weight'], 'weight'), parse_channel(b['channel'], seed))
                                      for b in record['blocks']))
        if 'tensor' in record:
            left, right = (parse_channel(r, seed) for r in record['tensor'])
            return channel_ops.tensor_any(left, right)
    except InvalidInputError:
        raise
    except KeyError as e:
        raise InvalidInputError(f"Channel record is missing field {e}") from e
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"Malformed channel record: {e}") from e
    raise InvalidInputError(f"Unrecognized channel record with keys {sorted(record)}")


def parse_constraint(record) -> ConstraintSet:
    record = _require(record, 'Constraint')
    kind = record.get('type')
    try:
        if kind == 'full':
            return FullConstraint()
        if kind == 'linear':
            return normalize_linear(literal_to_matrix(record['A']), parse_number(record['alpha'], 'alpha'))
        if kind == 'singleton':
            return SingletonConstraint(parse_state(record['rho']))
        if kind == 'marginals':
            dims = record.get('dims')
            return MarginalsConstraint(parse_constraint(record['left']), parse_constraint(record['right']),
                                       dims=tuple(parse_int_list(dims, 'dims')) if dims else None)
    except InvalidInputError:
        raise
    except KeyError as e:
        raise InvalidInputError(f"Constraint record is missing field {e}") from e
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"Malformed constraint record: {e}") from e
    raise InvalidInputError(f"Unknown constraint type '{kind}'")


def parse_effect(record) -> HermitianOperator:
    effect = HermitianOperator(literal_to_matrix(record))
    if not effect.is_effect():
        raise InvalidInputError("Operator must satisfy 0 ≤ E ≤ I")
    return effect


def parse_extension(record, seed: Optional[int] = None) -> ShorExtension:
    record = _require(record, 'Extension')
    try:
        base = parse_channel(record['base'], seed)
        if not isinstance(base, KrausChannel):
            raise InvalidInputError("Extension base must be a Kraus channel")
        return ShorExtension(base, parse_effect(record['effect']), parse_number(record['q'], 'q'),
                             parse_number(record['d'], 'd', int))
    except KeyError as e:
        raise InvalidInputError(f"Extension record is missing field {e}") from e
    except TypeError as e:
        raise InvalidInputError(f"Malformed extension record: {e}") from e


def parse_ensemble(record) -> Ensemble:
    record = _require(record, 'Ensemble')
    try:
        weights = np.array([parse_number(w, 'weights') for w in record['weights']], dtype=float)
        return Ensemble(weights, tuple(parse_state(s) for s in record['states']))
    except KeyError as e:
        raise InvalidInputError(f"Ensemble record is missing field {e}") from e
    except TypeError as e:
        raise InvalidInputError(f"Malformed ensemble record: {e}") from e


def parse_grid(record, default: Optional[Sequence[float]] = None) -> List[float]:
    """List of numbers, or {"start", "stop", "num"} for an evenly spaced grid."""
    if record is None:
        if default is None:
            raise InvalidInputError("A grid is required")
        return list(default)
    if isinstance(record, dict):
        try:
            start, stop = parse_number(record['start'], 'start'), parse_number(record['stop'], 'stop')
            num = parse_number(record['num'], 'num', int)
        except KeyError as e:
            raise InvalidInputError(f"Grid record is missing field {e}") from e
        if num < 1:
            raise InvalidInputError(f"'num' must be ≥ 1, got {num}")
        return [float(a) for a in np.linspace(start, stop, num)]
    if not isinstance(record, (list, tuple)):
        raise InvalidInputError(f"Grid must be a list or an object, got {type(record).__name__}")
    return [parse_number(a, 'grid') for a in record]


def format_value(value) -> Any:
    """Floats to 9 significant digits; non-finite floats become strings so records stay valid JSON."""
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return str(value)
        return float(f"{value:.9g}")
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, dict):
        return {k: format_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [format_value(v) for v in value]
    return value


def to_record_line(record: Dict) -> str:
    return json.dumps(format_value(record), ensure_ascii=False, sort_keys=False)


def format_table(rows: List[Dict], columns: Sequence[str]) -> str:
    """Plain aligned table of the selected columns."""
    cells = [[str(format_value(row.get(c, ''))) for c in columns] for row in rows]
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(columns)]
    lines = ['  '.join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append('  '.join('-' * w for w in widths))
    lines.extend('  '.join(v.ljust(w) for v, w in zip(r, widths)) for r in cells)
    return '\n'.join(lines)
