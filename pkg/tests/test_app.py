import json

import numpy as np
import pytest

import app
from models.errors import InvalidInputError
from models.quantum_state import DensityMatrix
from models.result import OptimizerConfig, RunConfig

ZERO = [0.0, 0.0]
ONE = [1.0, 0.0]
NOISELESS = {'family': 'noiseless', 'params': {'d': 2}}


@pytest.fixture
def write_config(tmp_path):
    def write(payload, name='config.json'):
        path = tmp_path / name
        path.write_text(payload if isinstance(payload, str) else json.dumps(payload), encoding='utf-8')
        return str(path)
    return write


@pytest.fixture
def clean_env(monkeypatch):
    for name in ('CHICAP_SEED', 'CHICAP_RESTARTS', 'CHICAP_WORKERS', 'CHICAP_TOL_CERTIFICATE',
                 'CHICAP_MAX_ITERATIONS', 'CHICAP_TOL_VALUE', 'CHICAP_ENSEMBLE_SIZE'):
        monkeypatch.delenv(name, raising=False)
    return monkeypatch


class TestLoadRun:
    """Config resolution: flags over the config file over the environment over defaults."""

    def test_precedence(self, clean_env, write_config):
        clean_env.setenv('CHICAP_SEED', '5')
        clean_env.setenv('CHICAP_WORKERS', '3')
        path = write_config({'channel': NOISELESS, 'optimizer': {'seed': 9, 'restarts': 6}})
        args = app.build_parser().parse_args(['capacity', '--config', path, '--seed', '11'])
        run = app.load_run(args)
        assert run.optimizer.seed == 11
        assert run.optimizer.restarts == 6
        assert run.optimizer.workers == 3
        assert run.optimizer.tol_certificate == pytest.approx(1e-3)

    def test_unknown_optimizer_key(self, clean_env, write_config):
        path = write_config({'optimizer': {'temperature': 1.0}})
        args = app.build_parser().parse_args(['capacity', '--config', path])
        with pytest.raises(InvalidInputError, match="Invalid optimizer settings"):
            app.load_run(args)

    def test_config_must_be_an_object(self, clean_env, write_config):
        args = app.build_parser().parse_args(['capacity', '--config', write_config('[1, 2]')])
        with pytest.raises(InvalidInputError, match="JSON object"):
            app.load_run(args)


class TestExitCodes:
    """Invalid input exits 2 before any solve starts."""

    def test_invalid_json(self, clean_env, write_config):
        assert app.main(['capacity', '--config', write_config('{not json')]) == app.EXIT_INVALID_INPUT

    def test_missing_file(self, clean_env, tmp_path):
        assert app.main(['capacity', '--config', str(tmp_path / 'absent.json')]) == app.EXIT_INVALID_INPUT

    def test_missing_required_field(self, clean_env, write_config):
        assert app.main(['capacity', '--config', write_config({})]) == app.EXIT_INVALID_INPUT

    def test_infeasible_weak_additivity_level(self, clean_env, write_config):
        effect = [[ZERO, ZERO], [ZERO, ONE]]
        path = write_config({'phi': NOISELESS, 'psi': NOISELESS, 'A': effect, 'B': effect, 'gamma': -0.5})
        assert app.main(['weak-additivity', '--config', path]) == app.EXIT_INVALID_INPUT

    def test_bad_optimizer_value(self, clean_env, write_config):
        path = write_config({'channel': NOISELESS, 'optimizer': {'restarts': 0}})
        assert app.main(['capacity', '--config', path]) == app.EXIT_INVALID_INPUT

    @pytest.mark.parametrize('channel', [
        {'family': 'noiseless', 'params': {'d': 'x'}},
        {'family': 'depolarizing', 'params': {'p': 'abc'}},
        {'family': 'noiseless', 'params': [2]},
    ])
    def test_malformed_channel_parameters(self, clean_env, write_config, channel):
        assert app.main(['capacity', '--config', write_config({'channel': channel})]) == app.EXIT_INVALID_INPUT

    def test_non_numeric_budget(self, clean_env, write_config):
        path = write_config({'phi': NOISELESS, 'psi': NOISELESS, 'budget': 'many'})
        assert app.main(['search', '--config', path]) == app.EXIT_INVALID_INPUT

    def test_non_numeric_grid_size(self, clean_env, write_config):
        effect = [[ZERO, ZERO], [ZERO, ONE]]
        path = write_config({'phi': NOISELESS, 'psi': NOISELESS, 'A': effect, 'B': effect, 'gamma': 0.5,
                             'grid_n': 'ten'})
        assert app.main(['weak-additivity', '--config', path]) == app.EXIT_INVALID_INPUT

    def test_non_numeric_linear_level(self, clean_env, write_config):
        constraint = {'type': 'linear', 'A': [[ZERO, ZERO], [ZERO, ONE]], 'alpha': 'half'}
        path = write_config({'channel': NOISELESS, 'constraint': constraint})
        assert app.main(['capacity', '--config', path]) == app.EXIT_INVALID_INPUT

    def test_sweep_must_be_an_object(self, clean_env, write_config):
        extension = {'base': NOISELESS, 'effect': [[ZERO, ZERO], [ZERO, ONE]], 'q': 0.3, 'd': 2}
        path = write_config({'extension': extension, 'sweep': [0.5, [2, 4]]})
        assert app.main(['shor-check', '--config', path]) == app.EXIT_INVALID_INPUT

    def test_malformed_posterior_dims(self, clean_env, write_config):
        path = write_config({'phi': NOISELESS, 'psi': NOISELESS,
                             'posterior': {'sigma': [[ONE, ZERO], [ZERO, ZERO]], 'basis': [[ONE, ZERO], [ZERO, ONE]],
                                           'dims': '2x1'}})
        assert app.main(['additivity', '--config', path]) == app.EXIT_INVALID_INPUT


class TestCommands:
    """Small end-to-end runs through main()."""

    def test_certify_orthogonal_ensemble(self, clean_env, write_config, capsys):
        path = write_config({'channel': NOISELESS,
                             'candidate': {'weights': [0.5, 0.5], 'states': [{'pure': [ONE, ZERO]},
                                                                             {'pure': [ZERO, ONE]}]}})
        code = app.main(['certify', '--config', path, '--output', 'records', '--restarts', '2'])
        record = json.loads(capsys.readouterr().out.strip())
        assert code == app.EXIT_OK
        assert record['status'] == 'pass'
        assert record['chi'] == pytest.approx(1.0)
        assert record['seed'] == 0

    def test_capacity_records(self, clean_env, write_config, capsys):
        path = write_config({'channel': NOISELESS, 'constraint': {'type': 'full'}})
        code = app.main(['capacity', '--config', path, '--output', 'records', '--restarts', '2', '--seed', '3'])
        record = json.loads(capsys.readouterr().out.strip())
        assert code == app.EXIT_OK
        assert record['command'] == 'capacity'
        assert record['value'] == pytest.approx(1.0, abs=1e-3)
        assert record['seed'] == 3
        assert record['instance']['channel'] == NOISELESS

    @pytest.mark.slow
    def test_proven_additivity_passes_under_assert(self, clean_env, write_config, capsys):
        path = write_config({'phi': NOISELESS, 'psi': {'family': 'depolarizing', 'params': {'p': 0.3}},
                             'posterior': {'sigma': [[[0.25, 0.0], ZERO, ZERO, ZERO],
                                                     [ZERO, [0.25, 0.0], ZERO, ZERO],
                                                     [ZERO, ZERO, [0.25, 0.0], ZERO],
                                                     [ZERO, ZERO, ZERO, [0.25, 0.0]]],
                                           'basis': [[ONE, ZERO], [ZERO, ONE]], 'dims': [2, 2]}})
        code = app.main(['additivity', '--config', path, '--output', 'records', '--restarts', '2',
                         '--assert-proven'])
        lines = [json.loads(line) for line in capsys.readouterr().out.strip().splitlines()]
        assert code == app.EXIT_OK
        assert {line['quantity'] for line in lines} == {'constrained_additivity', 'posterior_entropy'}
        assert all(line['status'] == 'pass' for line in lines)

    def test_random_channel_runs_are_reproducible(self, clean_env, write_config, capsys):
        path = write_config({'channel': {'family': 'random', 'params': {'din': 2}}})
        argv = ['capacity', '--config', path, '--output', 'records', '--restarts', '2', '--seed', '3']
        outputs = []
        for _ in range(2):
            app.main(argv)
            outputs.append(json.loads(capsys.readouterr().out.strip()))
        assert outputs[0] == outputs[1]
        assert outputs[0]['instance']['channel']['params']['seed'] == 3

    def test_posterior_instance_carries_the_basis(self):
        run = RunConfig('additivity', {}, OptimizerConfig(seed=2))
        basis = np.eye(2)
        report = app._posterior_report(run, DensityMatrix.maximally_mixed(4), basis, (2, 2))
        assert report.instance['basis'] == [[ONE, ZERO], [ZERO, ONE]]
        assert report.instance['dims'] == [2, 2]
        assert report.status == 'pass'

    @pytest.mark.slow
    def test_shor_check_without_partner_omits_it(self, clean_env, write_config, capsys):
        extension = {'base': {'family': 'amplitude_damping', 'params': {'gamma': 0.4}},
                     'effect': [[ZERO, ZERO], [ZERO, ONE]], 'q': 0.3, 'd': 4}
        path = write_config({'extension': extension})
        code = app.main(['shor-check', '--config', path, '--output', 'records', '--restarts', '2'])
        record = json.loads(capsys.readouterr().out.strip())
        assert code == app.EXIT_OK
        assert 'psi' not in record['instance']
        assert record['instance']['extension']['q'] == pytest.approx(0.3)
