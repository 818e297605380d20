from pathlib import Path

import pytest

from conftest import ROOT
from warplens.config import WORKDIR_ENV, build_config, load_config, validate_config
from warplens.errors import ConfigError
from warplens.harness import Role
from warplens.opcodes import DataType
from warplens.scoring import ScoreMode


def minimal(**pipeline) -> dict:
    return {
        'pipeline': {'input': 'bench.wasm', **pipeline},
        'runtime': {
            'buggy': {'name': 'fast', 'invoke': 'fast-rt {module}', 'dump': 'fast-rt --dump {module}'},
            'oracle': {'name': 'slow', 'invoke': ['slow-rt', 'run', '{module}']},
        },
    }


@pytest.fixture(autouse=True)
def no_workdir_env(monkeypatch):
    monkeypatch.delenv(WORKDIR_ENV, raising=False)


def test_defaults():
    config = build_config(minimal())
    assert config.input == Path('bench.wasm')
    assert config.weights.alpha == 0.5 and config.weights.beta == 0.5
    assert config.score_mode is ScoreMode.COMBINED
    assert (config.reps, config.warmups, config.top_k, config.mutant_cap) == (5, 1, 5, 2000)
    assert config.workdir == Path('.warp-lens')
    assert config.buggy.role is Role.BUGGY
    assert config.buggy.invoke == ('fast-rt', '{module}')
    assert config.buggy.dump == ('fast-rt', '--dump', '{module}')
    assert config.oracle.invoke == ('slow-rt', 'run', '{module}')
    assert config.oracle.dump is None
    assert config.pool[DataType.I32] == (0, 1, -1, 2147483647)


def test_overrides_win():
    config = build_config(minimal(reps=7), {'reps': 9, 'alpha': 0.7, 'score_mode': 'perf-only', 'top_k': None})
    assert config.reps == 9
    assert config.weights.alpha == 0.7
    assert config.score_mode is ScoreMode.PERF_ONLY
    assert config.top_k == 5


def test_workdir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(WORKDIR_ENV, str(tmp_path))
    config = build_config(minimal(workdir='elsewhere'), {'workdir': 'cli'})
    assert config.workdir == tmp_path


def test_pool_and_band():
    data = minimal()
    data['pool'] = {'i64': [5, 6], 'f32': [2, 0.5]}
    data['reduction'] = {'low': 0.8, 'high': 1.25}
    config = build_config(data)
    assert config.pool[DataType.I64] == (5, 6)
    assert config.pool[DataType.F32] == (2.0, 0.5)
    assert config.pool[DataType.I32] == (0, 1, -1, 2147483647)
    assert (config.reduction_band.low, config.reduction_band.high) == (0.8, 1.25)


@pytest.mark.parametrize('change, message', [
    (lambda d: d['pipeline'].update(reps=2), 'reps must be at least 3'),
    (lambda d: d['pipeline'].update(alpha=0), 'alpha must be in (0, 1]'),
    (lambda d: d['pipeline'].update(beta=1.5), 'beta must be in (0, 1]'),
    (lambda d: d['pipeline'].update(score_mode='fastest'), 'score_mode must be one of'),
    (lambda d: d['pipeline'].update(colour='red'), 'Unknown key in [pipeline]: colour'),
    (lambda d: d['pipeline'].update(reps='five'), 'pipeline.reps must be int'),
    (lambda d: d['runtime'].pop('oracle'), 'Missing required table: [runtime.oracle]'),
    (lambda d: d['runtime']['buggy'].pop('invoke'), 'Missing required key: runtime.buggy.invoke'),
    (lambda d: d['runtime']['buggy'].update(flags='-O'), 'Unknown key in [runtime.buggy]: flags'),
    (lambda d: d.update(pool={'v128': [0]}), 'Unknown pool type: v128'),
    (lambda d: d.update(pool={'i32': [0.5]}), 'pool.i32 must contain integers'),
    (lambda d: d.update(pool={'i32': [1 << 31]}), 'pool.i32 value 2147483648 is outside'),
    (lambda d: d.update(pool={'f32': [1e39]}), 'pool.f32 value 1e+39 is outside the f32 range'),
    (lambda d: d.update(pool={'f64': ['one']}), 'pool.f64 must contain numbers'),
    (lambda d: d.update(reduction={'low': 1.5}), 'must contain 1.0'),
])
def test_validation_errors(change, message):
    data = minimal()
    change(data)
    assert any(message in e for e in validate_config(data))
    with pytest.raises(ConfigError):
        build_config(data)


def test_identical_runtimes_rejected():
    data = minimal()
    data['runtime']['oracle'] = dict(data['runtime']['buggy'])
    assert 'runtime.buggy and runtime.oracle must differ' in validate_config(data)


def test_placeholder_required():
    data = minimal()
    data['runtime']['oracle']['invoke'] = 'slow-rt run bench.wasm'
    with pytest.raises(ConfigError, match='exactly once'):
        build_config(data)


def test_shipped_example_config():
    config = load_config(ROOT / 'warp-lens.toml')
    assert config.buggy.name == 'wasmtime' and config.oracle.name == 'wasmer'
    assert config.buggy.env == {'WASMTIME_BACKTRACE_DETAILS': '0'}
    assert config.buggy.timeout == 60.0
    assert config.instability == 0.10


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'missing.toml')
    bad = tmp_path / 'bad.toml'
    bad.write_text('[pipeline\nreps = 3\n')
    with pytest.raises(ConfigError):
        load_config(bad)


def test_float32_extremes_are_accepted():
    data = minimal()
    data['pool'] = {'f32': [3.4028234663852886e38, float('inf')], 'f64': [1e300]}
    config = build_config(data)
    assert config.pool[DataType.F32][0] == 3.4028234663852886e38
