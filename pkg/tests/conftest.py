import sys
from pathlib import Path

import pytest
import wasmtime

from warplens.harness import Role, RuntimeSpec
from warplens.wasm import load_module_bytes, parse_module

ROOT = Path(__file__).resolve().parent.parent
CORPUS = Path(__file__).resolve().parent / 'corpus'
WARP_LENS = ROOT / 'tools' / 'warp_lens.py'

STEP_BUDGET = 20000

BUGGY_COST = f"""\
default_cost = 1
step_budget = {STEP_BUDGET}

[[multiplier]]
pattern = "i64.div_*"
factor = 50
expansion = 5
"""

ORACLE_COST = f"""\
default_cost = 1
step_budget = {STEP_BUDGET}
"""


def corpus(name: str) -> Path:
    return CORPUS / f'{name}.wat'


def wat_bytes(name: str) -> bytes:
    return load_module_bytes(corpus(name))


def wat_model(text: str):
    """InstructionModel for inline module text."""
    return parse_module(bytes(wasmtime.wat2wasm(text)))


def mock_command(cost_model: Path, dump: bool = False) -> tuple[str, ...]:
    argv = [sys.executable, str(WARP_LENS), 'mock-run', '--cost-model', str(cost_model)]
    if dump:
        argv.append('--dump')
    return tuple(argv + ['{module}'])


@pytest.fixture
def cost_models(tmp_path) -> dict[str, Path]:
    buggy = tmp_path / 'buggy-cost.toml'
    oracle = tmp_path / 'oracle-cost.toml'
    buggy.write_text(BUGGY_COST)
    oracle.write_text(ORACLE_COST)
    return {'buggy': buggy, 'oracle': oracle}


@pytest.fixture
def buggy_spec(cost_models) -> RuntimeSpec:
    return RuntimeSpec('mock-buggy', Role.BUGGY, mock_command(cost_models['buggy']),
                       dump=mock_command(cost_models['buggy'], dump=True), timeout=60)


@pytest.fixture
def oracle_spec(cost_models) -> RuntimeSpec:
    return RuntimeSpec('mock-oracle', Role.ORACLE, mock_command(cost_models['oracle']), timeout=60)


def mock_config_data(cost_models: dict[str, Path], workdir: Path, out: Path, **pipeline) -> dict:
    """Configuration document running both roles on the mock runtime."""
    return {
        'pipeline': {'workdir': str(workdir), 'out': str(out), 'reps': 3, 'warmups': 0, 'jobs': 8,
                     **pipeline},
        'runtime': {
            'buggy': {'name': 'mock-buggy', 'invoke': list(mock_command(cost_models['buggy'])),
                      'dump': list(mock_command(cost_models['buggy'], dump=True)), 'timeout': 60},
            'oracle': {'name': 'mock-oracle', 'invoke': list(mock_command(cost_models['oracle'])),
                       'timeout': 60},
        },
    }
