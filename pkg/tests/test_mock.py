import subprocess
import sys

import pytest

from conftest import BUGGY_COST, WARP_LENS, corpus, wat_bytes, wat_model
from warplens.disasm import parse_dump
from warplens.errors import ConfigError, StepBudgetExceeded, Trap, UnsupportedModule
from warplens.mock import CostModel, Machine, interpret_with_cost, load_cost_model, mock_dump, run_mock
from warplens.wasm import parse_module


def machine(name, cost=None):
    return Machine(parse_module(wat_bytes(name)), cost or CostModel())


def mock_run(*args):
    return subprocess.run([sys.executable, str(WARP_LENS), 'mock-run', *map(str, args)],
                          capture_output=True, text=True, timeout=120)


@pytest.mark.parametrize('name, results', [
    ('arith', [5]),
    ('locals', [42]),
    ('memory', [43]),
    ('globals', [40]),
    ('floats', [3.25]),
    ('calls', [26]),
    ('branches', [33]),
    ('dead_div', [300]),
    ('empty', []),
])
def test_results(name, results):
    assert machine(name).run() == results


def test_pseudo_time():
    m = machine('dead_div')
    m.run()
    assert m.pseudo_time == 1305

    m = machine('arith')
    m.run()
    assert m.pseudo_time == 3


def test_cost_model_multiplier(tmp_path):
    path = tmp_path / 'cost.toml'
    path.write_text(BUGGY_COST)
    m = machine('dead_div', load_cost_model(path))
    m.run()
    assert m.pseudo_time == 6205


def test_loop_amplification_off():
    m = machine('dead_div', CostModel(loop_amplification=False))
    m.run()
    # every instruction is charged once
    assert m.pseudo_time == len(m.model.functions[0].instructions) == 18


@pytest.mark.parametrize('name', ['trap_div', 'unreachable'])
def test_traps(name):
    with pytest.raises(Trap):
        machine(name).run()


def test_step_budget():
    with pytest.raises(StepBudgetExceeded):
        machine('spin', CostModel(step_budget=1000)).run()


def test_out_of_bounds_load():
    m = Machine(wat_model('(module (memory 1) (func (export "main") (result i32) '
                          '(i32.load (i32.const 65534))))'), CostModel())
    with pytest.raises(Trap):
        m.run()


GROW = ('(module (memory {memory}) (func (export "main") (result i32) '
        '(i32.add (i32.mul (i32.eq (memory.grow (i32.const 65000)) (i32.const -1)) (i32.const 100)) '
        '(i32.add (memory.grow (i32.const 2)) (i32.mul (memory.size) (i32.const 10))))))')


def test_memory_grow_is_capped():
    # the huge request fails with -1, the small one grows 1 -> 3 pages
    m = Machine(wat_model(GROW.format(memory='1')), CostModel())
    assert m.run() == [131]
    assert len(m.memory) == 3 * 65536


@pytest.mark.parametrize('memory, cost', [
    ('1 2', CostModel()),
    ('1', CostModel(max_pages=2)),
])
def test_memory_grow_fails_past_the_limit(memory, cost):
    # both requests return -1 and the memory stays at one page
    m = Machine(wat_model(GROW.format(memory=memory)), cost)
    assert m.run() == [109]
    assert len(m.memory) == 65536


def test_initial_memory_over_the_limit():
    with pytest.raises(UnsupportedModule, match='page limit'):
        Machine(wat_model('(module (memory 300) (func (export "main")))'), CostModel())


@pytest.mark.parametrize('text', [
    '(module (import "env" "f" (func)) (func (export "main")))',
    '(module (table 1 funcref) (func (export "main")))',
])
def test_unsupported_modules(text):
    with pytest.raises(UnsupportedModule):
        Machine(wat_model(text), CostModel())


def test_raw_functions_are_unsupported():
    with pytest.warns(UserWarning):
        model = parse_module(wat_bytes('simd'))
    with pytest.raises(UnsupportedModule):
        Machine(model, CostModel())


def test_interpret_with_cost_digest(tmp_path):
    path = tmp_path / 'arith.wasm'
    path.write_bytes(wat_bytes('arith'))
    outcome, pseudo = interpret_with_cost(path, CostModel())
    assert outcome.ok and pseudo == 3
    assert outcome.timing.clock == 'pseudo'


def test_dump_addresses(tmp_path):
    path = tmp_path / 'calls.wasm'
    path.write_bytes(wat_bytes('calls'))
    square, main = mock_dump(path, CostModel()).functions
    assert [i.address for i in square.instructions] == [0, 1, 2]
    assert main.start == 3
    assert [i.mnemonic for i in main.instructions] == ['i32.const', 'call', 'i32.const', 'i32.add']
    assert main.instructions[1].operands == '0'
    assert main.symbol == 'function[1]'


def test_dump_expansion(tmp_path):
    path = tmp_path / 'dead_div.wasm'
    path.write_bytes(wat_bytes('dead_div'))
    (plain,) = mock_dump(path, CostModel()).functions
    assert 'div_expand' not in [i.mnemonic for i in plain.instructions]

    cost_path = tmp_path / 'cost.toml'
    cost_path.write_text(BUGGY_COST)
    (func,) = mock_dump(path, load_cost_model(cost_path)).functions
    assert [i.mnemonic for i in func.instructions].count('div_expand') == 5
    assert len(func.instructions) == 18 + 4


def test_run_mock_prints_results(capsys):
    assert run_mock(corpus('arith')) == 0
    assert capsys.readouterr().out == '5\nwarp-lens:pseudo-time=3\n'


def test_run_mock_dump_is_normalized(capsys):
    assert run_mock(corpus('arith'), dump=True) == 0
    dis = parse_dump(capsys.readouterr().out)
    assert [i.address for i in dis.functions[0].instructions] == [0, 1, 2]


def test_cli_exit_codes(tmp_path):
    result = mock_run(corpus('floats'))
    assert result.returncode == 0
    assert result.stdout.splitlines()[0] == '3.25'

    result = mock_run(corpus('trap_div'))
    assert result.returncode == 3
    assert result.stderr.startswith('wasm trap:')

    cost = tmp_path / 'tight.toml'
    cost.write_text('step_budget = 500\n')
    result = mock_run('--cost-model', cost, corpus('spin'))
    assert result.returncode == 124


@pytest.mark.parametrize('text', [
    'default_cost = 0\n',
    '[[multiplier]]\npattern = "i32.*"\nexpansion = 0\n',
    'default_cost = \n',
    'max_pages = 0\n',
])
def test_bad_cost_models(tmp_path, text):
    path = tmp_path / 'cost.toml'
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_cost_model(path)


def test_missing_cost_model(tmp_path):
    with pytest.raises(ConfigError):
        load_cost_model(tmp_path / 'absent.toml')
