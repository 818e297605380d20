import json

import pytest

from conftest import corpus, mock_config_data, wat_bytes
from warplens.cli import build_parser, main
from warplens.config import WORKDIR_ENV
from warplens.disasm import DisassembledFunction, Disassembly, MachineInstr, serialize_disassembly
from warplens.harness import TimingSample
from warplens.mutate import read_manifest


@pytest.fixture(autouse=True)
def no_workdir_env(monkeypatch):
    monkeypatch.delenv(WORKDIR_ENV, raising=False)


def toml_value(value) -> str:
    if isinstance(value, dict):
        return '{ ' + ', '.join(f'{k} = {toml_value(v)}' for k, v in value.items()) + ' }'
    return json.dumps(value)


def write_config(path, data):
    lines = ['[pipeline]']
    lines += [f'{k} = {toml_value(v)}' for k, v in data['pipeline'].items()]
    for role, table in data['runtime'].items():
        lines.append(f'[runtime.{role}]')
        lines += [f'{k} = {toml_value(v)}' for k, v in table.items()]
    path.write_text('\n'.join(lines) + '\n')
    return path


def function(index, mnemonics, start=0):
    return DisassembledFunction(index, f'function[{index}]', start, tuple(
        MachineInstr(start + i, b'\x90', m) for i, m in enumerate(mnemonics)))


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_mutate(tmp_path, capsys):
    assert main(['--no-color', 'mutate', str(corpus('arith')), '--out', str(tmp_path / 'm')]) == 0
    assert len(read_manifest(tmp_path / 'm')) == 35
    assert '35 mutants' in capsys.readouterr().out


def test_mutate_with_cap(tmp_path):
    assert main(['mutate', str(corpus('arith')), '--out', str(tmp_path / 'm'), '--mutant-cap', '4']) == 0
    assert len(read_manifest(tmp_path / 'm')) == 4


def test_mutate_nothing(tmp_path):
    assert main(['mutate', str(corpus('empty')), '--out', str(tmp_path / 'm')]) == 2


def test_mutate_malformed_input(tmp_path, capsys):
    bad = tmp_path / 'bad.wasm'
    bad.write_bytes(b'\x00asm\x02\x00\x00\x00')
    assert main(['mutate', str(bad), '--out', str(tmp_path / 'm')]) == 1
    assert capsys.readouterr().err.startswith('Error:')


def test_diff(tmp_path, capsys):
    original = Disassembly((function(0, ['mov', 'div', 'div', 'ret']),))
    mutant = Disassembly((function(0, ['mov', 'add', 'ret']),))
    (tmp_path / 'o.dis').write_text(serialize_disassembly(original))
    (tmp_path / 'm.dis').write_text(serialize_disassembly(mutant))

    assert main(['--no-color', 'diff', str(tmp_path / 'o.dis'), str(tmp_path / 'm.dis')]) == 0
    out = capsys.readouterr().out
    assert '- 0x000001  div' in out
    assert '+ 0x000001  add' in out
    assert 'identified 2 original-side instructions in 1 function(s)' in out


def test_diff_identical(tmp_path, capsys):
    text = serialize_disassembly(Disassembly((function(0, ['ret']),)))
    (tmp_path / 'a.dis').write_text(text)
    assert main(['diff', str(tmp_path / 'a.dis'), str(tmp_path / 'a.dis')]) == 0
    assert 'No machine-code differences' in capsys.readouterr().out


def test_diff_missing_file(tmp_path):
    assert main(['diff', str(tmp_path / 'nope.dis'), str(tmp_path / 'nope.dis')]) == 1


def test_score(tmp_path, capsys):
    def timing(value):
        return TimingSample((value,) * 3, clock='pseudo').to_dict()

    records = [
        {'kind': 'original', 'buggy': timing(600.0), 'oracle': timing(100.0)},
        {'kind': 'mutant', 'ordinal': 0, 'rule': 'OperandSubst', 'buggy': timing(590.0), 'oracle': timing(99.0)},
        {'kind': 'mutant', 'ordinal': 1, 'rule': 'OperatorSubst', 'buggy': timing(100.0), 'oracle': timing(100.0)},
        {'kind': 'disqualified', 'ordinal': 2, 'rule': 'OperatorDelete', 'reason': 'trap on buggy'},
    ]
    (tmp_path / 'measurements.jsonl').write_text(''.join(json.dumps(r) + '\n' for r in records))

    assert main(['--no-color', 'score', '--workdir', str(tmp_path), '--alpha', '0.7', '--beta', '0.3']) == 0
    table = (tmp_path / 'scores.csv').read_text().splitlines()
    assert table[1].startswith('1,1,OperatorSubst,6.000000,1.000000')
    assert table[3].endswith('trap on buggy')


def test_score_without_measurements(tmp_path):
    assert main(['score', '--workdir', str(tmp_path)]) == 1


def test_bad_config(tmp_path, capsys):
    path = tmp_path / 'bad.toml'
    path.write_text('[pipeline]\nreps = 1\n')
    assert main(['run', '--config', str(path)]) == 1
    assert 'pipeline.reps must be at least 3' in capsys.readouterr().err


def test_validate_reduction(tmp_path, cost_models, capsys):
    data = mock_config_data(cost_models, tmp_path / 'work', tmp_path / 'out')
    config = write_config(tmp_path / 'warp-lens.toml', data)
    path = tmp_path / 'dead_div.wasm'
    path.write_bytes(wat_bytes('dead_div'))

    assert main(['validate-reduction', str(path), str(path), '--config', str(config)]) == 0
    assert 'pass' in capsys.readouterr().out


def test_mock_run(capsys):
    assert main(['mock-run', str(corpus('calls'))]) == 0
    assert capsys.readouterr().out.splitlines()[0] == '26'
