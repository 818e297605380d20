"""
End to end on the mock runtime: the buggy runtime charges 50x for i64
division and expands it into five pseudo instructions, the oracle is
uniform. dead_div.wat carries a dead division inside a 100-iteration loop.
"""
import json
import math

import pytest

from conftest import BUGGY_COST, ORACLE_COST, corpus, mock_config_data
from warplens.config import WORKDIR_ENV, build_config
from warplens.errors import MeasurementFailure
from warplens.machdiff import EditKind
from warplens.pipeline import EXIT_NO_CANDIDATE, EXIT_OK, MEASUREMENTS, rescore, run_pipeline
from warplens.scoring import ScoreMode, ScoreWeights


@pytest.fixture(scope='module')
def cost_files(tmp_path_factory):
    root = tmp_path_factory.mktemp('cost')
    (root / 'buggy.toml').write_text(BUGGY_COST)
    (root / 'oracle.toml').write_text(ORACLE_COST)
    return {'buggy': root / 'buggy.toml', 'oracle': root / 'oracle.toml'}


def make_config(cost_files, workdir, out, **pipeline):
    data = mock_config_data(cost_files, workdir, out, **pipeline)
    data['pool'] = {'i32': [1], 'i64': [1]}
    return build_config(data)


@pytest.fixture(scope='module')
def dead_div(cost_files, tmp_path_factory):
    root = tmp_path_factory.mktemp('dead_div')
    with pytest.MonkeyPatch.context() as mp:
        mp.delenv(WORKDIR_ENV, raising=False)
        config = make_config(cost_files, root / 'work', root / 'report', input=str(corpus('dead_div')))
        result = run_pipeline(config)
    return config, result


def manifest_of(result, ordinal):
    return next(r for r in result.bundle.manifest if r['ordinal'] == ordinal)


def test_finds_a_candidate(dead_div):
    _, result = dead_div
    assert result.exit_status == EXIT_OK
    assert len(result.mutants) > 50
    assert result.ranked and result.rejected


def test_top_mutant_removes_the_division(dead_div):
    _, result = dead_div
    top = result.ranked[0]
    record = manifest_of(result, top.ordinal)
    assert record['rule'] == 'OperatorSubst'
    assert (record['original'], record['mutated']) == ('i64.div_u', 'i64.add')
    assert top.func_sim_ratio == 1.0
    assert top.perf_diff_ratio == pytest.approx(6205 / 1305)
    assert top.total == pytest.approx(0.5 * (1 - math.exp(1 - 6205 / 1305)) + 0.5)


def test_deletion_ranks_below_substitution(dead_div):
    _, result = dead_div
    deletion = next(s for s in result.ranked
                    if manifest_of(result, s.ordinal)['rule'] == 'OperatorDelete'
                    and 'i64.div_u' in manifest_of(result, s.ordinal)['original'])
    assert deletion.func_sim_ratio == pytest.approx(1305 / 1105)
    assert deletion.total == pytest.approx(0.912, abs=1e-3)
    assert deletion.total < result.ranked[0].total


def test_disqualified_mutants_have_reasons(dead_div):
    _, result = dead_div
    reasons = {d.reason for d in result.rejected}
    assert 'oracle output differs from original' in reasons
    assert 'timeout on buggy' in reasons
    ranked = {s.ordinal for s in result.ranked}
    assert not ranked & {d.ordinal for d in result.rejected}


def test_timed_runs_are_bounded(dead_div):
    config, result = dead_div
    assert result.timed_runs == result.expected_timed_runs
    assert result.expected_timed_runs == (1 + len(result.ranked)) * 2 * config.reps


def test_machine_code_diff_of_top_candidate(dead_div):
    _, result = dead_div
    top = result.bundle.candidates[0]
    (diff,) = [d for d in top.diffs if d.changed]
    assert diff.identified == 5
    assert diff.script.inserts == 1
    removed = {op.mnemonic for op in diff.script.operations if op.kind is EditKind.DELETE}
    assert removed == {'div_expand'}


def test_report_files(dead_div):
    config, result = dead_div
    out = config.out
    for name in ('report.txt', 'report.html', 'scores.csv', 'metadata.json', 'summary.jsonl',
                 'dumps/original.dis', 'mutants/manifest.jsonl'):
        assert (out / name).is_file(), name
    summary = [json.loads(line) for line in (out / 'summary.jsonl').read_text().splitlines()]
    assert [s['rank'] for s in summary] == list(range(1, len(summary) + 1))
    assert summary[0]['machine_identified'] == 5
    assert summary[0]['wasm_touched'] == 1
    metadata = json.loads((out / 'metadata.json').read_text())
    assert metadata['buggy']['name'] == 'mock-buggy'
    assert set(metadata['timestamps']) == {'started', 'finished'}
    assert 'i64.div_u  =>  i64.add' in (out / 'report.txt').read_text()
    assert (config.workdir / 'original.wasm').is_file()


def test_rescore_perf_only(dead_div):
    config, result = dead_div
    combined, rejected = rescore(config.workdir / MEASUREMENTS)
    assert [s.ordinal for s in combined] == [s.ordinal for s in result.ranked]
    assert len(rejected) == len(result.rejected)

    perf_only, _ = rescore(config.workdir / MEASUREMENTS, ScoreWeights(), ScoreMode.PERF_ONLY)
    perf = [s.perf_diff_score for s in perf_only]
    assert perf == sorted(perf, reverse=True)


def test_rerun_uses_cached_timings(dead_div, cost_files, tmp_path, monkeypatch):
    config, first = dead_div
    monkeypatch.delenv(WORKDIR_ENV, raising=False)
    again = run_pipeline(make_config(cost_files, config.workdir, tmp_path / 'again',
                                     input=str(corpus('dead_div'))))
    assert again.timed_runs == 0
    for name in ('scores.csv', 'report.txt'):
        assert (tmp_path / 'again' / name).read_text() == (config.out / name).read_text()


def test_independent_runs_are_identical(dead_div, cost_files, tmp_path, monkeypatch):
    config, first = dead_div
    monkeypatch.delenv(WORKDIR_ENV, raising=False)
    fresh = make_config(cost_files, tmp_path / 'work', tmp_path / 'fresh', input=str(corpus('dead_div')))
    second = run_pipeline(fresh)

    assert fresh.workdir != config.workdir
    assert second.timed_runs == first.timed_runs == first.expected_timed_runs
    for name in ('scores.csv', 'report.txt', 'summary.jsonl'):
        assert (tmp_path / 'fresh' / name).read_bytes() == (config.out / name).read_bytes(), name


def test_nothing_to_mutate(cost_files, tmp_path, monkeypatch):
    monkeypatch.delenv(WORKDIR_ENV, raising=False)
    config = make_config(cost_files, tmp_path / 'work', tmp_path / 'out', input=str(corpus('empty')))
    result = run_pipeline(config)
    assert result.exit_status == EXIT_NO_CANDIDATE
    assert result.mutants == []
    summary = json.loads((tmp_path / 'out' / 'summary.jsonl').read_text())
    assert summary['status'] == 'no-candidate'


def test_rejected_reduction_stops_the_run(cost_files, tmp_path, monkeypatch):
    monkeypatch.delenv(WORKDIR_ENV, raising=False)
    reduced = tmp_path / 'reduced.wat'
    reduced.write_text('(module (func (export "main") (result i64) (i64.const 300)))')
    config = make_config(cost_files, tmp_path / 'work', tmp_path / 'out',
                         input=str(corpus('dead_div')), reduced=str(reduced))
    with pytest.raises(MeasurementFailure, match='does not preserve'):
        run_pipeline(config)
