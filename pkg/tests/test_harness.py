import hashlib
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import pytest

from conftest import corpus
from warplens import harness
from warplens.errors import DumpUnsupported, MeasurementFailure, SpawnFailure, UnstableMeasurement
from warplens.harness import (
    MEASUREMENT_TOKEN, Role, RuntimeSpec, TimingSample, dump_machine_code, measure_execution,
    run_with_output, split_pseudo_time, timeout_for,
)


def fake_spawn(elapsed, stdout=b'5\n', delay=0.0):
    times = iter(elapsed)

    def spawn(argv, env, timeout):
        time.sleep(delay)
        return harness._Run(0, stdout, b'', next(times))
    return spawn


def test_functional_run_digest(buggy_spec):
    outcome = run_with_output(buggy_spec, corpus('arith'))
    assert outcome.ok
    assert outcome.stdout_digest == hashlib.sha256(b'5\n').hexdigest()


def test_functional_run_trap(buggy_spec):
    outcome = run_with_output(buggy_spec, corpus('trap_div'))
    assert outcome.exit_status == 3
    assert outcome.trapped and not outcome.ok
    assert 'integer divide by zero' in outcome.stderr_tail


def test_step_budget_counts_as_timeout(buggy_spec):
    outcome = run_with_output(buggy_spec, corpus('spin'))
    assert outcome.timed_out and not outcome.trapped


def test_wall_clock_timeout(tmp_path):
    spec = RuntimeSpec('sleeper', Role.ORACLE,
                       (sys.executable, '-c', 'import time; time.sleep(30)', '{module}'), timeout=0.5)
    outcome = run_with_output(spec, tmp_path / 'm.wasm')
    assert outcome.timed_out
    assert outcome.exit_status == harness.TIMEOUT_EXIT


def test_spawn_failure(tmp_path):
    spec = RuntimeSpec('missing', Role.BUGGY, (str(tmp_path / 'no-such-runtime'), '{module}'))
    with pytest.raises(SpawnFailure):
        run_with_output(spec, tmp_path / 'm.wasm')


def test_measure_on_pseudo_clock(buggy_spec, oracle_spec):
    before = MEASUREMENT_TOKEN.timed_runs
    buggy = measure_execution(buggy_spec, corpus('dead_div'), repetitions=3, warmups=1)
    oracle = measure_execution(oracle_spec, corpus('dead_div'), repetitions=3, warmups=0)

    assert buggy.timing.runs == (6205, 6205, 6205)
    assert buggy.timing.clock == 'pseudo' and not buggy.timing.unstable
    assert oracle.timing.median == 1305
    # warmups are not counted
    assert MEASUREMENT_TOKEN.timed_runs - before == 6
    assert buggy.stdout_digest == oracle.stdout_digest


def test_measure_rejects_failed_runs(buggy_spec):
    with pytest.raises(MeasurementFailure):
        measure_execution(buggy_spec, corpus('trap_div'), repetitions=3, warmups=0)


def test_measure_needs_three_repetitions(buggy_spec):
    with pytest.raises(ValueError):
        measure_execution(buggy_spec, corpus('arith'), repetitions=2)


def test_unstable_sample_is_flagged(monkeypatch, tmp_path):
    monkeypatch.setattr(harness, '_spawn', fake_spawn([1.0, 1.5, 2.0]))
    spec = RuntimeSpec('noisy', Role.BUGGY, ('runtime', '{module}'))
    with pytest.warns(UnstableMeasurement):
        outcome = measure_execution(spec, tmp_path / 'm.wasm', repetitions=3, warmups=0)
    assert outcome.timing.unstable
    assert outcome.timing.clock == 'wall'
    assert outcome.timing.median == 1.5


def recording_spawn(intervals, barrier=None):
    lock = threading.Lock()

    def spawn(argv, env, timeout):
        start = time.perf_counter()
        if barrier is not None:
            barrier.wait(timeout=5)
        time.sleep(0.01)
        end = time.perf_counter()
        with lock:
            intervals.append((start, end))
        return harness._Run(0, b'5\n', b'', end - start)
    return spawn


def test_timed_runs_never_overlap(monkeypatch, tmp_path):
    intervals = []
    monkeypatch.setattr(harness, '_spawn', recording_spawn(intervals))
    spec = RuntimeSpec('steady', Role.BUGGY, ('runtime', '{module}'))
    with ThreadPoolExecutor(max_workers=8) as pool:
        outcomes = list(pool.map(lambda _: measure_execution(spec, tmp_path / 'm.wasm', 3, 1), range(8)))

    assert all(o.ok for o in outcomes)
    assert len(intervals) == 8 * 4
    ordered = sorted(intervals)
    assert all(prev_end <= start for (_, prev_end), (start, _) in zip(ordered, ordered[1:]))


def test_functional_runs_run_concurrently(monkeypatch, tmp_path):
    intervals = []
    # every run blocks until all four are in flight at once
    monkeypatch.setattr(harness, '_spawn', recording_spawn(intervals, threading.Barrier(4)))
    spec = RuntimeSpec('steady', Role.BUGGY, ('runtime', '{module}'))
    with ThreadPoolExecutor(max_workers=4) as pool:
        outcomes = list(pool.map(lambda _: run_with_output(spec, tmp_path / 'm.wasm'), range(4)))

    assert all(o.ok for o in outcomes)
    assert max(start for start, _ in intervals) < min(end for _, end in intervals)


def test_split_pseudo_time():
    stdout, pseudo = split_pseudo_time(b'300\nwarp-lens:pseudo-time=1305\n')
    assert stdout == b'300\n' and pseudo == 1305
    assert split_pseudo_time(b'1\n') == (b'1\n', None)


@pytest.mark.parametrize('line', [b'warp-lens:pseudo-time=fast\n', b'warp-lens:pseudo-time=\n',
                                  b'warp-lens:pseudo-time=nan\n', b'warp-lens:pseudo-time=-4\n'])
def test_split_pseudo_time_rejects_bad_values(line):
    with pytest.raises(MeasurementFailure, match='pseudo-time'):
        split_pseudo_time(b'300\n' + line)


def test_bad_pseudo_time_is_a_measurement_failure(monkeypatch, tmp_path):
    monkeypatch.setattr(harness, '_spawn', fake_spawn([1.0] * 3, stdout=b'5\nwarp-lens:pseudo-time=1e\n'))
    spec = RuntimeSpec('garbled', Role.BUGGY, ('runtime', '{module}'))
    with pytest.raises(MeasurementFailure):
        measure_execution(spec, tmp_path / 'm.wasm', repetitions=3, warmups=0)


def test_timeout_for():
    assert timeout_for(TimingSample((5.0, 5.0, 5.0), clock='pseudo')) is None
    assert timeout_for(TimingSample((0.1, 0.2, 0.3))) == 10.0
    assert timeout_for(TimingSample((1.0, 1.0, 1.0))) == 20.0
    assert timeout_for(TimingSample((1.0, 1.0, 1.0)), factor=5, floor=1) == 5.0


def test_spec_problems():
    assert RuntimeSpec('ok', Role.BUGGY, ('run', '{module}')).problems() == []
    problems = RuntimeSpec('bad', Role.BUGGY, ('run',), dump=('{module}', '{module}'),
                           timeout=0, trap_pattern='(').problems()
    assert len(problems) == 4


def test_dump_machine_code(buggy_spec, oracle_spec):
    dis = dump_machine_code(buggy_spec, corpus('calls'))
    assert [f.index for f in dis.functions] == [0, 1]
    with pytest.raises(DumpUnsupported):
        dump_machine_code(oracle_spec, corpus('calls'))
