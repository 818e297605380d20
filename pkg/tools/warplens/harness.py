"""
Execution harness.

Runs a Wasm module under an external runtime command and observes exit
status, stdout and wall-clock time. Timed runs from every thread go through
MEASUREMENT_TOKEN so no two timed runs overlap; functional runs do not take
the token and may run in parallel.

Runtimes that report deterministic pseudo-time (the mock interpreter) print
a `warp-lens:pseudo-time=<n>` line on stdout. When present it replaces
wall-clock time and is excluded from the stdout digest.
"""
import enum
import hashlib
import json
import logging
import math
import os
import re
import shlex
import statistics
import subprocess
import threading
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .disasm import DEFAULT_SYMBOL_PATTERN, Disassembly, parse_dump
from .errors import DumpParseError, DumpUnsupported, MeasurementFailure, SpawnFailure, UnstableMeasurement

log = logging.getLogger(__name__)

MODULE_PLACEHOLDER = '{module}'
PSEUDO_TIME_MARKER = 'warp-lens:pseudo-time='
TIMEOUT_EXIT = 124
DEFAULT_TRAP_PATTERN = r'(?i)trap|unreachable'
DEFAULT_REPETITIONS = 5
DEFAULT_WARMUPS = 1
DEFAULT_INSTABILITY = 0.10


class Role(enum.StrEnum):
    BUGGY = 'buggy'
    ORACLE = 'oracle'


def split_command(template: str | list[str] | tuple[str, ...]) -> tuple[str, ...]:
    if isinstance(template, str):
        return tuple(shlex.split(template))
    return tuple(template)


@dataclass(frozen=True)
class RuntimeSpec:
    name: str
    role: Role
    invoke: tuple[str, ...]
    dump: tuple[str, ...] | None = None
    timeout: float = 10.0
    env: dict[str, str] = field(default_factory=dict)
    trap_pattern: str = DEFAULT_TRAP_PATTERN
    symbol_pattern: str = DEFAULT_SYMBOL_PATTERN

    def problems(self) -> list[str]:
        errors = []
        for label, template in (('invoke', self.invoke), ('dump', self.dump)):
            if template is None:
                continue
            count = sum(arg.count(MODULE_PLACEHOLDER) for arg in template)
            if count != 1:
                errors.append(f'{self.name}: {label} must contain {MODULE_PLACEHOLDER} exactly once (found {count})')
        if self.timeout <= 0:
            errors.append(f'{self.name}: timeout must be positive')
        try:
            re.compile(self.trap_pattern)
        except re.error as exc:
            errors.append(f'{self.name}: bad trap_pattern: {exc}')
        return errors

    def command(self, template: tuple[str, ...], module_path: Path) -> list[str]:
        return [arg.replace(MODULE_PLACEHOLDER, str(module_path)) for arg in template]

    def fingerprint(self) -> str:
        """Stable digest of everything that affects a measurement."""
        data = asdict(self)
        return hashlib.sha256(json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TimingSample:
    runs: tuple[float, ...]
    warmups: int = 0
    clock: str = 'wall'            # 'wall' seconds or 'pseudo' cost units
    unstable: bool = False

    @property
    def repetitions(self) -> int:
        return len(self.runs)

    @property
    def median(self) -> float:
        return statistics.median(self.runs)

    @property
    def spread(self) -> float:
        """Interquartile range relative to the median."""
        if len(self.runs) < 2 or self.median == 0:
            return 0.0
        q1, _, q3 = statistics.quantiles(self.runs, n=4, method='inclusive')
        return (q3 - q1) / self.median

    def to_dict(self) -> dict:
        return {'runs': list(self.runs), 'warmups': self.warmups, 'clock': self.clock,
                'unstable': self.unstable, 'median': self.median}

    @classmethod
    def from_dict(cls, data: dict) -> 'TimingSample':
        return cls(tuple(data['runs']), data.get('warmups', 0), data.get('clock', 'wall'),
                   data.get('unstable', False))


@dataclass(frozen=True)
class ExecutionOutcome:
    exit_status: int
    stdout_digest: str
    trapped: bool = False
    timed_out: bool = False
    timing: TimingSample | None = None
    stderr_tail: str = ''

    @property
    def ok(self) -> bool:
        return self.exit_status == 0 and not self.trapped and not self.timed_out


# =============================================================================
# Process plumbing
# =============================================================================

@dataclass(frozen=True)
class _Run:
    returncode: int
    stdout: bytes
    stderr: bytes
    elapsed: float
    killed: bool = False


def _spawn(argv: list[str], env: dict[str, str], timeout: float | None) -> _Run:
    full_env = {**os.environ, **env}
    start = time.perf_counter()
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=timeout, env=full_env)
    except subprocess.TimeoutExpired as exc:
        return _Run(TIMEOUT_EXIT, exc.stdout or b'', exc.stderr or b'', time.perf_counter() - start, killed=True)
    except (FileNotFoundError, PermissionError, OSError) as exc:
        raise SpawnFailure(f'cannot launch {argv[0]!r}: {exc}') from exc
    return _Run(proc.returncode, proc.stdout, proc.stderr, time.perf_counter() - start)


def split_pseudo_time(stdout: bytes) -> tuple[bytes, float | None]:
    """Strip the pseudo-time line from stdout, returning it separately."""
    kept = []
    pseudo = None
    marker = PSEUDO_TIME_MARKER.encode()
    for line in stdout.splitlines(keepends=True):
        if line.startswith(marker):
            value = line[len(marker):].strip()
            try:
                pseudo = float(value)
            except ValueError:
                raise MeasurementFailure(f'malformed pseudo-time value {value[:40]!r}') from None
            if not math.isfinite(pseudo) or pseudo < 0:
                raise MeasurementFailure(f'pseudo-time must be a finite non-negative number, got {pseudo}')
        else:
            kept.append(line)
    return b''.join(kept), pseudo


def _outcome(spec: RuntimeSpec, run: _Run) -> tuple[ExecutionOutcome, float | None]:
    stdout, pseudo = split_pseudo_time(run.stdout)
    stderr = run.stderr.decode('utf-8', errors='replace')
    timed_out = run.killed or run.returncode == TIMEOUT_EXIT
    trapped = (not timed_out and run.returncode != 0
               and re.search(spec.trap_pattern, stderr) is not None)
    outcome = ExecutionOutcome(
        exit_status=run.returncode,
        stdout_digest=hashlib.sha256(stdout).hexdigest(),
        trapped=trapped,
        timed_out=timed_out,
        stderr_tail=stderr[-400:],
    )
    return outcome, pseudo


def run_with_output(spec: RuntimeSpec, module_path: Path, timeout: float | None = None) -> ExecutionOutcome:
    """One functional run: exit status, stdout digest and trap classification."""
    run = _spawn(spec.command(spec.invoke, module_path), spec.env, timeout or spec.timeout)
    outcome, _ = _outcome(spec, run)
    log.debug('%s %s -> exit %d', spec.name, Path(module_path).name, outcome.exit_status)
    return outcome


# =============================================================================
# Timed runs
# =============================================================================

class MeasurementToken:
    """Process-wide lock admitting one timed sample at a time."""

    def __init__(self):
        self._lock = threading.Lock()
        self._state = threading.Lock()
        self.timed_runs = 0

    def __enter__(self):
        self._lock.acquire()
        return self

    def __exit__(self, *exc):
        self._lock.release()
        return False

    def count(self, n: int = 1):
        with self._state:
            self.timed_runs += n


MEASUREMENT_TOKEN = MeasurementToken()


def measure_execution(spec: RuntimeSpec, module_path: Path,
                      repetitions: int = DEFAULT_REPETITIONS,
                      warmups: int = DEFAULT_WARMUPS,
                      instability: float = DEFAULT_INSTABILITY,
                      timeout: float | None = None) -> ExecutionOutcome:
    """Median-of-N timing; every timed run must finish cleanly."""
    if repetitions < 3:
        raise ValueError('repetitions must be at least 3')
    runs: list[float] = []
    clock = 'wall'
    outcome = None
    argv = spec.command(spec.invoke, module_path)

    with MEASUREMENT_TOKEN:
        for i in range(warmups + repetitions):
            run = _spawn(argv, spec.env, timeout or spec.timeout)
            outcome, pseudo = _outcome(spec, run)
            if not outcome.ok:
                what = 'timed out' if outcome.timed_out else 'trapped' if outcome.trapped else f'exited {outcome.exit_status}'
                raise MeasurementFailure(f'{spec.name}: timed run {i} of {Path(module_path).name} {what}')
            if i < warmups:
                continue
            MEASUREMENT_TOKEN.count()
            if pseudo is not None:
                clock = 'pseudo'
                runs.append(pseudo)
            else:
                runs.append(run.elapsed)

    sample = TimingSample(tuple(runs), warmups, clock)
    if sample.spread > instability:
        warnings.warn(f'{spec.name}: {Path(module_path).name} spread {sample.spread:.1%} exceeds {instability:.0%}',
                      UnstableMeasurement, stacklevel=2)
        sample = TimingSample(sample.runs, warmups, clock, unstable=True)
    return ExecutionOutcome(outcome.exit_status, outcome.stdout_digest, timing=sample)


def timeout_for(sample: TimingSample, factor: float = 20.0, floor: float = 10.0) -> float | None:
    """Wall-clock timeout derived from the original program's median."""
    if sample.clock != 'wall':
        return None
    return max(floor, factor * sample.median)


# =============================================================================
# Machine-code dump
# =============================================================================

def dump_machine_code(spec: RuntimeSpec, module_path: Path) -> Disassembly:
    if spec.dump is None:
        raise DumpUnsupported(f'runtime {spec.name!r} has no dump adapter')
    run = _spawn(spec.command(spec.dump, module_path), spec.env, spec.timeout)
    if run.returncode != 0:
        tail = run.stderr.decode('utf-8', errors='replace')[-400:]
        raise DumpParseError(f'{spec.name}: dump adapter exited {run.returncode}: {tail}')
    return parse_dump(run.stdout.decode('utf-8', errors='replace'), spec.symbol_pattern)
