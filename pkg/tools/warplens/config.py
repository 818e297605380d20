"""
Configuration parsing and validation for warp-lens runs.

A run is driven from one TOML file:

    [pipeline]
    input = "bench.wasm"
    out = "report"
    alpha = 0.5
    beta = 0.5
    reps = 5
    top_k = 5

    [pool]
    i32 = [0, 1, -1, 2147483647]

    [runtime.buggy]
    name = "wasmtime-main"
    invoke = "wasmtime run {module}"
    dump = "wasmtime objdump {module}"

    [runtime.oracle]
    name = "wasmer"
    invoke = "wasmer run {module}"

Every [pipeline] key can be overridden from the command line.
"""
import os
import tomllib
from dataclasses import dataclass, field
from pathlib import Path

from .disasm import DEFAULT_SYMBOL_PATTERN
from .errors import ConfigError
from .harness import DEFAULT_INSTABILITY, DEFAULT_TRAP_PATTERN, Role, RuntimeSpec, split_command
from .mutate import DEFAULT_MUTANT_CAP, DEFAULT_POOL
from .opcodes import DataType
from .reduction import ToleranceBand
from .scoring import ScoreMode, ScoreWeights
from .wasm import f32_bits

WORKDIR_ENV = 'WARP_LENS_WORKDIR'

# [pipeline] keys, their types and defaults
PIPELINE_KEYS = {
    'input': (str, None),
    'reduced': (str, None),
    'out': (str, 'warp-lens-report'),
    'workdir': (str, '.warp-lens'),
    'alpha': (float, 0.5),
    'beta': (float, 0.5),
    'score_mode': (str, str(ScoreMode.COMBINED)),
    'reps': (int, 5),
    'warmups': (int, 1),
    'top_k': (int, 5),
    'mutant_cap': (int, DEFAULT_MUTANT_CAP),
    'jobs': (int, 4),
    'timeout_factor': (float, 20.0),
    'timeout_floor': (float, 10.0),
    'instability': (float, DEFAULT_INSTABILITY),
}

RUNTIME_KEYS = {'name', 'invoke', 'dump', 'timeout', 'trap_pattern', 'symbol_pattern', 'env'}


@dataclass(frozen=True)
class PipelineConfig:
    input: Path | None
    buggy: RuntimeSpec
    oracle: RuntimeSpec
    weights: ScoreWeights = ScoreWeights()
    score_mode: ScoreMode = ScoreMode.COMBINED
    reps: int = 5
    warmups: int = 1
    top_k: int = 5
    mutant_cap: int = DEFAULT_MUTANT_CAP
    jobs: int = 4
    timeout_factor: float = 20.0
    timeout_floor: float = 10.0
    instability: float = DEFAULT_INSTABILITY
    out: Path = Path('warp-lens-report')
    workdir: Path = Path('.warp-lens')
    reduced: Path | None = None
    reduction_band: ToleranceBand = ToleranceBand()
    pool: dict[DataType, tuple] = field(default_factory=lambda: dict(DEFAULT_POOL))


def read_config(path: Path) -> dict:
    try:
        with open(path, 'rb') as f:
            return tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f'cannot read {path}: {exc}') from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f'{path}: {exc}') from exc


def _runtime_errors(role: str, table) -> list:
    errors = []
    if not isinstance(table, dict):
        return [f'Missing required table: [runtime.{role}]']
    for key in table:
        if key not in RUNTIME_KEYS:
            errors.append(f'Unknown key in [runtime.{role}]: {key}')
    if not table.get('name'):
        errors.append(f'Missing required key: runtime.{role}.name')
    if not table.get('invoke'):
        errors.append(f'Missing required key: runtime.{role}.invoke')
    if 'env' in table and not isinstance(table['env'], dict):
        errors.append(f'runtime.{role}.env must be a table')
    return errors


def _fits_float(key: str, value: float) -> bool:
    try:
        f32_bits(value) if key == 'f32' else float(value)
    except OverflowError:
        return False
    return True


def validate_config(data: dict) -> list:
    """
    Validate a parsed configuration (after overrides).
    Returns list of error messages (empty if valid).
    """
    errors = []

    pipeline = data.get('pipeline', {})
    for key, value in pipeline.items():
        if key not in PIPELINE_KEYS:
            errors.append(f'Unknown key in [pipeline]: {key}')
            continue
        kind, _ = PIPELINE_KEYS[key]
        if value is not None and not isinstance(value, (int, float) if kind is float else kind):
            errors.append(f'pipeline.{key} must be {kind.__name__}, got {value!r}')
    if errors:
        return errors

    def get(key):
        return pipeline.get(key, PIPELINE_KEYS[key][1])

    if get('reps') < 3:
        errors.append(f'pipeline.reps must be at least 3, got {get("reps")}')
    if get('warmups') < 0:
        errors.append('pipeline.warmups must not be negative')
    if get('top_k') < 1:
        errors.append(f'pipeline.top_k must be at least 1, got {get("top_k")}')
    if get('mutant_cap') < 1:
        errors.append('pipeline.mutant_cap must be at least 1')
    if get('jobs') < 1:
        errors.append('pipeline.jobs must be at least 1')
    for key in ('alpha', 'beta'):
        if not 0 < get(key) <= 1:
            errors.append(f'pipeline.{key} must be in (0, 1], got {get(key)}')
    if get('score_mode') not in set(ScoreMode):
        errors.append(f'pipeline.score_mode must be one of {", ".join(ScoreMode)}')
    if get('timeout_factor') <= 0 or get('timeout_floor') <= 0:
        errors.append('pipeline.timeout_factor and timeout_floor must be positive')

    runtimes = data.get('runtime', {})
    for role in Role:
        errors += _runtime_errors(role, runtimes.get(role))
    buggy, oracle = runtimes.get('buggy'), runtimes.get('oracle')
    if isinstance(buggy, dict) and isinstance(oracle, dict) and buggy == oracle:
        errors.append('runtime.buggy and runtime.oracle must differ')

    for key, values in data.get('pool', {}).items():
        if key not in set(DataType):
            errors.append(f'Unknown pool type: {key}')
        elif not isinstance(values, list) or not values:
            errors.append(f'pool.{key} must be a non-empty list')
        elif key.startswith('i'):
            if not all(isinstance(v, int) and not isinstance(v, bool) for v in values):
                errors.append(f'pool.{key} must contain integers')
            else:
                bits = 32 if key == 'i32' else 64
                lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
                errors += [f'pool.{key} value {v} is outside [{lo}, {hi}]' for v in values if not lo <= v <= hi]
        elif not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
            errors.append(f'pool.{key} must contain numbers')
        else:
            errors += [f'pool.{key} value {v} is outside the {key} range' for v in values if not _fits_float(key, v)]

    band = data.get('reduction', {})
    if not 0 < band.get('low', 0.5) <= 1 <= band.get('high', 2.0):
        errors.append('reduction band [low, high] must contain 1.0')

    return errors


def _runtime_spec(role: Role, table: dict) -> RuntimeSpec:
    dump = table.get('dump')
    return RuntimeSpec(
        name=table['name'],
        role=role,
        invoke=split_command(table['invoke']),
        dump=split_command(dump) if dump else None,
        timeout=float(table.get('timeout', 10.0)),
        env={k: str(v) for k, v in table.get('env', {}).items()},
        trap_pattern=table.get('trap_pattern', DEFAULT_TRAP_PATTERN),
        symbol_pattern=table.get('symbol_pattern', DEFAULT_SYMBOL_PATTERN),
    )


def build_config(data: dict, overrides: dict | None = None) -> PipelineConfig:
    """Typed configuration from a parsed TOML document plus CLI overrides."""
    data = dict(data)
    pipeline = dict(data.get('pipeline', {}))
    pipeline.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if os.environ.get(WORKDIR_ENV):
        pipeline['workdir'] = os.environ[WORKDIR_ENV]
    data['pipeline'] = pipeline

    errors = validate_config(data)
    if errors:
        raise ConfigError('invalid configuration:\n  ' + '\n  '.join(errors))

    def get(key):
        return pipeline.get(key, PIPELINE_KEYS[key][1])

    runtimes = data['runtime']
    buggy = _runtime_spec(Role.BUGGY, runtimes['buggy'])
    oracle = _runtime_spec(Role.ORACLE, runtimes['oracle'])
    for problem in buggy.problems() + oracle.problems():
        errors.append(problem)
    if errors:
        raise ConfigError('invalid configuration:\n  ' + '\n  '.join(errors))

    pool = dict(DEFAULT_POOL)
    for key, values in data.get('pool', {}).items():
        t = DataType(key)
        pool[t] = tuple(values) if key.startswith('i') else tuple(float(v) for v in values)

    band = data.get('reduction', {})
    return PipelineConfig(
        input=Path(get('input')) if get('input') else None,
        buggy=buggy,
        oracle=oracle,
        weights=ScoreWeights(float(get('alpha')), float(get('beta'))),
        score_mode=ScoreMode(get('score_mode')),
        reps=get('reps'),
        warmups=get('warmups'),
        top_k=get('top_k'),
        mutant_cap=get('mutant_cap'),
        jobs=get('jobs'),
        timeout_factor=float(get('timeout_factor')),
        timeout_floor=float(get('timeout_floor')),
        instability=float(get('instability')),
        out=Path(get('out')),
        workdir=Path(get('workdir')),
        reduced=Path(get('reduced')) if get('reduced') else None,
        reduction_band=ToleranceBand(band.get('low', 0.5), band.get('high', 2.0)),
        pool=pool,
    )


def load_config(path: Path, overrides: dict | None = None) -> PipelineConfig:
    return build_config(read_config(Path(path)), overrides)
