"""
The warp-lens pipeline.

    measure original (both runtimes)
      -> generate mutants
      -> functional runs + filter          (parallel, untimed)
      -> timed runs                        (serialized)
      -> score and rank
      -> dump, diff and report the top K

Timing samples are cached under <workdir>/timings, keyed by module bytes
and runtime fingerprint, so an interrupted run resumes without re-measuring.
"""
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from .config import PipelineConfig
from .errors import ConfigError, DumpUnsupported, MalformedBinary, MeasurementFailure
from .harness import (
    MEASUREMENT_TOKEN, ExecutionOutcome, RuntimeSpec, TimingSample,
    dump_machine_code, measure_execution, run_with_output, timeout_for,
)
from .machdiff import isolate_slow_code
from .mutate import MutationConfig, Mutant, generate_all_mutants, write_mutants
from .reduction import validate_reduction
from .report import Candidate, ReportBundle, excerpt, render_report
from .scoring import (
    Disqualified, MutantScore, ScoreMode, ScoreWeights,
    filter_invalid, rank_mutants, score_mutant,
)
from .wasm import load_module_bytes, parse_module, validate_module

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_NO_CANDIDATE = 2

MEASUREMENTS = 'measurements.jsonl'


@dataclass
class PipelineResult:
    exit_status: int
    bundle: ReportBundle | None = None
    mutants: list[Mutant] = field(default_factory=list)
    ranked: list[MutantScore] = field(default_factory=list)
    rejected: list[Disqualified] = field(default_factory=list)
    timed_runs: int = 0
    expected_timed_runs: int = 0
    files: list[Path] = field(default_factory=list)


# =============================================================================
# Measurement cache
# =============================================================================

class TimingCache:
    """Content-addressed TimingSamples under <workdir>/timings."""

    def __init__(self, directory: Path, reps: int, warmups: int):
        self.directory = Path(directory)
        self.reps = reps
        self.warmups = warmups

    def _path(self, module: bytes, spec: RuntimeSpec) -> Path:
        h = hashlib.sha256(module)
        h.update(f'{spec.fingerprint()}:{self.reps}:{self.warmups}'.encode())
        return self.directory / f'{h.hexdigest()}.json'

    def get(self, module: bytes, spec: RuntimeSpec) -> TimingSample | None:
        path = self._path(module, spec)
        if not path.exists():
            return None
        try:
            return TimingSample.from_dict(json.loads(path.read_text()))
        except (ValueError, KeyError) as exc:
            log.warning('ignoring corrupt cache entry %s: %s', path.name, exc)
            return None

    def put(self, module: bytes, spec: RuntimeSpec, sample: TimingSample):
        self.directory.mkdir(parents=True, exist_ok=True)
        self._path(module, spec).write_text(json.dumps(sample.to_dict(), sort_keys=True))


def _timed(cache: TimingCache, config: PipelineConfig, spec: RuntimeSpec, path: Path,
           module: bytes, timeout: float | None) -> TimingSample:
    cached = cache.get(module, spec)
    if cached is not None:
        log.debug('cached timing for %s on %s', path.name, spec.name)
        return cached
    outcome = measure_execution(spec, path, config.reps, config.warmups, config.instability, timeout)
    cache.put(module, spec, outcome.timing)
    return outcome.timing


# =============================================================================
# Stages
# =============================================================================

def _prepare_input(config: PipelineConfig, workdir: Path) -> tuple[Path, bytes]:
    if config.input is None:
        raise ConfigError('no input module given')
    data = load_module_bytes(config.input)
    verdict = validate_module(data)
    if not verdict:
        raise MalformedBinary(f'input rejected by validator: {verdict.rule}', verdict.offset)
    path = workdir / 'original.wasm'
    path.write_bytes(data)

    if config.reduced is not None:
        reduced_data = load_module_bytes(config.reduced)
        reduced = workdir / 'reduced.wasm'
        reduced.write_bytes(reduced_data)
        verdict = validate_reduction(path, reduced, config.buggy, config.oracle,
                                     config.reduction_band, config.reduction_band,
                                     config.reps, config.warmups)
        if not verdict.passed:
            raise MeasurementFailure(f'reduced module does not preserve the issue:\n{verdict.describe()}')
        log.info('reduction validated; mutating %s', config.reduced)
        return reduced, reduced_data
    return path, data


def _functional_runs(config: PipelineConfig, paths: dict[int, Path],
                     timeout: float | None) -> dict[int, tuple[ExecutionOutcome, ExecutionOutcome]]:
    def both(ordinal):
        path = paths[ordinal]
        return ordinal, (run_with_output(config.buggy, path, timeout),
                         run_with_output(config.oracle, path, timeout))

    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        return dict(pool.map(both, sorted(paths)))


def write_measurements(path: Path, original: tuple[TimingSample, TimingSample],
                       samples: dict[int, tuple[TimingSample, TimingSample]],
                       rules: dict[int, str], rejected: list[Disqualified]):
    lines = [{'kind': 'original', 'buggy': original[0].to_dict(), 'oracle': original[1].to_dict()}]
    for ordinal in sorted(samples):
        buggy, oracle = samples[ordinal]
        lines.append({'kind': 'mutant', 'ordinal': ordinal, 'rule': rules[ordinal],
                      'buggy': buggy.to_dict(), 'oracle': oracle.to_dict()})
    for d in rejected:
        lines.append({'kind': 'disqualified', 'ordinal': d.ordinal, 'rule': d.rule, 'reason': d.reason})
    path.write_text(''.join(json.dumps(line, sort_keys=True) + '\n' for line in lines))


def rescore(path: Path, weights: ScoreWeights = ScoreWeights(),
            mode: ScoreMode = ScoreMode.COMBINED) -> tuple[list[MutantScore], list[Disqualified]]:
    """Re-rank persisted measurements with new weights or score mode."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f'no persisted measurements: {exc}') from exc
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    original = next((r for r in records if r['kind'] == 'original'), None)
    if original is None:
        raise ConfigError(f'{path}: no original measurement')
    base = (TimingSample.from_dict(original['buggy']), TimingSample.from_dict(original['oracle']))
    scores, rejected = [], []
    for r in records:
        if r['kind'] == 'mutant':
            pair = (TimingSample.from_dict(r['buggy']), TimingSample.from_dict(r['oracle']))
            scores.append(score_mutant(base, pair, weights, r['ordinal'], r['rule']))
        elif r['kind'] == 'disqualified':
            rejected.append(Disqualified(r['ordinal'], r['rule'], r['reason']))
    return rank_mutants(scores, mode), rejected


def _metadata(config: PipelineConfig, **extra) -> dict:
    def spec(s: RuntimeSpec) -> dict:
        d = asdict(s)
        d['invoke'] = list(s.invoke)
        d['dump'] = list(s.dump) if s.dump else None
        return d

    return {
        'input': str(config.input),
        'buggy': spec(config.buggy),
        'oracle': spec(config.oracle),
        'alpha': config.weights.alpha,
        'beta': config.weights.beta,
        'score_mode': str(config.score_mode),
        'reps': config.reps,
        'warmups': config.warmups,
        'top_k': config.top_k,
        'mutant_cap': config.mutant_cap,
        **extra,
    }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


def _candidates(config: PipelineConfig, ranked: list[MutantScore], by_ordinal: dict[int, Mutant],
                original_path: Path, original_model, mutant_dir: Path):
    """Dump, diff and excerpt the top-K mutants."""
    top = ranked[:config.top_k]
    original_dump = None
    dumps = {}
    try:
        original_dump = dump_machine_code(config.buggy, original_path)
    except DumpUnsupported as exc:
        log.warning('%s; reporting without machine-code diffs', exc)

    candidates = []
    for rank, score in enumerate(top, 1):
        mutant = by_ordinal[score.ordinal]
        diffs = ()
        if original_dump is not None:
            dumps[score.ordinal] = dump_machine_code(config.buggy, mutant_dir / mutant.filename)
            diffs = tuple(isolate_slow_code(original_dump, dumps[score.ordinal]))
        site = mutant.site
        start = site.span[0]
        mutated_func = parse_module(mutant.module).function(site.function)
        candidates.append(Candidate(
            rank=rank,
            score=score,
            site=mutant.manifest_record(),
            original_excerpt=excerpt(original_model.function(site.function), site.span),
            mutant_excerpt=excerpt(mutated_func, (start, start + len(site.replacement or ()))),
            diffs=diffs,
        ))
    return candidates, original_dump, dumps


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    started = _now()
    workdir = Path(config.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    mutant_dir = workdir / 'mutants'
    cache = TimingCache(workdir / 'timings', config.reps, config.warmups)
    runs_before = MEASUREMENT_TOKEN.timed_runs

    original_path, original_bytes = _prepare_input(config, workdir)
    model = parse_module(original_bytes)

    # Original program: functional runs, then timing.
    base_buggy = run_with_output(config.buggy, original_path)
    base_oracle = run_with_output(config.oracle, original_path)
    for spec, outcome in ((config.buggy, base_buggy), (config.oracle, base_oracle)):
        if not outcome.ok:
            raise MeasurementFailure(f'original program fails on {spec.name} (exit {outcome.exit_status})')
    original = (
        _timed(cache, config, config.buggy, original_path, original_bytes, None),
        _timed(cache, config, config.oracle, original_path, original_bytes, None),
    )
    timeout = timeout_for(original[0], config.timeout_factor, config.timeout_floor)
    log.info('original: buggy %.6g, oracle %.6g (%s clock)', original[0].median, original[1].median,
             original[0].clock)

    mutants = generate_all_mutants(model, MutationConfig(pool=config.pool, cap=config.mutant_cap))
    result = PipelineResult(EXIT_NO_CANDIDATE, mutants=mutants)

    def finish(bundle: ReportBundle) -> PipelineResult:
        bundle = replace(bundle, timestamps={'started': started, 'finished': _now()})
        result.bundle = bundle
        result.files = render_report(bundle, config.out)
        return result

    if not mutants:
        log.warning('no mutable instructions in %s', config.input)
        return finish(ReportBundle(str(config.input), _metadata(config, mutants=0),
                                   message='No mutable instructions: no mutants could be generated.'))

    write_mutants(mutants, mutant_dir)
    manifest = tuple(m.manifest_record() for m in mutants)
    by_ordinal = {m.ordinal: m for m in mutants}
    rules = {m.ordinal: str(m.rule) for m in mutants}

    outcomes = _functional_runs(config, {m.ordinal: mutant_dir / m.filename for m in mutants}, timeout)
    qualified, rejected = filter_invalid(base_oracle, outcomes, rules)
    log.info('%d of %d mutants qualified', len(qualified), len(mutants))

    samples: dict[int, tuple[TimingSample, TimingSample]] = {}
    for ordinal in qualified:
        mutant = by_ordinal[ordinal]
        path = mutant_dir / mutant.filename
        try:
            samples[ordinal] = (
                _timed(cache, config, config.buggy, path, mutant.module, timeout),
                _timed(cache, config, config.oracle, path, mutant.module, timeout),
            )
        except MeasurementFailure as exc:
            log.warning('mutant %d: %s', ordinal, exc)
            rejected.append(Disqualified(ordinal, rules[ordinal], 'timed run failed'))
    rejected.sort(key=lambda d: d.ordinal)

    result.timed_runs = MEASUREMENT_TOKEN.timed_runs - runs_before
    result.expected_timed_runs = (1 + len(qualified)) * 2 * config.reps
    log.info('timed runs: %d (budget %d)', result.timed_runs, result.expected_timed_runs)

    write_measurements(workdir / MEASUREMENTS, original, samples, rules, rejected)
    scores = [score_mutant(original, samples[o], config.weights, o, rules[o]) for o in sorted(samples)]
    ranked = rank_mutants(scores, config.score_mode)
    result.ranked, result.rejected = ranked, rejected

    metadata = _metadata(config, mutants=len(mutants), qualified=len(ranked),
                         timed_runs=result.timed_runs)
    if not ranked:
        return finish(ReportBundle(str(config.input), metadata, rejected=tuple(rejected), manifest=manifest,
                                   message='No qualified mutants: every mutant was disqualified.'))

    candidates, original_dump, dumps = _candidates(config, ranked, by_ordinal, original_path, model, mutant_dir)
    result.exit_status = EXIT_OK
    return finish(ReportBundle(
        input=str(config.input),
        metadata=metadata,
        candidates=tuple(candidates),
        ranked=tuple(ranked),
        rejected=tuple(rejected),
        original_dump=original_dump,
        mutant_dumps=dumps,
        manifest=manifest,
    ))
