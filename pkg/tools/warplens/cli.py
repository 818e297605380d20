"""
Command-line surface for warp-lens.

    warp-lens run --config warp-lens.toml [--input bench.wasm] [--out report]
    warp-lens mutate bench.wasm [--out mutants]
    warp-lens score [--workdir .warp-lens] [--alpha 0.7] [--score-mode perf-only]
    warp-lens diff original.dis mutant.dis
    warp-lens validate-reduction original.wasm reduced.wasm --config warp-lens.toml
    warp-lens mock-run [--cost-model cost.toml] [--dump] module.wasm
"""
import argparse
import logging
import os
import sys
from pathlib import Path

from . import console
from .config import PIPELINE_KEYS, WORKDIR_ENV, load_config
from .console import bold, dim, done, print_disqualified, print_function_diffs, print_header, print_ranking, reset
from .disasm import DEFAULT_SYMBOL_PATTERN, parse_dump
from .errors import ConfigError, WarpLensError
from .machdiff import diff_totals, isolate_slow_code
from .mock import run_mock
from .mutate import MutationConfig, generate_all_mutants, write_mutants
from .pipeline import EXIT_FAILURE, EXIT_NO_CANDIDATE, EXIT_OK, MEASUREMENTS, rescore, run_pipeline
from .reduction import validate_reduction
from .report import function_line, region_lines
from .scoring import ScoreMode, ScoreWeights, score_table
from .wasm import load_module_bytes, parse_module

log = logging.getLogger('warplens')


def _configure_logging(verbosity: int):
    level = {-1: logging.WARNING, 0: logging.INFO}.get(verbosity, logging.DEBUG)
    if verbosity < -1:
        level = logging.ERROR
    logging.basicConfig(level=level, format='  %(levelname).1s %(name)s: %(message)s')
    logging.captureWarnings(True)


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    for key in PIPELINE_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = str(value) if isinstance(value, Path) else value
    return out


def _labels(ranked, manifest: tuple[dict, ...]) -> dict[int, str]:
    by_ordinal = {r['ordinal']: r for r in manifest}
    labels = {}
    for s in ranked:
        r = by_ordinal.get(s.ordinal)
        if r:
            labels[s.ordinal] = f"func {r['function']} @{r['offset']}: {r['original']} → {r['mutated']}"
    return labels


# =============================================================================
# Subcommands
# =============================================================================

def cmd_run(args) -> int:
    config = load_config(args.config, _overrides(args))
    print_header(f'warp-lens: {config.input}')
    print(f'  buggy:  {config.buggy.name}')
    print(f'  oracle: {config.oracle.name}')
    result = run_pipeline(config)

    if result.bundle and result.bundle.message:
        print(f'\n  {result.bundle.message}')
    if result.ranked:
        print_ranking(result.ranked, _labels(result.ranked, result.bundle.manifest), limit=config.top_k)
    print_disqualified(result.rejected)
    if result.bundle:
        for candidate in result.bundle.candidates:
            if candidate.diffs:
                print(f'\n  {bold()}#{candidate.rank}{reset()} mutant {candidate.score.ordinal}')
                print_function_diffs(list(candidate.diffs))

    print()
    print(f'  {dim()}{len(result.mutants)} mutants, {result.timed_runs} timed runs{reset()}')
    for path in result.files:
        done(str(path))
    return result.exit_status


def cmd_mutate(args) -> int:
    mutation = MutationConfig()
    if args.config:
        config = load_config(args.config, _overrides(args))
        mutation = MutationConfig(pool=config.pool, cap=config.mutant_cap)
    elif args.mutant_cap:
        mutation = MutationConfig(cap=args.mutant_cap)

    model = parse_module(load_module_bytes(args.module))
    mutants = generate_all_mutants(model, mutation)
    if not mutants:
        print('  No mutable instructions.')
        return EXIT_NO_CANDIDATE
    manifest = write_mutants(mutants, args.out)
    counts: dict[str, int] = {}
    for m in mutants:
        counts[m.rule.tag] = counts.get(m.rule.tag, 0) + 1
    print(f'  {len(mutants)} mutants ' + ', '.join(f'{k}: {v}' for k, v in sorted(counts.items())))
    done(str(manifest))
    return EXIT_OK


def cmd_score(args) -> int:
    workdir = Path(args.workdir or os.environ.get(WORKDIR_ENV) or PIPELINE_KEYS['workdir'][1])
    ranked, rejected = rescore(workdir / MEASUREMENTS, ScoreWeights(args.alpha, args.beta),
                               ScoreMode(args.score_mode))
    if not ranked:
        print('  No qualified mutants.')
        return EXIT_NO_CANDIDATE
    print_ranking(ranked, {}, limit=args.top_k)
    print_disqualified(rejected)
    out = Path(args.out) if args.out else workdir
    out.mkdir(parents=True, exist_ok=True)
    path = out / 'scores.csv'
    path.write_text(score_table(ranked, rejected))
    print()
    done(str(path))
    return EXIT_OK


def cmd_diff(args) -> int:
    def read(path):
        try:
            return parse_dump(Path(path).read_text(), args.symbol_pattern)
        except OSError as exc:
            raise ConfigError(f'cannot read {path}: {exc}') from exc

    diffs = isolate_slow_code(read(args.original), read(args.mutant), args.context)
    changed = [d for d in diffs if d.changed]
    if not changed:
        print('  No machine-code differences.')
        return EXIT_OK
    for d in changed:
        print(function_line(d))
        for line in region_lines(d):
            print(line)
    totals = diff_totals(diffs)
    print(f"\n  identified {totals['identified']} original-side instructions "
          f"in {len(changed)} function(s)")
    return EXIT_OK


def cmd_validate_reduction(args) -> int:
    config = load_config(args.config)
    verdict = validate_reduction(args.original, args.reduced, config.buggy, config.oracle,
                                 config.reduction_band, config.reduction_band,
                                 config.reps, config.warmups)
    print(verdict.describe())
    return EXIT_OK if verdict.passed else EXIT_FAILURE


def cmd_mock_run(args) -> int:
    return run_mock(args.module, args.cost_model, args.entry, args.dump)


# =============================================================================
# Parser
# =============================================================================

def _pipeline_flags(p: argparse.ArgumentParser):
    p.add_argument('--input', type=Path, help='module to analyze (.wasm or .wat)')
    p.add_argument('--reduced', type=Path, help='reduced module to validate and mutate instead')
    p.add_argument('--out', type=Path, help='report directory')
    p.add_argument('--workdir', type=Path, help=f'working directory (env {WORKDIR_ENV} wins)')
    p.add_argument('--alpha', type=float)
    p.add_argument('--beta', type=float)
    p.add_argument('--score-mode', dest='score_mode', choices=list(ScoreMode))
    p.add_argument('--reps', type=int, help='timed repetitions per module and runtime')
    p.add_argument('--warmups', type=int)
    p.add_argument('--top-k', dest='top_k', type=int)
    p.add_argument('--mutant-cap', dest='mutant_cap', type=int)
    p.add_argument('--jobs', type=int, help='parallel functional runs')
    p.add_argument('--timeout-factor', dest='timeout_factor', type=float)
    p.add_argument('--timeout-floor', dest='timeout_floor', type=float)
    p.add_argument('--instability', type=float, help='relative IQR above which a sample is flagged')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='warp-lens',
        description='Isolate slow JIT code in WebAssembly runtimes by mutating the input program.',
    )
    parser.add_argument('-v', '--verbose', action='count', default=0)
    parser.add_argument('-q', '--quiet', action='count', default=0)
    parser.add_argument('--no-color', action='store_true', help='disable truecolor output')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('run', help='full pipeline: mutate, measure, score, diff, report')
    p.add_argument('--config', type=Path, required=True)
    _pipeline_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser('mutate', help='generate mutants only')
    p.add_argument('module', type=Path)
    p.add_argument('--config', type=Path, help='take the immediate pool and cap from a config file')
    p.add_argument('--out', type=Path, default=Path('mutants'))
    p.add_argument('--mutant-cap', dest='mutant_cap', type=int)
    p.set_defaults(func=cmd_mutate)

    p = sub.add_parser('score', help=f're-rank {MEASUREMENTS} from a previous run')
    p.add_argument('--workdir', type=Path)
    p.add_argument('--out', type=Path, help='where to write scores.csv (default: workdir)')
    p.add_argument('--alpha', type=float, default=0.5)
    p.add_argument('--beta', type=float, default=0.5)
    p.add_argument('--score-mode', dest='score_mode', choices=list(ScoreMode), default=str(ScoreMode.COMBINED))
    p.add_argument('--top-k', dest='top_k', type=int, default=10)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser('diff', help='diff two machine-code dumps')
    p.add_argument('original', type=Path)
    p.add_argument('mutant', type=Path)
    p.add_argument('--context', type=int, default=3)
    p.add_argument('--symbol-pattern', dest='symbol_pattern', default=DEFAULT_SYMBOL_PATTERN)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser('validate-reduction', help='check that a reduced module preserves the issue')
    p.add_argument('original', type=Path)
    p.add_argument('reduced', type=Path)
    p.add_argument('--config', type=Path, required=True)
    p.set_defaults(func=cmd_validate_reduction)

    p = sub.add_parser('mock-run', help='run a module on the deterministic cost-model interpreter')
    p.add_argument('module', type=Path)
    p.add_argument('--cost-model', dest='cost_model', type=Path)
    p.add_argument('--entry', default='main')
    p.add_argument('--dump', action='store_true', help='print the pseudo machine-code listing')
    p.set_defaults(func=cmd_mock_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.no_color:
        console.set_color(False)
    if args.command != 'mock-run':
        _configure_logging(args.verbose - args.quiet)

    try:
        return args.func(args)
    except WarpLensError as exc:
        log.debug('failure', exc_info=True)
        print(f'Error: {exc}', file=sys.stderr)
        return EXIT_FAILURE
