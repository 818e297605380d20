"""
Mutant filtering, scoring and ranking.

A good candidate is much faster than the original on the buggy runtime
while the oracle runtime sees roughly the same program:

    perf diff ratio  r_b = original buggy time / mutant buggy time
    func sim ratio   r_o = original oracle time / mutant oracle time

    perf diff score  = 1 - exp(1 - r_b)   if r_b > 1 else 1 - r_b**2
    func sim score   = exp(1 - r_o)       if r_o > 1 else r_o**2
    total            = alpha * perf diff score + beta * func sim score
"""
import csv
import enum
import io
import math
from dataclasses import dataclass

from .errors import ConfigError, NonPositiveRatio, ZeroTiming
from .harness import ExecutionOutcome, TimingSample


class ScoreMode(enum.StrEnum):
    COMBINED = 'combined'
    PERF_ONLY = 'perf-only'


@dataclass(frozen=True)
class ScoreWeights:
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        for name in ('alpha', 'beta'):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ConfigError(f'{name} must be in (0, 1], got {value}')


@dataclass(frozen=True)
class MutantScore:
    ordinal: int
    rule: str
    perf_diff_ratio: float
    func_sim_ratio: float
    perf_diff_score: float
    func_sim_score: float
    total: float
    unstable: bool = False


@dataclass(frozen=True)
class Disqualified:
    ordinal: int
    rule: str
    reason: str


# Saturation ends of the two component scores.
PERF_CEILING = math.nextafter(1.0, 0.0)
SIM_FLOOR = math.ulp(0.0)


def perf_diff_score(ratio: float) -> float:
    """In [0, 1); saturates below 1.0 once exp(1 - ratio) drops under an ulp."""
    if not ratio > 0:
        raise NonPositiveRatio(f'perf diff ratio must be positive, got {ratio}')
    if ratio > 1:
        return min(-math.expm1(1 - ratio), PERF_CEILING)
    return 1 - ratio * ratio


def func_sim_score(ratio: float) -> float:
    """In (0, 1]; never underflows to zero."""
    if not ratio > 0:
        raise NonPositiveRatio(f'func sim ratio must be positive, got {ratio}')
    if ratio > 1:
        return max(math.exp(1 - ratio), SIM_FLOOR)
    return ratio * ratio


def score_mutant(original: tuple[TimingSample, TimingSample], mutant: tuple[TimingSample, TimingSample],
                 weights: ScoreWeights = ScoreWeights(), ordinal: int = -1, rule: str = '') -> MutantScore:
    """Score from (buggy, oracle) median summaries of the original and the mutant."""
    summaries = [s.median for s in (*original, *mutant)]
    if any(v <= 0 for v in summaries):
        raise ZeroTiming(f'mutant {ordinal}: non-positive timing summary {summaries}')
    ob, oo, mb, mo = summaries
    rb = ob / mb
    ro = oo / mo
    pd = perf_diff_score(rb)
    fs = func_sim_score(ro)
    return MutantScore(
        ordinal=ordinal,
        rule=rule,
        perf_diff_ratio=rb,
        func_sim_ratio=ro,
        perf_diff_score=pd,
        func_sim_score=fs,
        total=weights.alpha * pd + weights.beta * fs,
        unstable=any(s.unstable for s in (*original, *mutant)),
    )


def disqualification(original_oracle: ExecutionOutcome, buggy: ExecutionOutcome,
                     oracle: ExecutionOutcome) -> str | None:
    """Reason a mutant is invalid, or None when it qualifies."""
    for role, outcome in (('buggy', buggy), ('oracle', oracle)):
        if outcome.timed_out:
            return f'timeout on {role}'
        if outcome.trapped:
            return f'trap on {role}'
        if outcome.exit_status != 0:
            return f'exit {outcome.exit_status} on {role}'
    if oracle.stdout_digest != original_oracle.stdout_digest:
        return 'oracle output differs from original'
    return None


def filter_invalid(original_oracle: ExecutionOutcome,
                   outcomes: dict[int, tuple[ExecutionOutcome, ExecutionOutcome]],
                   rules: dict[int, str] | None = None) -> tuple[list[int], list[Disqualified]]:
    """Split mutant ordinals into qualified and disqualified (with reasons)."""
    rules = rules or {}
    qualified, rejected = [], []
    for ordinal in sorted(outcomes):
        buggy, oracle = outcomes[ordinal]
        reason = disqualification(original_oracle, buggy, oracle)
        if reason is None:
            qualified.append(ordinal)
        else:
            rejected.append(Disqualified(ordinal, rules.get(ordinal, ''), reason))
    return qualified, rejected


def rank_mutants(scores: list[MutantScore], mode: ScoreMode = ScoreMode.COMBINED) -> list[MutantScore]:
    """Best first; ties broken by func sim score, then ordinal."""
    if mode is ScoreMode.PERF_ONLY:
        return sorted(scores, key=lambda s: (-s.perf_diff_score, -s.func_sim_score, s.ordinal))
    return sorted(scores, key=lambda s: (-s.total, -s.func_sim_score, s.ordinal))


# =============================================================================
# Score table
# =============================================================================

SCORE_COLUMNS = ['rank', 'ordinal', 'rule', 'perf_diff_ratio', 'func_sim_ratio',
                 'perf_diff_score', 'func_sim_score', 'total', 'unstable', 'disqualified']


def score_table(ranked: list[MutantScore], rejected: list[Disqualified] = ()) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(SCORE_COLUMNS)
    for rank, s in enumerate(ranked, 1):
        writer.writerow([rank, s.ordinal, s.rule, f'{s.perf_diff_ratio:.6f}', f'{s.func_sim_ratio:.6f}',
                         f'{s.perf_diff_score:.6f}', f'{s.func_sim_score:.6f}', f'{s.total:.6f}',
                         int(s.unstable), ''])
    for d in sorted(rejected, key=lambda d: d.ordinal):
        writer.writerow(['', d.ordinal, d.rule, '', '', '', '', '', '', d.reason])
    return out.getvalue()
