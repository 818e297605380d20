"""
Checks that an externally reduced module still shows the performance issue.

    check 1  reduced buggy time / original buggy time          within band
    check 2  (reduced buggy / reduced oracle)
             / (original buggy / original oracle)             within band
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .harness import DEFAULT_REPETITIONS, DEFAULT_WARMUPS, RuntimeSpec, measure_execution

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ToleranceBand:
    low: float = 0.5
    high: float = 2.0

    def __post_init__(self):
        if not 0 < self.low <= 1 <= self.high:
            raise ConfigError(f'tolerance band [{self.low}, {self.high}] must contain 1.0')

    def __contains__(self, value: float) -> bool:
        return self.low <= value <= self.high


@dataclass(frozen=True)
class ReductionVerdict:
    buggy_ratio: float
    gap_ratio: float
    buggy_band: ToleranceBand = field(default_factory=ToleranceBand)
    gap_band: ToleranceBand = field(default_factory=ToleranceBand)

    @property
    def comparable(self) -> bool:
        return self.buggy_ratio in self.buggy_band

    @property
    def gap_preserved(self) -> bool:
        return self.gap_ratio in self.gap_band

    @property
    def passed(self) -> bool:
        return self.comparable and self.gap_preserved

    def describe(self) -> str:
        mark = {True: 'pass', False: 'FAIL'}
        return (f'buggy-time ratio {self.buggy_ratio:.3f} in [{self.buggy_band.low}, {self.buggy_band.high}]: '
                f'{mark[self.comparable]}\n'
                f'buggy/oracle gap ratio {self.gap_ratio:.3f} in [{self.gap_band.low}, {self.gap_band.high}]: '
                f'{mark[self.gap_preserved]}')


def reduction_verdict(original: tuple[float, float], reduced: tuple[float, float],
                      buggy_band: ToleranceBand = ToleranceBand(),
                      gap_band: ToleranceBand = ToleranceBand()) -> ReductionVerdict:
    """Verdict from (buggy, oracle) median summaries."""
    ob, oo = original
    rb, ro = reduced
    return ReductionVerdict(rb / ob, (rb / ro) / (ob / oo), buggy_band, gap_band)


def validate_reduction(original: Path, reduced: Path, buggy: RuntimeSpec, oracle: RuntimeSpec,
                       buggy_band: ToleranceBand = ToleranceBand(),
                       gap_band: ToleranceBand = ToleranceBand(),
                       repetitions: int = DEFAULT_REPETITIONS,
                       warmups: int = DEFAULT_WARMUPS) -> ReductionVerdict:
    medians = {}
    for label, path in (('original', original), ('reduced', reduced)):
        for spec in (buggy, oracle):
            outcome = measure_execution(spec, path, repetitions, warmups)
            medians[label, spec.role] = outcome.timing.median
    verdict = reduction_verdict(
        (medians['original', buggy.role], medians['original', oracle.role]),
        (medians['reduced', buggy.role], medians['reduced', oracle.role]),
        buggy_band, gap_band,
    )
    log.info('reduction check: buggy ratio %.3f, gap ratio %.3f -> %s',
             verdict.buggy_ratio, verdict.gap_ratio, 'pass' if verdict.passed else 'fail')
    return verdict
