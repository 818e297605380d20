import math
import random

import pytest

from warplens.errors import ConfigError, NonPositiveRatio, ZeroTiming
from warplens.harness import ExecutionOutcome, TimingSample
from warplens.scoring import (
    Disqualified, MutantScore, ScoreMode, ScoreWeights, filter_invalid, func_sim_score,
    perf_diff_score, rank_mutants, score_mutant, score_table,
)


def sample(*runs, unstable=False):
    return TimingSample(tuple(runs), clock='pseudo', unstable=unstable)


def scored(ordinal, total, sim=0.5, perf=0.5):
    return MutantScore(ordinal, 'OperatorSubst', 1.0, 1.0, perf, sim, total)


def test_formula_values():
    assert perf_diff_score(2.0) == pytest.approx(1 - math.exp(-1), abs=1e-9)
    assert perf_diff_score(0.5) == pytest.approx(0.75, abs=1e-9)
    assert func_sim_score(2.0) == pytest.approx(math.exp(-1), abs=1e-9)
    assert func_sim_score(1.01) == pytest.approx(math.exp(-0.01), abs=1e-9)
    assert func_sim_score(0.5) == pytest.approx(0.25, abs=1e-9)


def test_unit_ratio_is_the_boundary():
    assert perf_diff_score(1.0) == 0.0
    assert func_sim_score(1.0) == 1.0


@pytest.mark.parametrize('ratio', [1 - 1e-9, 1 + 1e-9])
def test_continuous_at_unit_ratio(ratio):
    assert perf_diff_score(ratio) == pytest.approx(0.0, abs=1e-6)
    assert func_sim_score(ratio) == pytest.approx(1.0, abs=1e-6)


def test_scores_stay_in_range():
    rng = random.Random(1234)
    ratios = [rng.uniform(1e-3, 1e3) for _ in range(10_000)]
    assert all(0.0 <= perf_diff_score(r) < 1.0 for r in ratios)
    assert all(0.0 < func_sim_score(r) <= 1.0 for r in ratios)


@pytest.mark.parametrize('ratio', [40.0, 745.0, 1e3])
def test_saturated_ratios_keep_open_ends(ratio):
    assert perf_diff_score(ratio) < 1.0
    assert func_sim_score(ratio) > 0.0


def test_scores_are_monotone():
    rng = random.Random(1234)
    ratios = sorted(rng.uniform(1e-3, 1e3) for _ in range(10_000))
    above = [r for r in ratios if r > 1]
    below = [r for r in ratios if r < 1]

    perf = [perf_diff_score(r) for r in above]
    assert all(a <= b for a, b in zip(perf, perf[1:]))
    perf = [perf_diff_score(r) for r in below]
    assert all(a > b for a, b in zip(perf, perf[1:]))
    sim = [func_sim_score(r) for r in above]
    assert all(a >= b for a, b in zip(sim, sim[1:]))
    sim = [func_sim_score(r) for r in below]
    assert all(a < b for a, b in zip(sim, sim[1:]))


def test_scores_are_strictly_monotone_until_saturation():
    # log-spaced, about 0.7% apart
    grid = [1e-3 * 10 ** (6 * k / 2000) for k in range(2001)]
    perf = [perf_diff_score(r) for r in grid if 1 < r <= 20]
    assert all(a < b for a, b in zip(perf, perf[1:]))
    sim = [func_sim_score(r) for r in grid if 1 < r <= 700]
    assert all(a > b for a, b in zip(sim, sim[1:]))


@pytest.mark.parametrize('perf_ratio, sim_ratio, total', [
    (2.0, 1.0, 0.5 * (1 - math.exp(-1)) + 0.5),
    (7.77, 1.01, 0.5 * (1 - math.exp(-6.77)) + 0.5 * math.exp(-0.01)),
])
def test_weighted_totals(perf_ratio, sim_ratio, total):
    weights = ScoreWeights()
    value = weights.alpha * perf_diff_score(perf_ratio) + weights.beta * func_sim_score(sim_ratio)
    assert value == pytest.approx(total, abs=1e-9)


@pytest.mark.parametrize('ratio', [0.0, -1.0])
def test_non_positive_ratio(ratio):
    with pytest.raises(NonPositiveRatio):
        perf_diff_score(ratio)
    with pytest.raises(NonPositiveRatio):
        func_sim_score(ratio)


def test_score_mutant_from_medians():
    original = (sample(200, 210, 190), sample(100, 100, 100))
    mutant = (sample(100, 101, 99), sample(100, 100, 100, unstable=True))
    score = score_mutant(original, mutant, ordinal=7, rule='OperatorSubst')

    assert score.perf_diff_ratio == 2.0
    assert score.func_sim_ratio == 1.0
    assert score.total == pytest.approx(0.5 * (1 - math.exp(-1)) + 0.5, abs=1e-9)
    assert score.unstable
    assert score.ordinal == 7


@pytest.mark.parametrize('factor', [3.7, 0.01, 1e4])
def test_common_time_scale_keeps_ranking(factor):
    rng = random.Random(99)
    original = (rng.uniform(500, 5000), rng.uniform(500, 5000))
    mutants = [(rng.uniform(50, 6000), rng.uniform(400, 6000)) for _ in range(60)]

    def ranking(scale):
        base = tuple(sample(t * scale, t * scale, t * scale) for t in original)
        scores = [score_mutant(base, tuple(sample(t * scale, t * scale, t * scale) for t in times),
                               ordinal=i)
                  for i, times in enumerate(mutants)]
        return [s.ordinal for s in rank_mutants(scores)]

    assert ranking(factor) == ranking(1.0)


def test_zero_timing():
    original = (sample(0, 0, 0), sample(1, 1, 1))
    with pytest.raises(ZeroTiming):
        score_mutant(original, (sample(1, 1, 1), sample(1, 1, 1)))


@pytest.mark.parametrize('alpha, beta', [(0, 0.5), (0.5, 1.5), (-0.1, 0.5)])
def test_weights_range(alpha, beta):
    with pytest.raises(ConfigError):
        ScoreWeights(alpha, beta)


def test_filter_invalid_reasons():
    good = ExecutionOutcome(0, 'aa')
    outcomes = {
        0: (good, good),
        1: (ExecutionOutcome(124, 'aa', timed_out=True), good),
        2: (good, ExecutionOutcome(3, '', trapped=True)),
        3: (good, ExecutionOutcome(0, 'bb')),
        4: (ExecutionOutcome(1, 'aa'), good),
    }
    qualified, rejected = filter_invalid(good, outcomes, {1: 'OperandSubst'})

    assert qualified == [0]
    assert [(d.ordinal, d.reason) for d in rejected] == [
        (1, 'timeout on buggy'),
        (2, 'trap on oracle'),
        (3, 'oracle output differs from original'),
        (4, 'exit 1 on buggy'),
    ]
    assert rejected[0].rule == 'OperandSubst'


def test_rank_breaks_ties_by_similarity_then_ordinal():
    scores = [scored(3, 0.9, sim=0.8), scored(1, 0.9, sim=0.9), scored(2, 0.9, sim=0.8), scored(0, 0.5)]
    assert [s.ordinal for s in rank_mutants(scores)] == [1, 2, 3, 0]


def test_perf_only_ranking():
    scores = [scored(0, 0.9, perf=0.2), scored(1, 0.4, perf=0.7)]
    assert [s.ordinal for s in rank_mutants(scores, ScoreMode.PERF_ONLY)] == [1, 0]
    assert [s.ordinal for s in rank_mutants(scores)] == [0, 1]


def test_score_table():
    table = score_table([scored(4, 0.75)], [Disqualified(2, 'OperatorDelete', 'trap on buggy')])
    lines = table.splitlines()
    assert lines[0].startswith('rank,ordinal,rule')
    assert lines[1] == '1,4,OperatorSubst,1.000000,1.000000,0.500000,0.500000,0.750000,0,'
    assert lines[2] == ',2,OperatorDelete,,,,,,,trap on buggy'
