import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import stats as scipy_stats

from cfr_mediation.effects import pairwise_matrix
from cfr_mediation.errors import CorrelationInputError, UnknownLabel, ZeroVariance
from cfr_mediation.models import EffectKind, PairwiseEffectMatrix, PValueMethod, UndefinedBandPolicy
from cfr_mediation.stats import (
    CORRELATION_TESTS,
    PERMUTATION_BLOCK,
    align_scores,
    correlate,
    pearson,
    permutation_counts,
    rank_by_avg_treatment,
    rank_delta,
    sign_discordance,
    spearman,
)

from conftest import NDE_ORDER, NIE_ORDER

XS = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
YS = [2.0, 1.0, 4.0, 3.0, 7.0, 7.0, 5.0]


@pytest.fixture(scope="module")
def matrices(countries):
    return (
        pairwise_matrix(countries.cohorts, EffectKind.NDE),
        pairwise_matrix(countries.cohorts, EffectKind.NIE),
    )


def test_pearson_matches_scipy():
    result = pearson(XS, YS)
    expected = scipy_stats.pearsonr(XS, YS)
    assert result.coefficient == pytest.approx(expected[0], abs=1e-12)
    assert result.p_value == pytest.approx(expected[1], rel=1e-6)
    assert result.n == 7


def test_spearman_matches_scipy_with_ties():
    result = spearman(XS, YS)
    expected = scipy_stats.spearmanr(XS, YS)
    assert result.coefficient == pytest.approx(expected[0], abs=1e-12)
    assert result.p_value == pytest.approx(expected[1], rel=1e-6)


def test_perfect_correlation():
    result = spearman([1, 2, 3, 4], [10, 20, 30, 40])
    assert result.coefficient == pytest.approx(1.0, abs=1e-12)
    assert result.p_value < 1e-6


@pytest.mark.parametrize(
    "xs, ys, error",
    [
        ([1, 2, 3], [1, 2], CorrelationInputError),
        ([1, 2], [1, 2], CorrelationInputError),
        ([1, 2, float("nan")], [1, 2, 3], CorrelationInputError),
        ([1, 1, 1], [1, 2, 3], ZeroVariance),
        ([1, 2, 3], [4, 4, 4], ZeroVariance),
    ],
)
def test_bad_inputs(xs, ys, error):
    with pytest.raises(error):
        pearson(xs, ys)
    with pytest.raises(error):
        spearman(xs, ys)


def test_zero_variance_names_the_input():
    with pytest.raises(ZeroVariance) as excinfo:
        spearman([1, 2, 3], [5, 5, 5])
    assert excinfo.value.which == "ys"


def test_permutation_p_value():
    method = PValueMethod(kind="permutation", seed=42, reps=999)
    result = pearson(XS, YS, method)
    assert 1 / 1000 <= result.p_value <= 1.0
    assert pearson(XS, YS, method) == result
    assert pearson(XS, YS, method, workers=3) == result
    # a perfect association is never beaten, only matched
    perfect = spearman(list(range(8)), list(range(8)), method)
    assert perfect.p_value >= 1 / 1000
    assert perfect.p_value < 0.01


def test_permutation_p_values_agree_across_seeds():
    a = pearson(XS, YS, PValueMethod(kind="permutation", seed=1, reps=500))
    b = pearson(XS, YS, PValueMethod(kind="permutation", seed=2, reps=500))
    assert a.coefficient == b.coefficient
    assert a.p_value == pytest.approx(b.p_value, abs=0.1)


def test_permutation_blocks_depend_only_on_seed_and_index():
    x, y = np.array(XS), np.array(YS)
    observed = pearson(XS, YS).coefficient
    shorter = permutation_counts(x, y, observed, seed=5, reps=2 * PERMUTATION_BLOCK)
    longer = permutation_counts(x, y, observed, seed=5, reps=2 * PERMUTATION_BLOCK + 500)
    assert len(longer) == 3
    assert longer[:2] == shorter
    assert permutation_counts(x, y, observed, seed=5, reps=2 * PERMUTATION_BLOCK + 500, workers=3) == longer


@pytest.mark.parametrize("test", CORRELATION_TESTS)
def test_t_approximation_agrees_with_permutation(test, countries, median_ages):
    t_approx = correlate(test, countries.cohorts, median_ages.values)
    method = PValueMethod(kind="permutation", seed=11, reps=20000)
    permuted = correlate(test, countries.cohorts, median_ages.values, method)
    assert permuted.primary.coefficient == t_approx.primary.coefficient
    assert permuted.primary.p_value == pytest.approx(t_approx.primary.p_value, abs=0.02)


def test_rankings(matrices):
    nde_matrix, nie_matrix = matrices
    nde_ranking = rank_by_avg_treatment(nde_matrix)
    nie_ranking = rank_by_avg_treatment(nie_matrix)
    assert list(nde_ranking.labels) == NDE_ORDER
    assert list(nie_ranking.labels) == NIE_ORDER
    assert not any(nde_ranking.tied)


def test_rank_deltas(matrices):
    deltas = rank_delta(*(rank_by_avg_treatment(m) for m in matrices))
    assert deltas["Spain"] == -4
    assert deltas["Portugal"] == -3
    assert deltas["China"] == -3
    assert deltas["Colombia"] == 7
    assert deltas["South Africa"] == 6
    assert deltas["Argentina"] == 5
    assert sum(deltas.values()) == 0


def test_align_scores_needs_every_label(matrices):
    ranking = rank_by_avg_treatment(matrices[1])
    with pytest.raises(UnknownLabel):
        align_scores(ranking, {"Italy": 45.4})


def test_sign_discordance(matrices):
    result = sign_discordance(*matrices)
    assert result.count == 64
    assert result.total == 132
    assert result.zero_pairs == ()


def test_nde_vs_nie_rank(countries):
    report = correlate("nde-vs-nie-rank", countries.cohorts)
    assert report.primary.method == "spearman"
    assert report.primary.coefficient == pytest.approx(1 - 6 * 276 / 1716, abs=1e-12)
    assert report.rank_deltas["Diamond Princess"] == -11


def test_nie_rank_vs_median_age(countries, median_ages):
    report = correlate("nie-rank-vs-median-age", countries.cohorts, median_ages.values)
    assert report.primary.method == "spearman"
    assert report.primary.coefficient == pytest.approx(1 - 6 * 34 / 1716, abs=1e-12)
    assert report.primary.coefficient >= 0.85
    assert report.secondary.method == "pearson"


def test_pairwise_nde_vs_nie(countries):
    report = correlate("pairwise-nde-vs-nie", countries.cohorts)
    assert report.primary.method == "pearson"
    assert report.primary.n == 132
    assert report.primary.coefficient == pytest.approx(0.1738, abs=5e-4)
    assert report.primary.p_value == pytest.approx(0.046, abs=2e-3)
    assert report.discordance.count == 64


def test_correlate_rejects_unknown_test(countries):
    with pytest.raises(CorrelationInputError):
        correlate("nde-vs-age", countries.cohorts)
    with pytest.raises(CorrelationInputError):
        correlate("nie-rank-vs-median-age", countries.cohorts)


samples = st.lists(st.integers(-50, 50), min_size=3, max_size=20)


@given(samples, samples)
def test_spearman_ignores_monotone_transforms(xs, ys):
    n = min(len(xs), len(ys))
    xs, ys = xs[:n], ys[:n]
    assume(len(set(xs)) > 1 and len(set(ys)) > 1)
    transformed = [x**3 + 7 for x in xs]
    assert spearman(transformed, ys).coefficient == spearman(xs, ys).coefficient


@given(samples, samples, st.integers(-10, 10).filter(bool), st.integers(-100, 100))
def test_pearson_is_affine_invariant(xs, ys, scale, shift):
    n = min(len(xs), len(ys))
    xs, ys = xs[:n], ys[:n]
    assume(len(set(xs)) > 1 and len(set(ys)) > 1)
    r = pearson(xs, ys).coefficient
    moved = pearson([scale * x + shift for x in xs], ys).coefficient
    assert moved == pytest.approx(r if scale > 0 else -r, abs=1e-9)


def test_flat_matrix_ranks_alphabetically():
    zeros = ((0.0, 0.0, 0.0),) * 3
    matrix = PairwiseEffectMatrix(
        kind=EffectKind.NDE,
        labels=("Spain", "Italy", "China"),
        values=zeros,
        coerced=((False,) * 3,) * 3,
        ordering_rule="as given",
        policy=UndefinedBandPolicy.ZERO,
    )
    ranking = rank_by_avg_treatment(matrix)
    assert ranking.labels == ("China", "Italy", "Spain")
    assert all(ranking.tied)


def test_self_comparisons(matrices):
    nde_matrix, _ = matrices
    ranking = rank_by_avg_treatment(nde_matrix)
    assert set(rank_delta(ranking, ranking).values()) == {0}
    assert sign_discordance(nde_matrix, nde_matrix).count == 0
    assert pearson(XS, [-x for x in XS]).coefficient == pytest.approx(-1.0, abs=1e-12)
