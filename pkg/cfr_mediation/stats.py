import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy import stats as scipy_stats

from cfr_mediation.effects import PolicyLike, pairwise_matrix
from cfr_mediation.errors import CorrelationInputError, UnknownLabel, ZeroVariance
from cfr_mediation.models import (
    CorrelationReport,
    CorrelationResult,
    DiscordanceResult,
    EffectKind,
    PairwiseEffectMatrix,
    PValueMethod,
    Ranking,
    StratifiedCohort,
)

logger = logging.getLogger(__name__)

CORRELATION_TESTS = ("nde-vs-nie-rank", "nie-rank-vs-median-age", "pairwise-nde-vs-nie")

# Relative slack when comparing permuted statistics with the observed one
_TIE_SLACK = 1e-12

# Permutations per spawned stream; part of the p-value, so not configurable
PERMUTATION_BLOCK = 1000


def rank_by_avg_treatment(matrix: PairwiseEffectMatrix) -> Ranking:
    """Most negative mean effect as treatment ranks first; ties alphabetical"""
    means = matrix.row_means()
    labels = sorted(means, key=lambda label: (means[label], label))
    scores = [means[label] for label in labels]
    tied = [scores.count(score) > 1 for score in scores]
    return Ranking(
        criterion=f"mean {matrix.kind.value} as treatment",
        labels=tuple(labels),
        scores=tuple(scores),
        ascending=True,
        tied=tuple(tied),
    )


def rank_delta(first: Ranking, second: Ranking) -> dict[str, int]:
    """Rank in the first ranking minus rank in the second, per label"""
    if set(first.labels) != set(second.labels):
        raise CorrelationInputError("rankings cover different labels")
    return {label: first.rank(label) - second.rank(label) for label in first.labels}


def align_scores(
    ranking: Union[Ranking, Mapping[str, float]], values: Mapping[str, float]
) -> tuple[list[str], list[float], list[float]]:
    """Pair each ranked label's score with its value in a second table"""
    if isinstance(ranking, Ranking):
        pairs = list(zip(ranking.labels, ranking.scores))
    else:
        pairs = sorted(ranking.items())
    labels, xs, ys = [], [], []
    for label, score in pairs:
        if label not in values:
            raise UnknownLabel(label, values)
        labels.append(label)
        xs.append(score)
        ys.append(values[label])
    return labels, xs, ys


def _check_inputs(xs: Sequence[float], ys: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    if len(xs) != len(ys):
        raise CorrelationInputError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 3:
        raise CorrelationInputError(f"need at least 3 observations, got {len(xs)}")
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise CorrelationInputError("observations must be finite")
    for name, values in (("xs", x), ("ys", y)):
        if np.all(values == values[0]):
            raise ZeroVariance(name)
    return x, y


def _permutation_block(x: np.ndarray, y: np.ndarray, observed: float, size: int, sequence) -> int:
    rng = np.random.Generator(np.random.PCG64(sequence))
    shuffled = rng.permuted(np.tile(y, (size, 1)), axis=1)
    xc = x - x.mean()
    yc = shuffled - shuffled.mean(axis=1, keepdims=True)
    r = (yc @ xc) / (np.linalg.norm(xc) * np.linalg.norm(yc, axis=1))
    return int(np.count_nonzero(np.abs(r) >= abs(observed) * (1.0 - _TIE_SLACK)))


def permutation_counts(
    x: np.ndarray, y: np.ndarray, observed: float, seed: int, reps: int, workers: int = 1
) -> list[int]:
    """Permuted statistics at least as extreme as observed, per block of PERMUTATION_BLOCK reps.

    Block i always draws from child i of SeedSequence(seed), so the counts depend
    on (seed, reps) only; workers change how blocks are scheduled, not what they draw.
    """
    sizes = [min(PERMUTATION_BLOCK, reps - start) for start in range(0, reps, PERMUTATION_BLOCK)]
    jobs = list(zip(sizes, np.random.SeedSequence(seed).spawn(len(sizes))))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda job: _permutation_block(x, y, observed, *job), jobs))
    return [_permutation_block(x, y, observed, size, sequence) for size, sequence in jobs]


def _p_value(
    x: np.ndarray, y: np.ndarray, r: float, t_approx_p: float, method: PValueMethod, workers: int
) -> float:
    if method.kind == "permutation":
        counts = permutation_counts(x, y, r, method.seed, method.reps, workers)
        return (1 + sum(counts)) / (method.reps + 1)
    return min(1.0, t_approx_p)


def pearson(
    xs: Sequence[float], ys: Sequence[float], p_method: Optional[PValueMethod] = None, workers: int = 1
) -> CorrelationResult:
    x, y = _check_inputs(xs, ys)
    method = p_method or PValueMethod()
    result = scipy_stats.pearsonr(x, y)
    r = float(result.statistic)
    return CorrelationResult(
        method="pearson",
        coefficient=r,
        p_value=_p_value(x, y, r, float(result.pvalue), method, workers),
        p_method=method,
        n=len(x),
    )


def spearman(
    xs: Sequence[float], ys: Sequence[float], p_method: Optional[PValueMethod] = None, workers: int = 1
) -> CorrelationResult:
    """Pearson correlation of tie-averaged ranks; permutations shuffle the ranks"""
    x, y = _check_inputs(xs, ys)
    method = p_method or PValueMethod()
    result = scipy_stats.spearmanr(x, y)
    rho = float(result.statistic)
    rx = scipy_stats.rankdata(x, method="average")
    ry = scipy_stats.rankdata(y, method="average")
    return CorrelationResult(
        method="spearman",
        coefficient=rho,
        p_value=_p_value(rx, ry, rho, float(result.pvalue), method, workers),
        p_method=method,
        n=len(x),
    )


def sign_discordance(first: PairwiseEffectMatrix, second: PairwiseEffectMatrix) -> DiscordanceResult:
    """Ordered pairs whose two effects have strictly opposite signs"""
    if set(first.labels) != set(second.labels):
        raise CorrelationInputError("matrices must cover the same cohorts")
    pairs, zeros = [], []
    second_values = {(t, c): v for t, c, v in second.off_diagonal()}
    for treatment, control, a in first.off_diagonal():
        b = second_values[(treatment, control)]
        if a == 0.0 or b == 0.0:
            zeros.append((treatment, control))
        elif (a > 0) != (b > 0):
            pairs.append((treatment, control))
    total = len(first.labels) * (len(first.labels) - 1)
    return DiscordanceResult(count=len(pairs), total=total, pairs=tuple(pairs), zero_pairs=tuple(zeros))


def correlate(
    test: str,
    cohorts: Sequence[StratifiedCohort],
    median_ages: Optional[Mapping[str, float]] = None,
    p_method: Optional[PValueMethod] = None,
    policy: PolicyLike = None,
    workers: int = 1,
) -> CorrelationReport:
    """Run one of the named association tests over a cohort set"""
    if test not in CORRELATION_TESTS:
        raise CorrelationInputError(f"unknown test {test!r}; choose from {', '.join(CORRELATION_TESTS)}")
    nie_matrix = pairwise_matrix(cohorts, EffectKind.NIE, policy, workers)
    nie_ranking = rank_by_avg_treatment(nie_matrix)

    if test == "nie-rank-vs-median-age":
        if median_ages is None:
            raise CorrelationInputError("median ages are required for this test")
        _, xs, ys = align_scores(nie_ranking, median_ages)
        primary = spearman(xs, ys, p_method, workers)
        secondary = pearson(xs, ys, p_method, workers)
        report = CorrelationReport(test=test, primary=primary, secondary=secondary)
    else:
        nde_matrix = pairwise_matrix(cohorts, EffectKind.NDE, policy, workers)
        if test == "nde-vs-nie-rank":
            nde_ranking = rank_by_avg_treatment(nde_matrix)
            nie_scores = dict(zip(nie_ranking.labels, nie_ranking.scores))
            _, xs, ys = align_scores(nde_ranking, nie_scores)
            report = CorrelationReport(
                test=test,
                primary=spearman(xs, ys, p_method, workers),
                rank_deltas=rank_delta(nde_ranking, nie_ranking),
            )
        else:
            nie_values = {(t, c): v for t, c, v in nie_matrix.off_diagonal()}
            triples = nde_matrix.off_diagonal()
            xs = [v for _, _, v in triples]
            ys = [nie_values[(t, c)] for t, c, _ in triples]
            report = CorrelationReport(
                test=test,
                primary=pearson(xs, ys, p_method, workers),
                discordance=sign_discordance(nde_matrix, nie_matrix),
            )
    logger.info(
        f"Correlation test {test}: {report.primary.method} {report.primary.coefficient:.4f}, "
        f"p={report.primary.p_value:.3g}"
    )
    return report
