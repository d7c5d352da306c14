"""Exact counterfactual ground truth for the effect estimators.

A DiscreteScm is the model T -> X -> Y, T -> Y with explicit noise:

* X = f_X(t, u_x): inverse transform of a uniform u_x through the cumulative
  row p_x_given_t[t].
* Y = f_Y(t, x, u_y) = [u_y < p_y_given_tx[t][x]] with u_y uniform and
  independent of u_x.

exact_effects integrates the counterfactuals over this noise in exact
rational arithmetic. The observational mediation formulas should reproduce
it for every model, which is what validate_oracle checks.
"""

import logging
import math
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from datetime import date
from fractions import Fraction
from pathlib import Path
from typing import BinaryIO, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError

from cfr_mediation.cohort import align, case_demographic, rate_table
from cfr_mediation.config import settings
from cfr_mediation.effects import Arm, mediation_formulas, nde, nie, resolve_policy, tce, PolicyLike
from cfr_mediation.errors import InvalidScm
from cfr_mediation.models import (
    AgeBand,
    BandSchema,
    DiscreteScm,
    EffectSpread,
    MediationEffects,
    OracleReport,
    ReplicateStudy,
    StratifiedCohort,
    SyntheticCohortPair,
    UndefinedBandPolicy,
)

logger = logging.getLogger(__name__)

SYNTHETIC_DATE = date(1970, 1, 1)

SeedLike = Union[int, np.random.SeedSequence]


def build_scm(
    p_x_given_t: Sequence[Sequence[float]],
    p_y_given_tx: Sequence[Sequence[float]],
    undefined_cells: Sequence[tuple[int, int]] = (),
) -> DiscreteScm:
    """DiscreteScm from nested sequences; invalid tables raise InvalidScm"""
    try:
        rows_x = tuple(tuple(float(p) for p in row) for row in p_x_given_t)
        rows_y = tuple(tuple(float(p) for p in row) for row in p_y_given_tx)
        if len(rows_x) != 2 or len(rows_y) != 2:
            raise InvalidScm("tables need one row per treatment arm (2 rows)")
        return DiscreteScm(
            x_arity=len(rows_x[0]),
            p_x_given_t=rows_x,
            p_y_given_tx=rows_y,
            undefined_cells=tuple(undefined_cells),
        )
    except ValidationError as e:
        raise InvalidScm(e.errors()[0]["msg"]) from None


def _generator(seed: SeedLike) -> np.random.Generator:
    sequence = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.PCG64(sequence))


def child_seeds(seed: int, count: int) -> list[int]:
    """Independent 64-bit seeds spawned from one root seed"""
    return [
        int(child.generate_state(1, np.uint64)[0])
        for child in np.random.SeedSequence(seed).spawn(count)
    ]


def random_scm(k: int, seed: SeedLike) -> DiscreteScm:
    """Mediator rows flat on the simplex, outcome probabilities uniform"""
    if k < 1:
        raise InvalidScm(f"mediator arity must be at least 1, got {k}")
    rng = _generator(seed)
    p_x = rng.dirichlet(np.ones(k), size=2)
    p_y = rng.uniform(size=(2, k))
    return build_scm(p_x.tolist(), p_y.tolist())


def moderation_scm() -> DiscreteScm:
    """Treatment only works on the active mediator level, which only treatment reaches"""
    return build_scm([[1.0, 0.0], [0.0, 1.0]], [[0.0, 0.0], [0.0, 1.0]])


def additive_scm(
    p_x_given_t: Sequence[Sequence[float]], baseline: Sequence[float], treatment_shift: float
) -> DiscreteScm:
    """Outcome probability baseline[x] + t * treatment_shift, so no interaction"""
    p_y = [list(baseline), [b + treatment_shift for b in baseline]]
    return build_scm(p_x_given_t, p_y)


def corner_scms(k: int) -> list[DiscreteScm]:
    """Deterministic mechanisms, degenerate rows and the smallest models"""
    one_hot = [[1.0 if x == j else 0.0 for x in range(k)] for j in (0, k - 1)]
    uniform = [1.0 / k] * k
    uniform[-1] = 1.0 - math.fsum(uniform[:-1])
    alternating = [[float((x + t) % 2) for x in range(k)] for t in (0, 1)]
    scms = [
        build_scm(one_hot, alternating),
        build_scm([uniform, uniform], [[0.2] * k, [0.7] * k]),
        build_scm(one_hot, [[0.3] * k, [0.3] * k]),
        build_scm([uniform, one_hot[1]], [[0.0] * k, [0.0] * k]),
        build_scm([uniform, one_hot[0]], [[1.0] * k, [1.0] * k]),
        build_scm([[1.0], [1.0]], [[0.25], [0.75]]),
        moderation_scm(),
    ]
    return scms


def reversed_scm(scm: DiscreteScm) -> DiscreteScm:
    """The same model with the treatment arms swapped"""
    return DiscreteScm(
        x_arity=scm.x_arity,
        p_x_given_t=(scm.p_x_given_t[1], scm.p_x_given_t[0]),
        p_y_given_tx=(scm.p_y_given_tx[1], scm.p_y_given_tx[0]),
        undefined_cells=tuple((1 - t, x) for t, x in scm.undefined_cells),
    )


def _cumulative(row: Sequence[float]) -> list[Fraction]:
    exact = [Fraction(p) for p in row]
    total = sum(exact)
    running, edges = Fraction(0), []
    for p in exact:
        running += p / total
        edges.append(running)
    return edges


def _mediator(edges: list[Fraction], u: Fraction) -> int:
    return bisect_right(edges, u)


def _outcome_mean(p: Fraction, cuts: list[Fraction]) -> Fraction:
    """Integral over u_y of [u_y < p] on the shared partition of [0, 1)"""
    mean = Fraction(0)
    for a, b in zip(cuts, cuts[1:]):
        if a < p:
            mean += b - a
    return mean


def exact_effects(scm: DiscreteScm) -> MediationEffects:
    """TCE, CDE per level, NDE and NIE by integrating the counterfactuals over the noise"""
    k = scm.x_arity
    p_y = [[Fraction(p) for p in row] for row in scm.p_y_given_tx]
    cuts = sorted({Fraction(0), Fraction(1), *[p for row in p_y for p in row]})
    outcome = [[_outcome_mean(p, cuts) for p in row] for row in p_y]

    edges = [_cumulative(scm.p_x_given_t[0]), _cumulative(scm.p_x_given_t[1])]
    breaks = sorted({Fraction(0), *edges[0], *edges[1]})
    # E[Y_{t, X_s}] for t, s in {0, 1}
    means = {(t, s): Fraction(0) for t in (0, 1) for s in (0, 1)}
    for a, b in zip(breaks, breaks[1:]):
        if b == a:
            continue
        mid = (a + b) / 2
        levels = (min(_mediator(edges[0], mid), k - 1), min(_mediator(edges[1], mid), k - 1))
        for t in (0, 1):
            for s in (0, 1):
                means[(t, s)] += (b - a) * outcome[t][levels[s]]

    base = means[(0, 0)]
    return MediationEffects(
        tce=float(means[(1, 1)] - base),
        cde=tuple(float(outcome[1][x] - outcome[0][x]) for x in range(k)),
        nde=float(means[(1, 0)] - base),
        nie=float(means[(0, 1)] - base),
    )


def level_labels(k: int) -> tuple[str, ...]:
    return level_schema(k).labels


def level_schema(k: int) -> BandSchema:
    """Mediator levels as ten-year bands, the last one open-ended"""
    bands = [AgeBand(lower=10 * x, upper=10 * x + 9) for x in range(k - 1)]
    bands.append(AgeBand(lower=10 * (k - 1)))
    return BandSchema(bands=tuple(bands))


def _arms(scm: DiscreteScm) -> tuple[Arm, Arm]:
    undefined = set(scm.undefined_cells)
    arms = []
    for t in (0, 1):
        rates = tuple(
            None if (t, x) in undefined else p for x, p in enumerate(scm.p_y_given_tx[t])
        )
        arms.append(Arm(f"T={t}", scm.p_x_given_t[t], rates))
    return arms[0], arms[1]


def mediation_formula_effects(scm: DiscreteScm, policy: PolicyLike = None) -> MediationEffects:
    """The same effects from the model's conditionals through the observational formulas"""
    control, treatment = _arms(scm)
    labels = level_labels(scm.x_arity)
    return mediation_formulas(control, treatment, labels, resolve_policy(policy))


def fit_scm_from_cohorts(control: StratifiedCohort, treatment: StratifiedCohort) -> DiscreteScm:
    """Empirical conditionals as mechanism tables; empty bands get a flagged placeholder"""
    align(control.band_schema, treatment.band_schema)
    p_x, p_y, undefined = [], [], []
    for t, cohort in enumerate((control, treatment)):
        p_x.append(case_demographic(cohort).weights)
        rates = rate_table(cohort).rates
        p_y.append(tuple(0.0 if r is None else r for r in rates))
        undefined.extend((t, x) for x, r in enumerate(rates) if r is None)
    return build_scm(p_x, p_y, undefined)


def max_discrepancy(a: MediationEffects, b: MediationEffects) -> float:
    gaps = [abs(a.tce - b.tce), abs(a.nde - b.nde), abs(a.nie - b.nie)]
    gaps.extend(abs(x - y) for x, y in zip(a.cde, b.cde) if x is not None and y is not None)
    return max(gaps)


def subtractivity_residuals(scm: DiscreteScm) -> tuple[float, float]:
    """Both subtractivity identities on the exact counterfactual effects"""
    forward = exact_effects(scm)
    backward = exact_effects(reversed_scm(scm))
    return (
        abs(forward.tce - (forward.nde - backward.nie)),
        abs(forward.tce - (forward.nie - backward.nde)),
    )


def sample_cohorts(scm: DiscreteScm, n_per_arm: int, seed: int) -> SyntheticCohortPair:
    """Draw n cases per arm from P(X | T), then deaths per level from P(Y | T, X)"""
    if n_per_arm < 1:
        raise ValueError(f"n_per_arm must be at least 1, got {n_per_arm}")
    rng = _generator(seed)
    schema = level_schema(scm.x_arity)
    cohorts = []
    for t in (0, 1):
        p_x = np.asarray(scm.p_x_given_t[t], dtype=float)
        cases = rng.multinomial(n_per_arm, p_x / p_x.sum())
        deaths = rng.binomial(cases, np.asarray(scm.p_y_given_tx[t], dtype=float))
        cohorts.append(
            StratifiedCohort(
                label=f"T={t}",
                report_date=SYNTHETIC_DATE,
                source=f"scm sample, seed {seed}",
                band_schema=schema,
                cases=tuple(int(n) for n in cases),
                deaths=tuple(int(d) for d in deaths),
            )
        )
    return SyntheticCohortPair(control=cohorts[0], treatment=cohorts[1], n_per_arm=n_per_arm, seed=seed)


def estimate_effects(pair: SyntheticCohortPair, policy: PolicyLike = UndefinedBandPolicy.ZERO) -> tuple[float, float, float]:
    """(TCE, NDE, NIE) of a sampled pair through the cohort estimators"""
    return (
        tce(pair.control, pair.treatment).value,
        nde(pair.control, pair.treatment, policy).value,
        nie(pair.control, pair.treatment, policy).value,
    )


def _spread(exact: float, estimate: float, replicates: np.ndarray) -> EffectSpread:
    return EffectSpread(
        exact=exact,
        estimate=estimate,
        standard_error=float(np.std(replicates, ddof=1)) if replicates.size > 1 else 0.0,
        median_abs_error=float(np.median(np.abs(replicates - exact))),
    )


def replicate_study(
    scm: DiscreteScm,
    n_per_arm: int,
    replicates: int = 200,
    seed: Optional[int] = None,
    workers: int = 1,
) -> ReplicateStudy:
    """Estimate on a primary sample, spread from replicate samples.

    The primary sample and the replicate seeds come from separate children of
    the seed, never from the seed itself, so callers may build the model from it.
    """
    seed = settings.default_seed if seed is None else seed
    exact = exact_effects(scm)
    primary_seed, replicate_root = child_seeds(seed, 2)
    primary = estimate_effects(sample_cohorts(scm, n_per_arm, primary_seed))
    seeds = child_seeds(replicate_root, replicates)

    def run(replicate_seed: int) -> tuple[int, tuple[float, float, float]]:
        return replicate_seed, estimate_effects(sample_cohorts(scm, n_per_arm, replicate_seed))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(s) for s in seeds]
    results.sort(key=lambda item: item[0])
    table = np.array([estimates for _, estimates in results])

    return ReplicateStudy(
        n_per_arm=n_per_arm,
        replicates=replicates,
        seed=seed,
        tce=_spread(exact.tce, primary[0], table[:, 0]),
        nde=_spread(exact.nde, primary[1], table[:, 1]),
        nie=_spread(exact.nie, primary[2], table[:, 2]),
    )


def validate_oracle(
    k: int,
    instances: int,
    seed: Optional[int] = None,
    sample_n: Optional[int] = None,
    replicates: int = 200,
    tolerance: Optional[float] = None,
) -> OracleReport:
    """Exact enumeration against the mediation formulas over random and corner-case models"""
    if k < 1:
        raise InvalidScm(f"mediator arity must be at least 1, got {k}")
    if instances < 0:
        raise InvalidScm(f"instance count must be nonnegative, got {instances}")
    seed = settings.default_seed if seed is None else seed
    tolerance = settings.oracle_tolerance if tolerance is None else tolerance
    logger.info(f"Validating oracle: k={k}, {instances} random models, seed {seed}")

    model_root, sampling_seed = child_seeds(seed, 2)
    scms = [random_scm(k, child) for child in np.random.SeedSequence(model_root).spawn(instances)]
    corners = corner_scms(k)
    worst, worst_identity = 0.0, 0.0
    for i, scm in enumerate(scms + corners, start=1):
        worst = max(worst, max_discrepancy(exact_effects(scm), mediation_formula_effects(scm)))
        worst_identity = max(worst_identity, *subtractivity_residuals(scm))
        if i % 250 == 0:
            logger.info(f"Checked {i} models, max discrepancy so far {worst:.3e}")

    sampling = None
    if sample_n is not None:
        target = scms[0] if scms else random_scm(k, model_root)
        sampling = replicate_study(target, sample_n, replicates, sampling_seed)

    report = OracleReport(
        k=k,
        instances=instances,
        seed=seed,
        max_discrepancy=worst,
        max_subtractivity_residual=worst_identity,
        corner_cases=len(corners),
        tolerance=tolerance,
        sampling=sampling,
    )
    verdict = "passed" if report.passed else "FAILED"
    logger.info(f"Oracle suite {verdict}: max discrepancy {worst:.3e}, max identity residual {worst_identity:.3e}")
    return report


_TABLES = {"p_x": 0, "p_y": 1}


def parse_scm_file(source: Union[str, Path, bytes, BinaryIO]) -> DiscreteScm:
    """Read the `#scm,<k>` format: one `table,t,x,value` row per entry"""
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read().decode("utf-8")

    k: Optional[int] = None
    tables: list[list[list[Optional[float]]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or (line.startswith("#") and not line.startswith("#scm,")):
            continue
        if line.startswith("#scm,"):
            if k is not None:
                raise InvalidScm(f"line {lineno}: duplicate #scm header")
            try:
                k = int(line.split(",", 1)[1])
            except ValueError:
                raise InvalidScm(f"line {lineno}: malformed header {line!r}") from None
            if k < 1:
                raise InvalidScm(f"line {lineno}: mediator arity must be at least 1")
            tables = [[[None] * k for _ in (0, 1)] for _ in _TABLES]
            continue
        if k is None:
            raise InvalidScm(f"line {lineno}: row before the #scm header")
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 4 or fields[0] not in _TABLES:
            raise InvalidScm(f"line {lineno}: expected p_x|p_y,t,x,value")
        try:
            t, x, value = int(fields[1]), int(fields[2]), float(fields[3])
        except ValueError:
            raise InvalidScm(f"line {lineno}: bad number in {line!r}") from None
        if t not in (0, 1) or not 0 <= x < k:
            raise InvalidScm(f"line {lineno}: cell ({t}, {x}) outside a {k}-level model")
        cell = tables[_TABLES[fields[0]]][t]
        if cell[x] is not None:
            raise InvalidScm(f"line {lineno}: duplicate entry {fields[0]}({t}, {x})")
        cell[x] = value

    if k is None:
        raise InvalidScm("missing #scm header")
    for name, index in _TABLES.items():
        for t in (0, 1):
            missing = [x for x, v in enumerate(tables[index][t]) if v is None]
            if missing:
                raise InvalidScm(f"{name} row {t} is missing levels {missing}")
    return build_scm(tables[0], tables[1])


def serialize_scm(scm: DiscreteScm) -> str:
    lines = [f"#scm,{scm.x_arity}"]
    for name, table in (("p_x", scm.p_x_given_t), ("p_y", scm.p_y_given_tx)):
        for t, row in enumerate(table):
            lines.extend(f"{name},{t},{x},{value!r}" for x, value in enumerate(row))
    return "\n".join(lines) + "\n"
