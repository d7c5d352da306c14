"""Causal effects of switching from a control cohort to a treatment cohort.

Treatment T selects the cohort (0 = control, 1 = treatment), the age band is
the mediator X and death the outcome Y. With no unobserved common causes the
per-cohort case demographic estimates P(X | T) and the per-band CFR estimates
P(Y = 1 | T, X), so every effect is a sum over bands of these two tables.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, NamedTuple, Optional, Sequence, Union

from cfr_mediation.cohort import align, case_demographic, rate_table, total_cfr
from cfr_mediation.config import settings
from cfr_mediation.errors import UndefinedRate
from cfr_mediation.models import (
    AgeBand,
    CohortSeries,
    EffectEstimate,
    EffectKind,
    EffectSummary,
    EffectTrace,
    MediationEffects,
    PairwiseEffectMatrix,
    SimpsonVerdict,
    StratifiedCohort,
    TracePoint,
    UndefinedBandPolicy,
)

logger = logging.getLogger(__name__)

PolicyLike = Union[UndefinedBandPolicy, str, None]

ORDERING_RULE = "ascending mean effect as treatment over the other cohorts; ties by label"


def resolve_policy(policy: PolicyLike, default: Optional[str] = None) -> UndefinedBandPolicy:
    if policy is None:
        policy = default or settings.undefined_band_policy
    return UndefinedBandPolicy(policy)


class Arm(NamedTuple):
    """One arm of a comparison as P(X | T) weights and P(Y | T, X) rates"""

    name: str
    weights: tuple[float, ...]
    rates: tuple[Optional[float], ...]


def arm_of(cohort: StratifiedCohort) -> Arm:
    return Arm(cohort.label, case_demographic(cohort).weights, rate_table(cohort).rates)


def _rate(arm: Arm, i: int, label: str, policy: UndefinedBandPolicy) -> tuple[float, bool]:
    rate = arm.rates[i]
    if rate is not None:
        return rate, False
    if policy is UndefinedBandPolicy.ERROR:
        raise UndefinedRate(arm.name, label)
    logger.warning(f"Coercing undefined CFR to 0 for {arm.name} in band {label}")
    return 0.0, True


def controlled_direct(
    control: Arm, treatment: Arm, i: int, labels: Sequence[str], policy: UndefinedBandPolicy
) -> tuple[float, bool]:
    r_t, coerced_t = _rate(treatment, i, labels[i], policy)
    r_c, coerced_c = _rate(control, i, labels[i], policy)
    return r_t - r_c, coerced_t or coerced_c


def natural_direct(
    control: Arm, treatment: Arm, labels: Sequence[str], policy: UndefinedBandPolicy
) -> tuple[float, bool]:
    terms, coerced = [], False
    for i, w in enumerate(control.weights):
        if w == 0.0:
            continue
        r_c, flag_c = _rate(control, i, labels[i], policy)
        r_t, flag_t = _rate(treatment, i, labels[i], policy)
        coerced = coerced or flag_c or flag_t
        terms.append(w * (r_t - r_c))
    return math.fsum(terms), coerced


def natural_indirect(
    control: Arm, treatment: Arm, labels: Sequence[str], policy: UndefinedBandPolicy
) -> tuple[float, bool]:
    terms, coerced = [], False
    for i, (w_c, w_t) in enumerate(zip(control.weights, treatment.weights)):
        shift = w_t - w_c
        if shift == 0.0:
            continue
        r_c, flag = _rate(control, i, labels[i], policy)
        coerced = coerced or flag
        terms.append(shift * r_c)
    return math.fsum(terms), coerced


def expected_controlled_direct(
    control: Arm, treatment: Arm, reference: Arm, labels: Sequence[str], policy: UndefinedBandPolicy
) -> tuple[float, bool]:
    terms, coerced = [], False
    for i, w in enumerate(reference.weights):
        if w == 0.0:
            continue
        value, flag = controlled_direct(control, treatment, i, labels, policy)
        coerced = coerced or flag
        terms.append(w * value)
    return math.fsum(terms), coerced


def population_rate(arm: Arm) -> float:
    return math.fsum(w * r for w, r in zip(arm.weights, arm.rates) if w != 0.0)


def mediation_formulas(
    control: Arm, treatment: Arm, labels: Sequence[str], policy: UndefinedBandPolicy
) -> MediationEffects:
    """TCE, CDE per band, NDE and NIE from the two arms' tables.

    CDE entries are None for bands where a rate is undefined and the policy
    is to raise; the other effects raise as usual.
    """
    nde, coerced_nde = natural_direct(control, treatment, labels, policy)
    nie, coerced_nie = natural_indirect(control, treatment, labels, policy)
    cdes, coerced = [], coerced_nde or coerced_nie
    for i in range(len(labels)):
        if policy is UndefinedBandPolicy.ERROR and (
            control.rates[i] is None or treatment.rates[i] is None
        ):
            cdes.append(None)
            continue
        value, flag = controlled_direct(control, treatment, i, labels, policy)
        coerced = coerced or flag
        cdes.append(value)
    return MediationEffects(
        tce=population_rate(treatment) - population_rate(control),
        cde=tuple(cdes),
        nde=nde,
        nie=nie,
        undefined_band_policy_used=coerced,
    )


def tce(control: StratifiedCohort, treatment: StratifiedCohort) -> EffectEstimate:
    """Difference in total CFR"""
    align(control.band_schema, treatment.band_schema)
    # IEEE subtraction is sign-symmetric, so tce(a, b) == -tce(b, a) exactly
    return EffectEstimate(
        kind=EffectKind.TCE,
        control=control.label,
        treatment=treatment.label,
        value=total_cfr(treatment) - total_cfr(control),
    )


def cde(
    control: StratifiedCohort,
    treatment: StratifiedCohort,
    band: Union[AgeBand, str],
    policy: PolicyLike = None,
) -> EffectEstimate:
    """Difference in CFR within one band"""
    schema = align(control.band_schema, treatment.band_schema)
    i = schema.index(band)
    value, coerced = controlled_direct(
        arm_of(control), arm_of(treatment), i, schema.labels, resolve_policy(policy)
    )
    return EffectEstimate(
        kind=EffectKind.CDE,
        control=control.label,
        treatment=treatment.label,
        band=schema.labels[i],
        value=value,
        undefined_band_policy_used=coerced,
    )


def nde(control: StratifiedCohort, treatment: StratifiedCohort, policy: PolicyLike = None) -> EffectEstimate:
    """Treatment CFRs applied to the control case demographic"""
    schema = align(control.band_schema, treatment.band_schema)
    value, coerced = natural_direct(
        arm_of(control), arm_of(treatment), schema.labels, resolve_policy(policy)
    )
    return EffectEstimate(
        kind=EffectKind.NDE,
        control=control.label,
        treatment=treatment.label,
        value=value,
        undefined_band_policy_used=coerced,
    )


def nie(control: StratifiedCohort, treatment: StratifiedCohort, policy: PolicyLike = None) -> EffectEstimate:
    """Control CFRs applied to the shift in case demographic"""
    schema = align(control.band_schema, treatment.band_schema)
    value, coerced = natural_indirect(
        arm_of(control), arm_of(treatment), schema.labels, resolve_policy(policy)
    )
    return EffectEstimate(
        kind=EffectKind.NIE,
        control=control.label,
        treatment=treatment.label,
        value=value,
        undefined_band_policy_used=coerced,
    )


def expected_cde(
    control: StratifiedCohort,
    treatment: StratifiedCohort,
    reference: StratifiedCohort,
    policy: PolicyLike = None,
) -> EffectEstimate:
    """Per-band CDEs averaged over the reference cohort's case demographic"""
    schema = align(control.band_schema, treatment.band_schema)
    align(schema, reference.band_schema)
    value, coerced = expected_controlled_direct(
        arm_of(control), arm_of(treatment), arm_of(reference), schema.labels, resolve_policy(policy)
    )
    return EffectEstimate(
        kind=EffectKind.EXPECTED_CDE,
        control=control.label,
        treatment=treatment.label,
        reference=reference.label,
        value=value,
        undefined_band_policy_used=coerced,
    )


def subtractivity_check(
    control: StratifiedCohort, treatment: StratifiedCohort, policy: PolicyLike = None
) -> tuple[float, float]:
    """Residuals of TCE = NDE - reverse NIE and TCE = NIE - reverse NDE"""
    total = tce(control, treatment).value
    forward_nde = nde(control, treatment, policy).value
    forward_nie = nie(control, treatment, policy).value
    reverse_nde = nde(treatment, control, policy).value
    reverse_nie = nie(treatment, control, policy).value
    return (
        abs(total - (forward_nde - reverse_nie)),
        abs(total - (forward_nie - reverse_nde)),
    )


def moderation_residual(
    control: StratifiedCohort, treatment: StratifiedCohort, policy: PolicyLike = None
) -> EffectEstimate:
    """Part of the total effect explained by neither natural effect"""
    total = tce(control, treatment)
    direct = nde(control, treatment, policy)
    indirect = nie(control, treatment, policy)
    return EffectEstimate(
        kind=EffectKind.MODERATION_RESIDUAL,
        control=control.label,
        treatment=treatment.label,
        value=total.value - (direct.value + indirect.value),
        undefined_band_policy_used=direct.undefined_band_policy_used or indirect.undefined_band_policy_used,
    )


def _sign(value: int) -> int:
    return (value > 0) - (value < 0)


def simpson_verdict(control: StratifiedCohort, treatment: StratifiedCohort) -> SimpsonVerdict:
    """Compare the sign of every per-band CDE with the sign of the TCE.

    Signs come from integer cross-products, so they are exact. Bands with no
    cases in either cohort are skipped; bands with equal CFRs are ties.
    """
    schema = align(control.band_schema, treatment.band_schema)
    signs, skipped = [], []
    for label, n_c, d_c, n_t, d_t in zip(
        schema.labels, control.cases, control.deaths, treatment.cases, treatment.deaths
    ):
        if n_c == 0 or n_t == 0:
            signs.append(None)
            skipped.append(label)
        else:
            signs.append(_sign(d_t * n_c - d_c * n_t))
    total_sign = _sign(
        treatment.total_deaths * control.total_cases - control.total_deaths * treatment.total_cases
    )
    defined = [s for s in signs if s is not None]
    is_reversal = (
        total_sign != 0
        and any(s == -total_sign for s in defined)
        and not any(s == total_sign for s in defined)
    )
    return SimpsonVerdict(
        control=control.label,
        treatment=treatment.label,
        band_labels=schema.labels,
        per_band_cde_signs=tuple(signs),
        total_sign=total_sign,
        is_reversal=is_reversal,
        skipped_bands=tuple(skipped),
    )


def effect_summary(
    control: StratifiedCohort,
    treatment: StratifiedCohort,
    band: Optional[str] = None,
    reference: Optional[StratifiedCohort] = None,
    policy: PolicyLike = None,
) -> EffectSummary:
    """Everything the effects command reports for one cohort pair"""
    policy = resolve_policy(policy)
    return EffectSummary(
        control=control.label,
        treatment=treatment.label,
        tce=tce(control, treatment),
        nde=nde(control, treatment, policy),
        nie=nie(control, treatment, policy),
        moderation_residual=moderation_residual(control, treatment, policy),
        subtractivity_residuals=subtractivity_check(control, treatment, policy),
        cde=cde(control, treatment, band, policy) if band is not None else None,
        expected_cde=expected_cde(control, treatment, reference, policy) if reference is not None else None,
        policy=policy,
    )


def trace(control: StratifiedCohort, series: CohortSeries, policy: PolicyLike = None) -> EffectTrace:
    """TCE, NDE and NIE of every snapshot of a series against a fixed control"""
    policy = resolve_policy(policy)
    align(control.band_schema, series.band_schema)
    points = []
    for snapshot in series.snapshots:
        direct = nde(control, snapshot, policy)
        indirect = nie(control, snapshot, policy)
        points.append(
            TracePoint(
                report_date=snapshot.report_date,
                tce=tce(control, snapshot).value,
                nde=direct.value,
                nie=indirect.value,
                undefined_band_policy_used=direct.undefined_band_policy_used
                or indirect.undefined_band_policy_used,
            )
        )
    logger.info(f"Computed trace of {series.label} against {control.label} over {len(points)} snapshots")
    return EffectTrace(control=control.label, treatment=series.label, points=tuple(points))


_PAIRWISE: dict[EffectKind, Callable[..., EffectEstimate]] = {
    EffectKind.TCE: lambda c, t, policy: tce(c, t),
    EffectKind.NDE: nde,
    EffectKind.NIE: nie,
}


def pairwise_matrix(
    cohorts: Sequence[StratifiedCohort],
    kind: Union[EffectKind, str],
    policy: PolicyLike = None,
    workers: int = 1,
) -> PairwiseEffectMatrix:
    """Effects for every ordered (treatment, control) pair, rows ordered by mean effect.

    Cells are independent, so evaluating them on a thread pool gives the same
    matrix as evaluating them in order.
    """
    kind = EffectKind(kind)
    if kind not in _PAIRWISE:
        raise ValueError(f"pairwise matrices support TCE, NDE and NIE, not {kind.value}")
    policy = resolve_policy(policy, settings.matrix_undefined_band_policy)
    cohorts = list(cohorts)
    labels = [c.label for c in cohorts]
    if len(set(labels)) != len(labels):
        raise ValueError("pairwise matrix cohorts need unique labels")
    for cohort in cohorts[1:]:
        align(cohorts[0].band_schema, cohort.band_schema)

    n = len(cohorts)
    cells = [(i, j) for i in range(n) for j in range(n) if i != j]
    estimator = _PAIRWISE[kind]

    def evaluate(cell: tuple[int, int]) -> EffectEstimate:
        i, j = cell
        return estimator(cohorts[j], cohorts[i], policy=policy)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            estimates = list(pool.map(evaluate, cells))
    else:
        estimates = [evaluate(cell) for cell in cells]

    values = [[0.0] * n for _ in range(n)]
    coerced = [[False] * n for _ in range(n)]
    for (i, j), estimate in zip(cells, estimates):
        values[i][j] = estimate.value
        coerced[i][j] = estimate.undefined_band_policy_used

    means = {
        labels[i]: math.fsum(values[i][j] for j in range(n) if j != i) / (n - 1) if n > 1 else 0.0
        for i in range(n)
    }
    order = sorted(range(n), key=lambda i: (means[labels[i]], labels[i]))
    logger.info(f"Computed {kind.value} matrix over {n} cohorts")
    return PairwiseEffectMatrix(
        kind=kind,
        labels=tuple(labels[i] for i in order),
        values=tuple(tuple(values[i][j] for j in order) for i in order),
        coerced=tuple(tuple(coerced[i][j] for j in order) for i in order),
        ordering_rule=ORDERING_RULE,
        policy=policy,
    )
