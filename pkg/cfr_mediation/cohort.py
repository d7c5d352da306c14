import math
from typing import Iterable, Optional

from cfr_mediation.errors import SchemaMismatch
from cfr_mediation.models import (
    AgeBand,
    BandSchema,
    GroupDistribution,
    PooledSummary,
    RateTable,
    StratifiedCohort,
)


def cfr(cohort: StratifiedCohort, band: "AgeBand | str") -> Optional[float]:
    """Case fatality rate in one band, None when the band has no cases"""
    i = cohort.band_schema.index(band)
    cases = cohort.cases[i]
    if cases == 0:
        return None
    return cohort.deaths[i] / cases


def total_cfr(cohort: StratifiedCohort) -> float:
    """Deaths over cases across every band"""
    return cohort.total_deaths / cohort.total_cases


def case_demographic(cohort: StratifiedCohort) -> GroupDistribution:
    """Share of the cohort's cases falling in each band"""
    total = cohort.total_cases
    return GroupDistribution(
        band_schema=cohort.band_schema,
        weights=tuple(n / total for n in cohort.cases),
    )


def rate_table(cohort: StratifiedCohort) -> RateTable:
    """Per-band case fatality rates"""
    return RateTable(
        band_schema=cohort.band_schema,
        rates=tuple(d / n if n else None for n, d in zip(cohort.cases, cohort.deaths)),
    )


def align(schema_a: BandSchema, schema_b: BandSchema) -> BandSchema:
    """Shared schema of two cohorts; no re-binning is attempted"""
    if schema_a != schema_b:
        raise SchemaMismatch(schema_a.labels, schema_b.labels)
    return schema_a


def decomposition_residual(cohort: StratifiedCohort) -> float:
    """|total CFR - sum of weight x rate| over bands with cases"""
    weights = case_demographic(cohort).weights
    rates = rate_table(cohort).rates
    recomposed = math.fsum(w * r for w, r in zip(weights, rates) if r is not None)
    return abs(total_cfr(cohort) - recomposed)


def pooled_summary(cohorts: Iterable[StratifiedCohort]) -> PooledSummary:
    """Totals and pooled CFR over a set of cohorts"""
    cohorts = list(cohorts)
    if not cohorts:
        raise ValueError("pooled summary needs at least one cohort")
    cases = sum(c.total_cases for c in cohorts)
    deaths = sum(c.total_deaths for c in cohorts)
    dates = [c.report_date for c in cohorts]
    return PooledSummary(
        cohorts=len(cohorts),
        total_cases=cases,
        total_deaths=deaths,
        pooled_cfr=deaths / cases,
        first_date=min(dates),
        last_date=max(dates),
    )
