from datetime import date

import pytest

from cfr_mediation.cohort import (
    align,
    case_demographic,
    cfr,
    decomposition_residual,
    pooled_summary,
    rate_table,
    total_cfr,
)
from cfr_mediation.errors import SchemaMismatch, UnknownBand
from cfr_mediation.ingest import cohorts_in

from conftest import make_cohort


def test_cfr_per_band(china):
    assert cfr(china, "80+") == pytest.approx(208 / 1408)
    assert cfr(china, "0-9") == 0.0
    with pytest.raises(UnknownBand):
        cfr(china, "90+")


def test_cfr_undefined_for_empty_band(china_printed):
    assert cfr(china_printed, "0-9") is None
    assert rate_table(china_printed).rate("0-9") is None


def test_total_cfr(china, italy):
    assert total_cfr(china) == pytest.approx(1023 / 44672)
    assert total_cfr(italy) == italy.total_deaths / italy.total_cases


def test_case_demographic(china, italy):
    # 1785 of Italy's 8026 cases on 9 March were aged 70-79
    assert case_demographic(italy).weight("70-79") == pytest.approx(0.2224, abs=1e-4)
    assert case_demographic(china).weight("80+") == pytest.approx(0.0315, abs=1e-4)
    assert sum(case_demographic(china).weights) == pytest.approx(1.0)


def test_align(china, italy, lombardy):
    assert align(china.band_schema, italy.band_schema) == china.band_schema
    with pytest.raises(SchemaMismatch):
        align(china.band_schema, lombardy[0].band_schema)


def test_decomposition_residual_on_bundled_cohorts(registry):
    for entry in registry.entries.values():
        for cohort in cohorts_in(entry.data):
            assert decomposition_residual(cohort) < 1e-12


def test_decomposition_residual_with_empty_band(china_printed):
    assert decomposition_residual(china_printed) < 1e-15


def test_pooled_summary(countries):
    summary = pooled_summary(countries.cohorts)
    assert summary.cohorts == 12
    assert summary.total_cases == 756004
    assert summary.total_deaths == 68508
    assert summary.pooled_cfr == pytest.approx(0.0906, abs=1e-4)
    assert summary.first_date == date(2020, 2, 17)


def test_pooled_summary_needs_cohorts():
    with pytest.raises(ValueError):
        pooled_summary([])


def test_scaling_keeps_rates():
    cohort = make_cohort([100, 300], [1, 30])
    scaled = make_cohort([700, 2100], [7, 210])
    assert rate_table(scaled) == rate_table(cohort)
    assert case_demographic(scaled) == case_demographic(cohort)
