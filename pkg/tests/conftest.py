from datetime import date

import pytest
from hypothesis import settings

from cfr_mediation.ingest import build_registry, load_bundled
from cfr_mediation.models import BandSchema, StratifiedCohort

settings.register_profile("cfr", deadline=None)
settings.load_profile("cfr")

# Ascending mean effect as treatment over the bundled country cohorts
NDE_ORDER = [
    "Diamond Princess",
    "China",
    "Portugal",
    "South Korea",
    "Spain",
    "Switzerland",
    "South Africa",
    "Argentina",
    "Colombia",
    "Netherlands",
    "Sweden",
    "Italy",
]

NIE_ORDER = [
    "South Africa",
    "Colombia",
    "Argentina",
    "South Korea",
    "China",
    "Portugal",
    "Switzerland",
    "Sweden",
    "Spain",
    "Netherlands",
    "Italy",
    "Diamond Princess",
]


def make_cohort(cases, deaths, label="cohort", bands=None, report_date=date(2020, 3, 1)):
    """Cohort over the given bands, ten-year bands by default"""
    if bands is None:
        bands = [f"{10 * i}-{10 * i + 9}" for i in range(len(cases) - 1)] + [f"{10 * (len(cases) - 1)}+"]
    return StratifiedCohort(
        label=label,
        report_date=report_date,
        source="test",
        band_schema=BandSchema.from_labels(bands),
        cases=tuple(cases),
        deaths=tuple(deaths),
    )


@pytest.fixture(scope="session")
def registry():
    return build_registry()


@pytest.fixture(scope="session")
def countries():
    return load_bundled("countries_latest").data


@pytest.fixture(scope="session")
def march9():
    return load_bundled("china_vs_italy_march9").data


@pytest.fixture(scope="session")
def china(march9):
    return march9.get("China")


@pytest.fixture(scope="session")
def china_printed(march9):
    return march9.get("China (printed)")


@pytest.fixture(scope="session")
def italy(march9):
    return march9.get("Italy")


@pytest.fixture(scope="session")
def lombardy():
    collection = load_bundled("lombardy_ifr").data
    return collection.get("Lombardy pre-16 Mar"), collection.get("Lombardy post-16 Mar")


@pytest.fixture(scope="session")
def italy_series():
    return load_bundled("italy_series").data


@pytest.fixture(scope="session")
def spain_series():
    return load_bundled("spain_series").data


@pytest.fixture(scope="session")
def median_ages():
    return load_bundled("median_ages").data


@pytest.fixture
def additive_pair():
    """Per-band rates 0.01/0.02/0.03 shifted by exactly 0.10 in the treatment"""
    control = make_cohort([1000, 2000, 3000], [10, 40, 90], label="control")
    treatment = make_cohort([3000, 2000, 1000], [330, 240, 130], label="treatment")
    return control, treatment
