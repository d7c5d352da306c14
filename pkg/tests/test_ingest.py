import io
from datetime import date
from pathlib import Path

import pytest

from cfr_mediation.config import settings
from cfr_mediation.errors import IngestError, UnknownDataset, UnknownLabel
from cfr_mediation.ingest import (
    BUNDLED_DATASETS,
    load_bundled,
    load_dataset,
    parse_cohort_file,
    parse_document,
    resolve_cohort,
    serialize_document,
    validate_registry,
)
from cfr_mediation.models import CohortCollection, CohortSeries, ScalarTable, StratifiedCohort

SINGLE = b"""# source: unit test
#cohort,Town,2020-04-01,clinic
band,cases,deaths
0-49,120,1
50+,80,9
"""


def _messages(report):
    return [f"{issue.location}: {issue.message}" for issue in report.warnings]


def test_every_bundled_dataset_loads_without_errors():
    for name in BUNDLED_DATASETS:
        entry = load_bundled(name)
        assert entry.report.ok, name
        assert any(line.startswith("# source:") for line in entry.comments)
        assert len(entry.sha256) == 64


def test_bundled_kinds(italy_series, spain_series, countries, median_ages):
    assert isinstance(italy_series, CohortSeries)
    assert len(italy_series.snapshots) == 14
    assert len(spain_series.snapshots) == 11
    assert isinstance(countries, CohortCollection)
    assert len(countries.cohorts) == 12
    assert isinstance(median_ages, ScalarTable)
    assert median_ages.get("Italy") == 45.4


def test_bundled_total_mismatch_warnings():
    italy = _messages(load_bundled("italy_series").report)
    spain = _messages(load_bundled("spain_series").report)
    assert "italy_series/Italy@2020-04-23: stated total deaths 23118 differ from band sum 23188" in italy
    assert "spain_series/Spain@2020-05-14: stated total deaths 19115 differ from band sum 19155" in spain
    printed = _messages(load_bundled("china_vs_italy_march9").report)
    assert (
        "china_vs_italy_march9/China (printed)@2020-02-17: stated total cases 44672 differ from band sum 44256"
        in printed
    )


def test_bundled_monotonicity_warnings():
    italy = _messages(load_bundled("italy_series").report)
    spain = _messages(load_bundled("spain_series").report)
    assert "italy_series/Italy: 2020-05-26 20-29: cumulative deaths fell from 14 to 12" in italy
    assert "spain_series/Spain: 2020-04-28 20-29: cumulative deaths fell from 25 to 22" in spain
    assert "spain_series/Spain: 2020-05-07 20-29: cumulative deaths fell from 22 to 21" in spain


def test_parse_single_cohort():
    data, report = parse_cohort_file(SINGLE, name="town")
    assert isinstance(data, StratifiedCohort)
    assert data.label == "Town"
    assert data.report_date == date(2020, 4, 1)
    assert data.source == "clinic"
    assert data.band_schema.labels == ("0-49", "50+")
    assert report.ok and not report.warnings


def test_parse_from_stream():
    data, _ = parse_cohort_file(io.BytesIO(SINGLE))
    assert data.cases == (120, 80)


def test_missing_source_is_a_warning_for_user_files():
    content = SINGLE.replace(b"# source: unit test\n", b"")
    _, report = parse_cohort_file(content, name="town")
    assert [issue.message for issue in report.warnings] == ["missing '# source:' comment"]
    with pytest.raises(IngestError):
        parse_document(content, name="town", require_source=True)


def test_deaths_above_cases_reports_band_location():
    content = SINGLE.replace(b"50+,80,9", b"50+,8,9")
    with pytest.raises(IngestError) as excinfo:
        parse_cohort_file(content, name="town")
    issue = excinfo.value.report.errors[0]
    assert issue.location == "town/Town@2020-04-01/50+"
    assert issue.message == "deaths exceed cases (9 > 8)"


@pytest.mark.parametrize(
    "old, new, message",
    [
        (b"0-49,120,1", b"0-49,-120,1", "negative count"),
        (b"0-49,120,1", b"0-49,many,1", "counts must be integers"),
        (b"band,cases,deaths", b"age,n,d", "malformed header"),
        (b"#cohort,Town,2020-04-01,clinic", b"#cohort,Town,April,clinic", "bad date"),
        (b"50+,80,9", b"0-49,80,9", "duplicate band"),
        (b"50+,80,9", b"40+,80,9", "overlap"),
        (b"0-49,120,1", b"0-49,120", "expected 3 fields"),
        (b"0-49,120,1", b"00-49,120,1", "unknown age band '00-49'"),
    ],
)
def test_malformed_files(old, new, message):
    with pytest.raises(IngestError) as excinfo:
        parse_cohort_file(SINGLE.replace(old, new), name="town")
    assert any(message in issue.message for issue in excinfo.value.report.errors)


def test_zero_total_cases_is_an_error():
    content = SINGLE.replace(b"0-49,120,1", b"0-49,0,0").replace(b"50+,80,9", b"50+,0,0")
    with pytest.raises(IngestError, match="total cases must be at least 1"):
        parse_cohort_file(content, name="town")


def test_no_directive():
    with pytest.raises(IngestError, match="malformed header"):
        parse_cohort_file(b"# source: x\n", name="empty")


def test_not_utf8():
    with pytest.raises(IngestError, match="not UTF-8"):
        parse_cohort_file(b"\xff\xfe#cohort", name="binary")


def test_total_row_mismatch_is_a_warning():
    content = SINGLE + b"total,200,11\n"
    data, report = parse_cohort_file(content, name="town")
    assert data.stated_deaths == 11
    assert _messages(report) == ["town/Town@2020-04-01: stated total deaths 11 differ from band sum 10"]


def test_series_snapshots_sorted_by_date():
    content = b"""# source: unit test
#series,Town
#cohort,Town,2020-04-08,clinic
band,cases,deaths
0-49,150,2
50+,90,12
#cohort,Town,2020-04-01,clinic
band,cases,deaths
0-49,120,1
50+,80,9
"""
    data, report = parse_cohort_file(content, name="town")
    assert data.dates == (date(2020, 4, 1), date(2020, 4, 8))
    assert report.ok and not report.warnings


def test_series_duplicate_dates():
    content = b"# source: unit test\n#series,Town\n" + SINGLE.split(b"\n", 1)[1] * 2
    with pytest.raises(IngestError, match="duplicate date 2020-04-01"):
        parse_cohort_file(content, name="town")


def test_collection_duplicate_labels():
    content = b"# source: unit test\n#collection,towns\n" + SINGLE.split(b"\n", 1)[1] * 2
    with pytest.raises(IngestError, match="duplicate cohort label"):
        parse_cohort_file(content, name="towns")


def test_comments_after_first_directive_are_dropped_with_warning():
    content = SINGLE.replace(b"band,cases,deaths", b"# trailing note\nband,cases,deaths")
    document = parse_document(content, name="town")
    assert document.comments == ("# source: unit test",)
    assert "comment after the first directive is not preserved" in [w.message for w in document.report.warnings]


def test_bundled_files_serialize_back_byte_for_byte():
    for name in BUNDLED_DATASETS:
        content = Path(load_bundled(name).path).read_bytes()
        document = parse_document(content, name=name, require_source=True)
        assert serialize_document(document).encode("utf-8") == content, name


def test_load_unknown_dataset():
    with pytest.raises(UnknownDataset) as excinfo:
        load_bundled("france_series")
    assert "countries_latest" in str(excinfo.value)


def test_load_dataset_from_path(tmp_path):
    path = tmp_path / "town.csv"
    path.write_bytes(SINGLE)
    entry = load_dataset(str(path))
    assert entry.name == "town"
    assert entry.kind == "cohort"
    with pytest.raises(UnknownDataset):
        load_dataset(str(tmp_path / "missing.csv"))


def test_load_dataset_outside_the_data_dir(tmp_path, monkeypatch):
    path = tmp_path / "town.csv"
    path.write_bytes(SINGLE)
    with pytest.raises(UnknownDataset):
        load_dataset(str(path), any_path=False)
    monkeypatch.setattr(settings, "data_dir", tmp_path)
    assert load_dataset("town.csv", any_path=False).name == "town"
    assert load_dataset(str(path), any_path=False).name == "town"
    with pytest.raises(UnknownDataset):
        load_dataset("../town.csv", any_path=False)


def test_resolve_series_labels(italy_series):
    assert resolve_cohort(italy_series, "Italy@2020-03-09").report_date == date(2020, 3, 9)
    assert resolve_cohort(italy_series, "Italy").report_date == date(2020, 5, 26)
    with pytest.raises(UnknownLabel):
        resolve_cohort(italy_series, "Italy@2020-03-10")


def test_unknown_label_suggests_close_match(countries):
    with pytest.raises(UnknownLabel) as excinfo:
        countries.get("Itlay")
    assert "Italy" in excinfo.value.suggestions


def test_registry_keys(registry):
    cohorts = registry.cohorts
    assert "countries_latest/Spain" in cohorts
    assert "italy_series/Italy@2020-03-09" in cohorts
    assert "spain_series/Spain" in registry.series
    assert "median_ages/median_age" in registry.scalars
    assert registry.cohort("countries_latest/Spain").report_date == date(2020, 5, 29)
    assert registry.cohort("Italy@2020-03-12", dataset="italy_series").report_date == date(2020, 3, 12)
    with pytest.raises(UnknownLabel):
        registry.cohort("Spain")


def test_registry_accessors(registry):
    assert sorted(registry.series) == ["italy_series/Italy", "spain_series/Spain"]
    assert len(registry.series["italy_series/Italy"].snapshots) == 14
    assert list(registry.scalars) == ["median_ages/median_age"]
    assert registry.scalars["median_ages/median_age"].get("Argentina") == pytest.approx(31.7)
    assert registry.cohort("Italy", dataset="italy_series").report_date == date(2020, 5, 26)
    assert registry.cohort("italy_series/Italy@2020-03-09").report_date == date(2020, 3, 9)
    with pytest.raises(UnknownDataset):
        registry.cohort("nowhere/Spain")
    with pytest.raises(UnknownLabel):
        registry.cohort("Atlantis", dataset="countries_latest")


def test_validate_registry_is_repeatable(registry):
    first = validate_registry(registry)
    assert first.ok
    assert validate_registry(registry) == first
