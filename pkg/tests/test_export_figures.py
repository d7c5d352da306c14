import pytest

from scripts.export_figures import export_figures


def _lines(directory, name):
    return (directory / name).read_text(encoding="utf-8").splitlines()


def test_export_figures(tmp_path):
    out = tmp_path / "figures"
    written = export_figures(str(out))
    assert sorted(written) == [
        "cfr_by_band.csv",
        "correlations.csv",
        "demographic_by_band.csv",
        "italy_by_band_over_time.csv",
        "matrix_nde.csv",
        "matrix_nie.csv",
        "matrix_tce.csv",
        "trace_italy_vs_china.csv",
        "trace_spain_vs_china.csv",
    ]
    italy = _lines(out, "trace_italy_vs_china.csv")
    assert italy[0] == "date,tce,nde,nie"
    assert len(italy) == 15
    correlations = _lines(out, "correlations.csv")
    assert correlations[-1].startswith("pairwise-nde-vs-nie,pearson,")
    assert correlations[-1].endswith(",64")


def test_export_per_band_figures(tmp_path):
    export_figures(str(tmp_path))
    cfr = _lines(tmp_path, "cfr_by_band.csv")
    assert cfr[0] == "cohort,0-9,10-19,20-29,30-39,40-49,50-59,60-69,70-79,80+"
    assert len(cfr) == 13
    china = next(line for line in cfr if line.startswith("China,")).split(",")
    assert float(china[-1]) == pytest.approx(208 / 1408)
    shares = next(line for line in _lines(tmp_path, "demographic_by_band.csv") if line.startswith("China,"))
    assert sum(float(v) for v in shares.split(",")[1:]) == pytest.approx(1.0)

    over_time = _lines(tmp_path, "italy_by_band_over_time.csv")
    assert over_time[0] == "cohort,date,band,cases,deaths,cfr,share"
    assert len(over_time) == 1 + 14 * 9
    row = next(line for line in over_time if line.startswith("Italy,2020-03-09,70-79,")).split(",")
    assert row[3:5] == ["1785", "114"]
    assert float(row[6]) == pytest.approx(1785 / 8026)
