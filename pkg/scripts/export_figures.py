#!/usr/bin/env python3
"""
Script to export the csv data behind every figure of the country comparison,
from the per-band rates and case shares to the effect matrices
Usage: python scripts/export_figures.py path/to/output_dir
"""

import logging
import sys
from pathlib import Path

from cfr_mediation.cohort import case_demographic, rate_table
from cfr_mediation.config import settings
from cfr_mediation.errors import CfrMediationError
from cfr_mediation.ingest import cohorts_in
from cfr_mediation.messages import BAND_HEADER, band_rows, format_csv, matrix_rows, trace_rows
from cfr_mediation.models import EffectKind
from cfr_mediation.queries import correlate_query, dataset_query, matrix_query, trace_query
from cfr_mediation.stats import CORRELATION_TESTS

logging.basicConfig(level=settings.log_level.upper())
logger = logging.getLogger(__name__)

TRACES = {
    "trace_italy_vs_china.csv": ("italy_series", "China"),
    "trace_spain_vs_china.csv": ("spain_series", "China"),
}


def export_figures(output_dir: str):
    """Write per-band, trace, matrix and correlation csv files into output_dir"""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    countries, _ = dataset_query("countries_latest")
    cohorts = cohorts_in(countries.data)
    bands = cohorts[0].band_schema.labels
    cfr_rows = [[c.label, *("" if r is None else r for r in rate_table(c).rates)] for c in cohorts]
    share_rows = [[c.label, *case_demographic(c).weights] for c in cohorts]
    for filename, rows in (("cfr_by_band.csv", cfr_rows), ("demographic_by_band.csv", share_rows)):
        (out / filename).write_text(format_csv(("cohort", *bands), rows), encoding="utf-8")
        written.append(filename)

    italy, _ = dataset_query("italy_series")
    (out / "italy_by_band_over_time.csv").write_text(
        format_csv(BAND_HEADER, band_rows(cohorts_in(italy.data))), encoding="utf-8"
    )
    written.append("italy_by_band_over_time.csv")

    for filename, (series, control) in TRACES.items():
        result, _ = trace_query(series, control)
        (out / filename).write_text(format_csv(("date", "tce", "nde", "nie"), trace_rows(result)), encoding="utf-8")
        written.append(filename)

    for kind in (EffectKind.TCE, EffectKind.NDE, EffectKind.NIE):
        result, _ = matrix_query("countries_latest", kind.value)
        filename = f"matrix_{kind.value.lower()}.csv"
        (out / filename).write_text(format_csv(("treatment", *result.labels), matrix_rows(result)), encoding="utf-8")
        written.append(filename)

    rows = []
    for test in CORRELATION_TESTS:
        report, _ = correlate_query("countries_latest", test)
        discordant = report.discordance.count if report.discordance is not None else ""
        rows.append([test, report.primary.method, report.primary.coefficient, report.primary.p_value, discordant])
    (out / "correlations.csv").write_text(
        format_csv(("test", "method", "coefficient", "p_value", "discordant"), rows), encoding="utf-8"
    )
    written.append("correlations.csv")

    logger.info(f"Successfully exported {len(written)} files to {out}")
    return written


if __name__ == "__main__":
    if len(sys.argv) != 2:
        print("Usage: python scripts/export_figures.py path/to/output_dir")
        sys.exit(1)

    try:
        export_figures(sys.argv[1])
    except CfrMediationError as e:
        print(f"Error exporting figures: {e}")
        sys.exit(1)
