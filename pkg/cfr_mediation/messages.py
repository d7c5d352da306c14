import csv
import io
from typing import Any, Iterable, Optional, Sequence

from cfr_mediation.cohort import case_demographic, rate_table
from cfr_mediation.models import (
    CorrelationReport,
    CorrelationResult,
    EffectSummary,
    EffectTrace,
    MediationEffects,
    OracleReport,
    PairwiseEffectMatrix,
    Provenance,
    SimpsonVerdict,
    StratifiedCohort,
    ValidationReport,
)

SIGN_SYMBOLS = {1: "+", 0: "=", -1: "-", None: "skipped"}


def format_percent(value: float) -> str:
    """Signed fraction as percentage points with one decimal"""
    text = f"{value * 100:.1f}"
    if text == "-0.0":
        text = "0.0"
    return f"{text}%"


def format_table(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Left-aligned plain-text table"""
    rows = [[str(cell) for cell in row] for row in rows]
    widths = [len(h) for h in header]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows)
    return "\n".join(lines)


def format_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(cell) if isinstance(cell, float) else cell for cell in row])
    return buffer.getvalue()


def format_provenance(provenance: Provenance) -> str:
    lines = [f"data: {ref.name} (sha256 {ref.sha256})" for ref in provenance.datasets]
    if provenance.seed is not None:
        lines.append(f"seed: {provenance.seed}")
    return "\n".join(lines)


def get_effects_message(summary: EffectSummary) -> str:
    """Effects of switching from the control to the treatment cohort"""
    rows = [
        ("TCE", format_percent(summary.tce.value)),
        ("NDE", format_percent(summary.nde.value)),
        ("NIE", format_percent(summary.nie.value)),
        ("moderation residual", format_percent(summary.moderation_residual.value)),
    ]
    if summary.cde is not None:
        rows.append((f"CDE ({summary.cde.band})", format_percent(summary.cde.value)))
    if summary.expected_cde is not None:
        rows.append(
            (f"expected CDE (reference {summary.expected_cde.reference})", format_percent(summary.expected_cde.value))
        )
    first, second = summary.subtractivity_residuals
    rows.append(("subtractivity residuals", f"{first:.3e}, {second:.3e}"))
    text = f"{summary.control} -> {summary.treatment} (undefined bands: {summary.policy.value})\n"
    text += format_table(("effect", "value"), rows)
    coerced = [
        e.kind.value
        for e in (summary.nde, summary.nie, summary.cde, summary.expected_cde)
        if e is not None and e.undefined_band_policy_used
    ]
    if coerced:
        text += f"\nundefined bands coerced to 0 in: {', '.join(coerced)}"
    return text


BAND_HEADER = ("cohort", "date", "band", "cases", "deaths", "cfr", "share")


def band_rows(cohorts: Iterable[StratifiedCohort]) -> list[list[Any]]:
    """One row per cohort and band: counts, CFR (blank when undefined) and case share"""
    rows = []
    for cohort in cohorts:
        rates = rate_table(cohort).rates
        shares = case_demographic(cohort).weights
        for band, n, d, rate, share in zip(cohort.band_schema.labels, cohort.cases, cohort.deaths, rates, shares):
            rows.append([cohort.label, cohort.report_date.isoformat(), band, n, d, "" if rate is None else rate, share])
    return rows


def trace_rows(trace: EffectTrace) -> list[list[Any]]:
    return [[p.report_date.isoformat(), p.tce, p.nde, p.nie] for p in trace.points]


def get_trace_message(trace: EffectTrace) -> str:
    rows = [
        [p.report_date.isoformat(), format_percent(p.tce), format_percent(p.nde), format_percent(p.nie)]
        for p in trace.points
    ]
    return f"{trace.treatment} against {trace.control}\n" + format_table(("date", "TCE", "NDE", "NIE"), rows)


def matrix_rows(matrix: PairwiseEffectMatrix) -> list[list[Any]]:
    return [[label, *row] for label, row in zip(matrix.labels, matrix.values)]


def get_matrix_message(matrix: PairwiseEffectMatrix) -> str:
    """Rows are treatments, columns are controls"""
    means = matrix.row_means()
    rows = [
        [label, *[format_percent(v) for v in row], format_percent(means[label])]
        for label, row in zip(matrix.labels, matrix.values)
    ]
    header = (f"{matrix.kind.value} treatment \\ control", *matrix.labels, "mean")
    text = format_table(header, rows)
    coerced = sum(flag for row in matrix.coerced for flag in row)
    text += f"\nordering: {matrix.ordering_rule}"
    if coerced:
        text += f"\ncells with undefined bands coerced to 0: {coerced}"
    return text


def get_simpson_message(verdict: SimpsonVerdict) -> str:
    rows = [(label, SIGN_SYMBOLS[sign]) for label, sign in zip(verdict.band_labels, verdict.per_band_cde_signs)]
    text = f"{verdict.control} -> {verdict.treatment}\n"
    text += format_table(("band", "CDE sign"), rows)
    text += f"\nTCE sign: {SIGN_SYMBOLS[verdict.total_sign]}"
    text += f"\nSimpson's reversal: {'yes' if verdict.is_reversal else 'no'}"
    if verdict.tied_bands:
        text += f"\nties: {', '.join(verdict.tied_bands)}"
    return text


def _correlation_line(result: CorrelationResult) -> str:
    method = result.p_method.kind
    if method == "permutation":
        method += f", seed {result.p_method.seed}, {result.p_method.reps} reps"
    return f"{result.method}: {result.coefficient:.4f} (p={result.p_value:.3g}, {method}, n={result.n})"


def get_correlation_message(report: CorrelationReport) -> str:
    lines = [report.test, _correlation_line(report.primary)]
    if report.secondary is not None:
        lines.append(_correlation_line(report.secondary))
    if report.rank_deltas is not None:
        lines.append(
            format_table(
                ("cohort", "rank delta"),
                sorted(report.rank_deltas.items(), key=lambda item: (item[1], item[0])),
            )
        )
    if report.discordance is not None:
        d = report.discordance
        lines.append(f"opposite signs: {d.count} of {d.total} ordered pairs ({len(d.zero_pairs)} with a zero effect)")
    return "\n".join(lines)


def get_mediation_effects_message(exact: MediationEffects, formula: MediationEffects) -> str:
    rows = [
        ("TCE", f"{exact.tce:.12g}", f"{formula.tce:.12g}"),
        ("NDE", f"{exact.nde:.12g}", f"{formula.nde:.12g}"),
        ("NIE", f"{exact.nie:.12g}", f"{formula.nie:.12g}"),
    ]
    for x, (a, b) in enumerate(zip(exact.cde, formula.cde)):
        rows.append((f"CDE(x={x})", f"{a:.12g}", "undefined" if b is None else f"{b:.12g}"))
    return format_table(("effect", "exact", "formula"), rows)


def get_oracle_message(report: OracleReport) -> str:
    lines = [
        f"models: {report.instances} random (k={report.k}, seed {report.seed}) + {report.corner_cases} corner cases",
        f"max discrepancy: {report.max_discrepancy:.3e}",
        f"max subtractivity residual: {report.max_subtractivity_residual:.3e}",
        f"tolerance: {report.tolerance:.0e}",
    ]
    if report.sampling is not None:
        study = report.sampling
        lines.append(f"sampling: n={study.n_per_arm} per arm, {study.replicates} replicates")
        rows = [
            (name, f"{s.exact:.6g}", f"{s.estimate:.6g}", f"{s.standard_error:.3g}", "yes" if s.within_three_se else "no")
            for name, s in (("TCE", study.tce), ("NDE", study.nde), ("NIE", study.nie))
        ]
        lines.append(format_table(("effect", "exact", "estimate", "SE", "within 3 SE"), rows))
    lines.append("PASSED" if report.passed else "FAILED")
    return "\n".join(lines)


def get_dataset_list_message(descriptions: Sequence[dict]) -> str:
    rows = []
    for d in descriptions:
        span = f"{d['first_date']}..{d['last_date']}" if "first_date" in d else ""
        size = d.get("cohorts", d.get("entries"))
        rows.append(
            (d["name"], d["kind"], size, span, d.get("total_cases", ""), d.get("total_deaths", ""), ", ".join(d.get("sources", [])))
        )
    return format_table(("name", "kind", "size", "dates", "cases", "deaths", "sources"), rows)


def get_validation_message(report: ValidationReport, title: Optional[str] = None) -> str:
    lines = [title] if title else []
    lines.append(f"errors: {len(report.errors)}, warnings: {len(report.warnings)}")
    lines.extend(f"error: {issue}" for issue in report.errors)
    lines.extend(f"warning: {issue}" for issue in report.warnings)
    return "\n".join(lines)
