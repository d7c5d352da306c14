"""Queries shared by the command line and the HTTP router"""

from typing import Any, Optional

from cfr_mediation.config import settings
from cfr_mediation.effects import effect_summary, pairwise_matrix, resolve_policy, simpson_verdict, trace
from cfr_mediation.errors import CfrMediationError
from cfr_mediation.ingest import DatasetEntry, cohorts_in, load_dataset, resolve_cohort
from cfr_mediation.models import (
    CohortSeries,
    CorrelationReport,
    DatasetRef,
    EffectKind,
    EffectSummary,
    EffectTrace,
    OutputDocument,
    PairwiseEffectMatrix,
    Provenance,
    PValueMethod,
    ScalarTable,
    SimpsonVerdict,
    StratifiedCohort,
)
from cfr_mediation.stats import correlate


class _Context:
    """Datasets touched by one query, in order of first use"""

    def __init__(self, data: str, any_path: bool = True):
        self.any_path = any_path
        self.entries: list[DatasetEntry] = []
        self.primary = self.load(data)

    def load(self, name: str) -> DatasetEntry:
        entry = load_dataset(name, any_path=self.any_path)
        if all(e.name != entry.name for e in self.entries):
            self.entries.append(entry)
        return entry

    def cohort(self, label: str, entry: Optional[DatasetEntry] = None) -> StratifiedCohort:
        """Cohort by label; `<dataset>/<label>` reaches into another dataset"""
        entry = entry or self.primary
        if "/" in label:
            name, _, label = label.partition("/")
            entry = self.load(name)
        return resolve_cohort(entry.data, label)

    def document(self, command: str, payload: dict, flags: dict, seed: Optional[int] = None) -> OutputDocument:
        return OutputDocument(
            format="json",
            provenance=Provenance(
                command=command,
                datasets=tuple(DatasetRef(name=e.name, sha256=e.sha256) for e in self.entries),
                flags=flags,
                seed=seed,
            ),
            payload=payload,
        )


def effects_query(
    data: str,
    control: str,
    treatment: str,
    band: Optional[str] = None,
    reference: Optional[str] = None,
    policy: Optional[str] = None,
    any_path: bool = True,
) -> tuple[EffectSummary, OutputDocument]:
    context = _Context(data, any_path)
    summary = effect_summary(
        context.cohort(control),
        context.cohort(treatment),
        band=band,
        reference=context.cohort(reference) if reference is not None else None,
        policy=policy,
    )
    flags = {
        "data": data,
        "control": control,
        "treatment": treatment,
        "band": band,
        "reference": reference,
        "undefined_band": summary.policy.value,
    }
    return summary, context.document("effects", summary.model_dump(mode="json"), flags)


def trace_query(
    data: str,
    control: str,
    control_data: str = "countries_latest",
    policy: Optional[str] = None,
    any_path: bool = True,
) -> tuple[EffectTrace, OutputDocument]:
    context = _Context(data, any_path)
    if not isinstance(context.primary.data, CohortSeries):
        raise CfrMediationError(f"dataset {data} is not a series")
    control_entry = context.load(control_data)
    result = trace(context.cohort(control, control_entry), context.primary.data, policy)
    payload = result.model_dump(mode="json")
    payload["sign_changes"] = {
        kind.value: [[a.isoformat(), b.isoformat()] for a, b in result.sign_changes(kind)]
        for kind in (EffectKind.TCE, EffectKind.NDE, EffectKind.NIE)
    }
    flags = {
        "data": data,
        "control": control,
        "control_data": control_data,
        "undefined_band": resolve_policy(policy).value,
    }
    return result, context.document("trace", payload, flags)


def matrix_query(
    data: str, kind: str, policy: Optional[str] = None, workers: int = 1, any_path: bool = True
) -> tuple[PairwiseEffectMatrix, OutputDocument]:
    context = _Context(data, any_path)
    result = pairwise_matrix(cohorts_in(context.primary.data), kind.upper(), policy, workers)
    payload = result.model_dump(mode="json")
    payload["row_means"] = result.row_means()
    flags = {"data": data, "kind": result.kind.value, "undefined_band": result.policy.value}
    return result, context.document("matrix", payload, flags)


def simpson_query(
    data: str, control: str, treatment: str, any_path: bool = True
) -> tuple[SimpsonVerdict, OutputDocument]:
    context = _Context(data, any_path)
    verdict = simpson_verdict(context.cohort(control), context.cohort(treatment))
    payload = verdict.model_dump(mode="json")
    payload["tied_bands"] = list(verdict.tied_bands)
    flags = {"data": data, "control": control, "treatment": treatment}
    return verdict, context.document("simpson", payload, flags)


def correlate_query(
    data: str,
    test: str,
    median_ages: str = "median_ages",
    p_method: Optional[PValueMethod] = None,
    policy: Optional[str] = None,
    workers: int = 1,
    any_path: bool = True,
) -> tuple[CorrelationReport, OutputDocument]:
    context = _Context(data, any_path)
    ages: Optional[dict[str, float]] = None
    if test == "nie-rank-vs-median-age":
        table = context.load(median_ages).data
        if not isinstance(table, ScalarTable):
            raise CfrMediationError(f"dataset {median_ages} is not a scalar table")
        ages = table.values
    method = p_method or PValueMethod()
    report = correlate(test, cohorts_in(context.primary.data), ages, method, policy, workers)
    flags: dict[str, Any] = {
        "data": data,
        "test": test,
        "median_ages": median_ages if ages is not None else None,
        "p": method.kind,
        "reps": method.reps,
        "undefined_band": resolve_policy(policy, settings.matrix_undefined_band_policy).value,
    }
    return report, context.document("correlate", report.model_dump(mode="json"), flags, seed=method.seed)


def labels_of(entry: DatasetEntry) -> list[str]:
    if isinstance(entry.data, CohortSeries):
        return [f"{s.label}@{s.report_date.isoformat()}" for s in entry.data.snapshots]
    if isinstance(entry.data, ScalarTable):
        return list(entry.data.values)
    return [c.label for c in cohorts_in(entry.data)]


def dataset_query(name: str, any_path: bool = True) -> tuple[DatasetEntry, OutputDocument]:
    context = _Context(name, any_path)
    entry = context.primary
    payload = entry.describe()
    payload["labels"] = labels_of(entry)
    payload["report"] = entry.report.model_dump(mode="json")
    return entry, context.document("datasets show", payload, {"name": name})

