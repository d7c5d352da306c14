"""Exceptions raised by the library; the CLI turns them into exit code 2."""

from difflib import get_close_matches
from typing import Iterable, Sequence


class CfrMediationError(Exception):
    """Base class for every domain failure"""


class SchemaMismatch(CfrMediationError):
    def __init__(self, labels_a: Sequence[str], labels_b: Sequence[str]):
        self.labels_a = tuple(labels_a)
        self.labels_b = tuple(labels_b)
        super().__init__(
            f"age band schemas differ: [{', '.join(self.labels_a)}] vs [{', '.join(self.labels_b)}]"
        )


class UndefinedRate(CfrMediationError):
    def __init__(self, cohort: str, band: str):
        self.cohort = cohort
        self.band = band
        super().__init__(f"CFR undefined for {cohort} in band {band}: zero cases")


class UnknownBand(CfrMediationError):
    def __init__(self, label: str):
        self.label = label
        super().__init__(f"unknown age band {label!r}")


class UnknownDataset(CfrMediationError):
    def __init__(self, name: str, known: Iterable[str]):
        self.name = name
        self.known = tuple(sorted(known))
        super().__init__(f"unknown dataset {name!r}; bundled datasets: {', '.join(self.known)}")


class UnknownLabel(CfrMediationError):
    def __init__(self, label: str, known: Iterable[str]):
        known = list(known)
        self.label = label
        self.suggestions = tuple(get_close_matches(label, known, n=3, cutoff=0.5))
        hint = f"; did you mean {', '.join(self.suggestions)}?" if self.suggestions else ""
        super().__init__(f"unknown cohort {label!r}{hint}")


class IngestError(CfrMediationError):
    def __init__(self, source: str, report):
        self.source = source
        self.report = report
        first = report.errors[0] if report.errors else None
        detail = f": {first.location}: {first.message}" if first else ""
        super().__init__(f"{source} failed validation with {len(report.errors)} error(s){detail}")


class InvalidScm(CfrMediationError):
    pass


class CorrelationInputError(CfrMediationError):
    pass


class ZeroVariance(CorrelationInputError):
    def __init__(self, which: str):
        self.which = which
        super().__init__(f"correlation undefined: {which} has zero variance")
