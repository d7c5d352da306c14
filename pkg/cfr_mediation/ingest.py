"""Reading, validating and registering cohort datasets.

File format (UTF-8, comma-delimited)::

    # source: <citation>                 leading comment lines, kept verbatim
    #collection,<name>                   or #series,<label> / #scalars,<name>
    #cohort,<label>,<ISO date>,<source>
    band,cases,deaths
    0-9,416,0
    ...
    total,44672,1023                     optional, cross-checked against the rows

A file holding a single ``#cohort`` block needs no container header.
"""

import hashlib
import logging
from datetime import date
from functools import lru_cache
from pathlib import Path
from typing import BinaryIO, Literal, Optional, Union

from pydantic import ValidationError

from cfr_mediation.config import settings
from cfr_mediation.errors import IngestError, UnknownBand, UnknownDataset, UnknownLabel
from cfr_mediation.models import (
    AgeBand,
    BandSchema,
    CohortCollection,
    CohortSeries,
    Frozen,
    ScalarTable,
    StratifiedCohort,
    ValidationIssue,
    ValidationReport,
)

logger = logging.getLogger(__name__)

BUNDLED_DATASETS = (
    "countries_latest",
    "italy_series",
    "spain_series",
    "china_vs_italy_march9",
    "lombardy_ifr",
    "median_ages",
)

COLUMN_HEADER = "band,cases,deaths"
DIRECTIVES = ("#cohort,", "#series,", "#collection,", "#scalars,")

Dataset = Union[StratifiedCohort, CohortSeries, CohortCollection, ScalarTable]
DatasetKind = Literal["cohort", "series", "collection", "scalars"]


class ParsedDocument(Frozen):
    data: Dataset
    comments: tuple[str, ...] = ()
    report: ValidationReport = ValidationReport()


class DatasetEntry(Frozen):
    name: str
    kind: DatasetKind
    data: Dataset
    sha256: str
    path: str
    comments: tuple[str, ...] = ()
    report: ValidationReport = ValidationReport()

    def describe(self) -> dict:
        """Counts, date range and sources for listings"""
        summary = {"name": self.name, "kind": self.kind, "sha256": self.sha256}
        cohorts = cohorts_in(self.data)
        if cohorts:
            dates = [c.report_date for c in cohorts]
            # cumulative series: the latest snapshot holds the totals
            counted = cohorts[-1:] if isinstance(self.data, CohortSeries) else cohorts
            summary.update(
                cohorts=len(cohorts),
                first_date=min(dates).isoformat(),
                last_date=max(dates).isoformat(),
                total_cases=sum(c.total_cases for c in counted),
                total_deaths=sum(c.total_deaths for c in counted),
                sources=sorted({c.source for c in cohorts}),
            )
        else:
            summary.update(entries=len(self.data.values))
        summary.update(errors=len(self.report.errors), warnings=len(self.report.warnings))
        return summary


def kind_of(data: Dataset) -> DatasetKind:
    if isinstance(data, StratifiedCohort):
        return "cohort"
    if isinstance(data, CohortSeries):
        return "series"
    if isinstance(data, CohortCollection):
        return "collection"
    return "scalars"


def cohorts_in(data: Dataset) -> list[StratifiedCohort]:
    if isinstance(data, StratifiedCohort):
        return [data]
    if isinstance(data, CohortSeries):
        return list(data.snapshots)
    if isinstance(data, CohortCollection):
        return list(data.cohorts)
    return []


def cohort_location(dataset: str, cohort: StratifiedCohort) -> str:
    return f"{dataset}/{cohort.label}@{cohort.report_date.isoformat()}"


def check_cohort(cohort: StratifiedCohort, dataset: str) -> ValidationReport:
    """Re-check cohort invariants, including on objects built without validation"""
    errors, warnings = [], []
    where = cohort_location(dataset, cohort)
    labels = cohort.band_schema.labels
    if len(cohort.cases) != len(labels) or len(cohort.deaths) != len(labels):
        errors.append(ValidationIssue(location=where, message=f"expected {len(labels)} bands of counts"))
        return ValidationReport(errors=tuple(errors))
    for band, n, d in zip(labels, cohort.cases, cohort.deaths):
        if n < 0 or d < 0:
            errors.append(ValidationIssue(location=f"{where}/{band}", message="negative count"))
        elif d > n:
            errors.append(
                ValidationIssue(location=f"{where}/{band}", message=f"deaths exceed cases ({d} > {n})")
            )
    if sum(cohort.cases) < 1:
        errors.append(ValidationIssue(location=where, message="total cases must be at least 1"))
    for message in cohort.total_mismatches():
        warnings.append(ValidationIssue(location=where, message=message))
    return ValidationReport(errors=tuple(errors), warnings=tuple(warnings))


def check_dataset(data: Dataset, dataset: str) -> ValidationReport:
    report = ValidationReport()
    for cohort in cohorts_in(data):
        report = report.merged(check_cohort(cohort, dataset))
    if isinstance(data, CohortSeries):
        where = f"{dataset}/{data.label}"
        report = report.merged(
            ValidationReport(
                warnings=tuple(
                    ValidationIssue(location=where, message=message)
                    for message in data.monotonicity_issues()
                )
            )
        )
    return report


class _Block:
    """One #cohort block while its rows are being read"""

    def __init__(self, label: str, report_date: date, source: str, line: int):
        self.label = label
        self.report_date = report_date
        self.source = source
        self.line = line
        self.bands: list[AgeBand] = []
        self.cases: list[int] = []
        self.deaths: list[int] = []
        self.total: Optional[tuple[int, int]] = None
        self.saw_header = False


class _Parser:
    def __init__(self, text: str, name: str, require_source: bool):
        self.text = text
        self.name = name
        self.require_source = require_source
        self.errors: list[ValidationIssue] = []
        self.warnings: list[ValidationIssue] = []
        self.comments: list[str] = []
        self.container: Optional[tuple[str, str]] = None  # (directive, name)
        self.blocks: list[_Block] = []
        self.scalars: dict[str, float] = {}

    def error(self, line: int, message: str) -> None:
        self.errors.append(ValidationIssue(location=f"{self.name}:{line}", message=message))

    def run(self) -> Optional[Dataset]:
        for lineno, raw in enumerate(self.text.splitlines(), start=1):
            line = raw.rstrip("\r")
            if not line.strip():
                continue
            if line.startswith(DIRECTIVES):
                self.directive(lineno, line)
            elif line.startswith("#"):
                if self.container is not None or self.blocks:
                    self.warnings.append(
                        ValidationIssue(
                            location=f"{self.name}:{lineno}",
                            message="comment after the first directive is not preserved",
                        )
                    )
                else:
                    self.comments.append(line)
            else:
                self.row(lineno, line)

        if not any(c.startswith("# source:") for c in self.comments):
            issue = ValidationIssue(location=self.name, message="missing '# source:' comment")
            (self.errors if self.require_source else self.warnings).append(issue)

        if self.container is None and not self.blocks:
            self.error(1, "malformed header: no #cohort, #series, #collection or #scalars directive")
            return None
        if self.container is not None and self.container[0] == "#scalars":
            if not self.scalars:
                self.error(1, "scalar table has no rows")
                return None
            return ScalarTable(name=self.container[1], values=self.scalars)
        cohorts = [c for c in (self.build(block) for block in self.blocks) if c is not None]
        if self.errors:
            return None
        return self.assemble(cohorts)

    def directive(self, lineno: int, line: str) -> None:
        head, _, rest = line.partition(",")
        if head == "#cohort":
            parts = rest.split(",", 2)
            if len(parts) < 2 or not parts[0].strip():
                self.error(lineno, "malformed header: expected #cohort,<label>,<date>,<source>")
                return
            try:
                report_date = date.fromisoformat(parts[1].strip())
            except ValueError:
                self.error(lineno, f"malformed header: bad date {parts[1]!r}")
                return
            source = parts[2].strip() if len(parts) == 3 else ""
            if self.container is None and self.blocks:
                self.error(lineno, "multiple #cohort blocks need a #series or #collection header")
                return
            if self.container is not None and self.container[0] == "#scalars":
                self.error(lineno, "#cohort block inside a scalar table")
                return
            self.blocks.append(_Block(parts[0].strip(), report_date, source, lineno))
            return
        if self.container is not None or self.blocks:
            self.error(lineno, f"malformed header: {head} must be the first directive")
            return
        if not rest.strip() or "," in rest:
            self.error(lineno, f"malformed header: expected {head},<name>")
            return
        self.container = (head, rest.strip())

    def row(self, lineno: int, line: str) -> None:
        if self.container is not None and self.container[0] == "#scalars":
            self.scalar_row(lineno, line)
            return
        if not self.blocks:
            self.error(lineno, "data row before any #cohort header")
            return
        block = self.blocks[-1]
        if not block.saw_header:
            if line.replace(" ", "") != COLUMN_HEADER:
                self.error(lineno, f"malformed header: expected '{COLUMN_HEADER}'")
            block.saw_header = True
            return
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 3:
            self.error(lineno, f"expected 3 fields, found {len(fields)}")
            return
        try:
            cases, deaths = int(fields[1]), int(fields[2])
        except ValueError:
            self.error(lineno, f"counts must be integers: {line!r}")
            return
        if cases < 0 or deaths < 0:
            self.error(lineno, f"negative count in band {fields[0]}")
            return
        if fields[0] == "total":
            if block.total is not None:
                self.error(lineno, "duplicate total row")
            block.total = (cases, deaths)
            return
        if block.total is not None:
            self.error(lineno, "band row after the total row")
            return
        try:
            band = AgeBand.parse(fields[0])
        except UnknownBand as e:
            self.error(lineno, str(e))
            return
        if band in block.bands:
            self.error(lineno, f"duplicate band {band.label}")
            return
        block.bands.append(band)
        block.cases.append(cases)
        block.deaths.append(deaths)

    def scalar_row(self, lineno: int, line: str) -> None:
        label, sep, value = line.rpartition(",")
        if not sep or not label.strip():
            self.error(lineno, "expected label,value")
            return
        try:
            number = float(value)
        except ValueError:
            self.error(lineno, f"value must be a number: {value!r}")
            return
        if label.strip() in self.scalars:
            self.error(lineno, f"duplicate label {label.strip()!r}")
            return
        self.scalars[label.strip()] = number

    def build(self, block: _Block) -> Optional[StratifiedCohort]:
        if not block.bands:
            self.error(block.line, f"cohort {block.label} has no band rows")
            return None
        try:
            schema = BandSchema(bands=tuple(block.bands))
        except ValidationError as e:
            self.error(block.line, e.errors()[0]["msg"])
            return None
        stated = block.total or (None, None)
        draft = StratifiedCohort.model_construct(
            label=block.label,
            report_date=block.report_date,
            source=block.source,
            band_schema=schema,
            cases=tuple(block.cases),
            deaths=tuple(block.deaths),
            stated_cases=stated[0],
            stated_deaths=stated[1],
        )
        report = check_cohort(draft, self.name)
        self.errors.extend(report.errors)
        if report.errors:
            return None
        return StratifiedCohort.model_validate(dict(draft))

    def assemble(self, cohorts: list[StratifiedCohort]) -> Optional[Dataset]:
        if self.container is None:
            return cohorts[0]
        directive, name = self.container
        if not cohorts:
            self.error(1, f"{directive} {name} holds no cohorts")
            return None
        if directive == "#series":
            dates = [c.report_date for c in cohorts]
            for d in sorted({d for d in dates if dates.count(d) > 1}):
                self.errors.append(
                    ValidationIssue(location=f"{self.name}/{name}", message=f"duplicate date {d.isoformat()}")
                )
            schemas = {c.band_schema for c in cohorts}
            if len(schemas) > 1:
                self.errors.append(
                    ValidationIssue(location=f"{self.name}/{name}", message="snapshots use different band schemas")
                )
            if self.errors:
                return None
            return CohortSeries(label=name, snapshots=tuple(sorted(cohorts, key=lambda c: c.report_date)))
        labels = [c.label for c in cohorts]
        duplicates = sorted({label for label in labels if labels.count(label) > 1})
        for label in duplicates:
            self.errors.append(
                ValidationIssue(location=f"{self.name}/{name}", message=f"duplicate cohort label {label!r}")
            )
        if duplicates:
            return None
        return CohortCollection(name=name, cohorts=tuple(cohorts))


def _read(source: Union[str, Path, bytes, BinaryIO]) -> tuple[bytes, str]:
    if isinstance(source, bytes):
        return source, "<bytes>"
    if isinstance(source, (str, Path)):
        path = Path(source)
        return path.read_bytes(), path.stem
    content = source.read()
    return content, Path(getattr(source, "name", "<stream>")).stem


def parse_document(
    source: Union[str, Path, bytes, BinaryIO],
    name: Optional[str] = None,
    require_source: bool = False,
) -> ParsedDocument:
    """Parse a dataset file, keeping its comment lines; raises IngestError on any error"""
    content, default_name = _read(source)
    name = name or default_name
    try:
        text = content.decode("utf-8")
    except UnicodeDecodeError as e:
        report = ValidationReport(errors=(ValidationIssue(location=name, message=f"not UTF-8: {e}"),))
        raise IngestError(name, report) from None
    parser = _Parser(text, name, require_source)
    data = parser.run()
    report = ValidationReport(errors=tuple(parser.errors), warnings=tuple(parser.warnings))
    if data is None or report.errors:
        raise IngestError(name, report)
    report = report.merged(check_dataset(data, name))
    return ParsedDocument(data=data, comments=tuple(parser.comments), report=report)


def parse_cohort_file(
    source: Union[str, Path, bytes, BinaryIO], name: Optional[str] = None
) -> tuple[Dataset, ValidationReport]:
    document = parse_document(source, name=name)
    return document.data, document.report


def _cohort_lines(cohort: StratifiedCohort) -> list[str]:
    lines = [f"#cohort,{cohort.label},{cohort.report_date.isoformat()},{cohort.source}", COLUMN_HEADER]
    for band, n, d in zip(cohort.band_schema.labels, cohort.cases, cohort.deaths):
        lines.append(f"{band},{n},{d}")
    if cohort.stated_cases is not None or cohort.stated_deaths is not None:
        stated_cases = cohort.stated_cases if cohort.stated_cases is not None else cohort.total_cases
        stated_deaths = cohort.stated_deaths if cohort.stated_deaths is not None else cohort.total_deaths
        lines.append(f"total,{stated_cases},{stated_deaths}")
    return lines


def serialize(data: Dataset, comments: tuple[str, ...] = ()) -> str:
    lines = list(comments)
    if isinstance(data, StratifiedCohort):
        lines.extend(_cohort_lines(data))
    elif isinstance(data, CohortSeries):
        lines.append(f"#series,{data.label}")
        for snapshot in data.snapshots:
            lines.extend(_cohort_lines(snapshot))
    elif isinstance(data, CohortCollection):
        lines.append(f"#collection,{data.name}")
        for cohort in data.cohorts:
            lines.extend(_cohort_lines(cohort))
    else:
        lines.append(f"#scalars,{data.name}")
        lines.extend(f"{label},{value!r}" for label, value in data.values.items())
    return "\n".join(lines) + "\n"


def serialize_document(document: ParsedDocument) -> str:
    return serialize(document.data, document.comments)


def _entry(name: str, path: Path, require_source: bool) -> DatasetEntry:
    content = path.read_bytes()
    document = parse_document(content, name=name, require_source=require_source)
    entry = DatasetEntry(
        name=name,
        kind=kind_of(document.data),
        data=document.data,
        sha256=hashlib.sha256(content).hexdigest(),
        path=str(path),
        comments=document.comments,
        report=document.report,
    )
    for issue in entry.report.warnings:
        logger.warning(f"{issue.location}: {issue.message}")
    logger.info(
        f"Loaded dataset {name} ({entry.kind}, {len(cohorts_in(entry.data))} cohorts, "
        f"{len(entry.report.warnings)} warnings, sha256 {entry.sha256[:12]})"
    )
    return entry


@lru_cache(maxsize=None)
def _load_bundled(name: str, directory: Path) -> DatasetEntry:
    return _entry(name, directory / f"{name}.csv", require_source=True)


def load_bundled(name: str, data_dir: Optional[Path] = None) -> DatasetEntry:
    """Parsed, validated bundled dataset by name"""
    if name not in BUNDLED_DATASETS:
        raise UnknownDataset(name, BUNDLED_DATASETS)
    return _load_bundled(name, Path(data_dir or settings.bundled_dir))


def load_path(path: Union[str, Path]) -> DatasetEntry:
    """Dataset from a user file, named after the file stem"""
    path = Path(path)
    return _entry(path.stem, path, require_source=False)


def served_path(name: str) -> Optional[Path]:
    """Path under settings.data_dir that name resolves to, or None"""
    if settings.data_dir is None:
        return None
    root = settings.data_dir.resolve()
    path = (root / name).resolve()
    return path if path.is_relative_to(root) else None


def load_dataset(name_or_path: str, data_dir: Optional[Path] = None, any_path: bool = True) -> DatasetEntry:
    """Bundled dataset name, or a path to a dataset file.

    With any_path off only files under settings.data_dir are read, and any other
    path fails the same way whether or not it exists.
    """
    if name_or_path in BUNDLED_DATASETS:
        return load_bundled(name_or_path, data_dir)
    path = Path(name_or_path) if any_path else served_path(name_or_path)
    if path is not None and path.suffix and path.is_file():
        return load_path(path)
    raise UnknownDataset(name_or_path, BUNDLED_DATASETS)


class DatasetRegistry(Frozen):
    entries: dict[str, DatasetEntry]

    @property
    def cohorts(self) -> dict[str, StratifiedCohort]:
        """Every cohort keyed by <dataset>/<label>; series snapshots add @<date>"""
        keyed = {}
        for name, entry in sorted(self.entries.items()):
            if isinstance(entry.data, CohortSeries):
                for snapshot in entry.data.snapshots:
                    keyed[f"{name}/{snapshot.label}@{snapshot.report_date.isoformat()}"] = snapshot
            else:
                for cohort in cohorts_in(entry.data):
                    keyed[f"{name}/{cohort.label}"] = cohort
        return keyed

    @property
    def series(self) -> dict[str, CohortSeries]:
        return {
            f"{name}/{entry.data.label}": entry.data
            for name, entry in sorted(self.entries.items())
            if isinstance(entry.data, CohortSeries)
        }

    @property
    def scalars(self) -> dict[str, ScalarTable]:
        return {
            f"{name}/{entry.data.name}": entry.data
            for name, entry in sorted(self.entries.items())
            if isinstance(entry.data, ScalarTable)
        }

    def entry(self, name: str) -> DatasetEntry:
        if name not in self.entries:
            raise UnknownDataset(name, self.entries)
        return self.entries[name]

    def cohort(self, label: str, dataset: Optional[str] = None) -> StratifiedCohort:
        """Resolve a cohort label, qualified as <dataset>/<label> or within one dataset.

        Series snapshots are addressed as <label>@<date>; a bare series label
        means its latest snapshot.
        """
        if dataset is None:
            dataset, sep, label = label.partition("/")
            if not sep:
                raise UnknownLabel(dataset, self.cohorts)
        return resolve_cohort(self.entry(dataset).data, label)


def resolve_cohort(data: Dataset, label: str) -> StratifiedCohort:
    if isinstance(data, CohortCollection):
        return data.get(label)
    if isinstance(data, StratifiedCohort):
        if label != data.label:
            raise UnknownLabel(label, [data.label])
        return data
    if isinstance(data, CohortSeries):
        known = [data.label] + [f"{data.label}@{d.isoformat()}" for d in data.dates]
        name, _, when = label.partition("@")
        if name != data.label:
            raise UnknownLabel(label, known)
        if not when:
            return data.snapshots[-1]
        for snapshot in data.snapshots:
            if snapshot.report_date.isoformat() == when:
                return snapshot
        raise UnknownLabel(label, known)
    raise UnknownLabel(label, [])


def build_registry(
    names: Optional[tuple[str, ...]] = None, data_dir: Optional[Path] = None
) -> DatasetRegistry:
    """Registry of bundled datasets, all of them by default"""
    names = names or BUNDLED_DATASETS
    return DatasetRegistry(entries={name: load_bundled(name, data_dir) for name in names})


def validate_registry(registry: DatasetRegistry) -> ValidationReport:
    """Re-check every registered object; same result however often it runs"""
    report = ValidationReport()
    for name in sorted(registry.entries):
        report = report.merged(check_dataset(registry.entries[name].data, name))
    return report
