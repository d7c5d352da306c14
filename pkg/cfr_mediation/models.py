import math
import re
from datetime import date
from enum import Enum
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

from cfr_mediation.errors import UnknownBand, UnknownLabel

_BOUNDED = re.compile(r"^(\d+)-(\d+)$")
_OPEN = re.compile(r"^(\d+)\+$")


class Frozen(BaseModel):
    model_config = ConfigDict(frozen=True)


class AgeBand(Frozen):
    lower: int = Field(ge=0)
    upper: Optional[int] = None  # None marks the open-ended terminal band

    @model_validator(mode="after")
    def check_bounds(self) -> "AgeBand":
        if self.upper is not None and self.upper < self.lower:
            raise ValueError(f"band upper {self.upper} below lower {self.lower}")
        return self

    @computed_field
    @property
    def label(self) -> str:
        if self.upper is None:
            return f"{self.lower}+"
        return f"{self.lower}-{self.upper}"

    @property
    def is_open(self) -> bool:
        return self.upper is None

    @classmethod
    def parse(cls, label: str) -> "AgeBand":
        """Canonical labels only, e.g. 5-9 but not 05-9, so a parsed file serializes back verbatim"""
        text = label.strip()
        band = None
        match = _BOUNDED.match(text)
        if match:
            lower, upper = int(match.group(1)), int(match.group(2))
            if upper >= lower:
                band = cls(lower=lower, upper=upper)
        else:
            match = _OPEN.match(text)
            if match:
                band = cls(lower=int(match.group(1)))
        if band is None or band.label != text:
            raise UnknownBand(label)
        return band

    def __str__(self) -> str:
        return self.label


class BandSchema(Frozen):
    bands: tuple[AgeBand, ...]

    @field_validator("bands")
    @classmethod
    def check_ordering(cls, bands: tuple[AgeBand, ...]) -> tuple[AgeBand, ...]:
        if not bands:
            raise ValueError("a band schema needs at least one band")
        for previous, band in zip(bands, bands[1:]):
            if previous.upper is None:
                raise ValueError(f"open-ended band {previous.label} must be the last band")
            if band.lower <= previous.upper:
                raise ValueError(f"bands {previous.label} and {band.label} overlap or are unsorted")
        return bands

    @classmethod
    def from_labels(cls, labels) -> "BandSchema":
        return cls(bands=tuple(AgeBand.parse(label) for label in labels))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(band.label for band in self.bands)

    def __len__(self) -> int:
        return len(self.bands)

    def index(self, band: "AgeBand | str") -> int:
        label = band.label if isinstance(band, AgeBand) else band
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownBand(label) from None


TEN_YEAR_SCHEMA = BandSchema.from_labels(
    ["0-9", "10-19", "20-29", "30-39", "40-49", "50-59", "60-69", "70-79", "80+"]
)


class StratifiedCohort(Frozen):
    label: str = Field(min_length=1)
    report_date: date
    source: str = ""
    band_schema: BandSchema
    cases: tuple[int, ...]
    deaths: tuple[int, ...]
    # Totals as printed by the source, cross-checked against the band sums
    stated_cases: Optional[int] = None
    stated_deaths: Optional[int] = None

    @model_validator(mode="after")
    def check_counts(self) -> "StratifiedCohort":
        size = len(self.band_schema)
        if len(self.cases) != size or len(self.deaths) != size:
            raise ValueError(f"{self.label}: expected {size} bands of counts")
        for band, n, d in zip(self.band_schema.labels, self.cases, self.deaths):
            if n < 0 or d < 0:
                raise ValueError(f"{self.label} {band}: negative count")
            if d > n:
                raise ValueError(f"{self.label} {band}: deaths exceed cases ({d} > {n})")
        if sum(self.cases) < 1:
            raise ValueError(f"{self.label}: total cases must be at least 1")
        return self

    @property
    def total_cases(self) -> int:
        return sum(self.cases)

    @property
    def total_deaths(self) -> int:
        return sum(self.deaths)

    def total_mismatches(self) -> list[str]:
        """Stated totals that disagree with the per-band sums"""
        issues = []
        if self.stated_cases is not None and self.stated_cases != self.total_cases:
            issues.append(
                f"stated total cases {self.stated_cases} differ from band sum {self.total_cases}"
            )
        if self.stated_deaths is not None and self.stated_deaths != self.total_deaths:
            issues.append(
                f"stated total deaths {self.stated_deaths} differ from band sum {self.total_deaths}"
            )
        return issues


class CohortSeries(Frozen):
    label: str = Field(min_length=1)
    snapshots: tuple[StratifiedCohort, ...]

    @field_validator("snapshots")
    @classmethod
    def check_snapshots(cls, snapshots: tuple[StratifiedCohort, ...]) -> tuple[StratifiedCohort, ...]:
        if not snapshots:
            raise ValueError("a series needs at least one snapshot")
        schema = snapshots[0].band_schema
        for previous, snapshot in zip(snapshots, snapshots[1:]):
            if snapshot.band_schema != schema:
                raise ValueError(f"snapshot {snapshot.report_date} uses a different band schema")
            if snapshot.report_date <= previous.report_date:
                raise ValueError(
                    f"snapshot dates must increase strictly: {previous.report_date} then {snapshot.report_date}"
                )
        return snapshots

    @property
    def band_schema(self) -> BandSchema:
        return self.snapshots[0].band_schema

    @property
    def dates(self) -> tuple[date, ...]:
        return tuple(snapshot.report_date for snapshot in self.snapshots)

    def monotonicity_issues(self) -> list[str]:
        """Cumulative counts that went down between consecutive snapshots"""
        issues = []
        labels = self.band_schema.labels
        for previous, snapshot in zip(self.snapshots, self.snapshots[1:]):
            for field in ("cases", "deaths"):
                before, after = getattr(previous, field), getattr(snapshot, field)
                for band, old, new in zip(labels, before, after):
                    if new < old:
                        issues.append(
                            f"{snapshot.report_date} {band}: cumulative {field} fell from {old} to {new}"
                        )
        return issues


class CohortCollection(Frozen):
    name: str = Field(min_length=1)
    cohorts: tuple[StratifiedCohort, ...]

    @field_validator("cohorts")
    @classmethod
    def check_labels(cls, cohorts: tuple[StratifiedCohort, ...]) -> tuple[StratifiedCohort, ...]:
        if not cohorts:
            raise ValueError("a collection needs at least one cohort")
        labels = [cohort.label for cohort in cohorts]
        duplicates = sorted({label for label in labels if labels.count(label) > 1})
        if duplicates:
            raise ValueError(f"duplicate cohort labels: {', '.join(duplicates)}")
        return cohorts

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(cohort.label for cohort in self.cohorts)

    def get(self, label: str) -> StratifiedCohort:
        for cohort in self.cohorts:
            if cohort.label == label:
                return cohort
        raise UnknownLabel(label, self.labels)


class ScalarTable(Frozen):
    name: str = Field(min_length=1)
    values: dict[str, float]

    def get(self, label: str) -> float:
        if label not in self.values:
            raise UnknownLabel(label, self.values)
        return self.values[label]


class GroupDistribution(Frozen):
    band_schema: BandSchema
    weights: tuple[float, ...]

    @model_validator(mode="after")
    def check_weights(self) -> "GroupDistribution":
        if len(self.weights) != len(self.band_schema):
            raise ValueError("one weight per band expected")
        if any(not 0.0 <= w <= 1.0 for w in self.weights):
            raise ValueError("weights must lie in [0, 1]")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        return self

    def weight(self, band: "AgeBand | str") -> float:
        return self.weights[self.band_schema.index(band)]


class RateTable(Frozen):
    band_schema: BandSchema
    rates: tuple[Optional[float], ...]  # None where the band has no cases

    @model_validator(mode="after")
    def check_rates(self) -> "RateTable":
        if len(self.rates) != len(self.band_schema):
            raise ValueError("one rate per band expected")
        if any(r is not None and not 0.0 <= r <= 1.0 for r in self.rates):
            raise ValueError("rates must lie in [0, 1]")
        return self

    def rate(self, band: "AgeBand | str") -> Optional[float]:
        return self.rates[self.band_schema.index(band)]


class PooledSummary(Frozen):
    cohorts: int
    total_cases: int
    total_deaths: int
    pooled_cfr: float
    first_date: date
    last_date: date


class ValidationIssue(Frozen):
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.message}"


class ValidationReport(Frozen):
    errors: tuple[ValidationIssue, ...] = ()
    warnings: tuple[ValidationIssue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.errors

    def merged(self, *others: "ValidationReport") -> "ValidationReport":
        errors, warnings = list(self.errors), list(self.warnings)
        for other in others:
            errors.extend(other.errors)
            warnings.extend(other.warnings)
        return ValidationReport(errors=tuple(errors), warnings=tuple(warnings))


class EffectKind(str, Enum):
    TCE = "TCE"
    CDE = "CDE"
    NDE = "NDE"
    NIE = "NIE"
    EXPECTED_CDE = "ExpectedCDE"
    MODERATION_RESIDUAL = "ModerationResidual"


class UndefinedBandPolicy(str, Enum):
    ERROR = "error"
    ZERO = "zero"


class EffectEstimate(Frozen):
    kind: EffectKind
    control: str
    treatment: str
    band: Optional[str] = None
    reference: Optional[str] = None
    value: float
    undefined_band_policy_used: bool = False

    @model_validator(mode="after")
    def check_shape(self) -> "EffectEstimate":
        # A moderation residual is a difference of effects and may reach 2 in magnitude
        bound = 2.0 if self.kind is EffectKind.MODERATION_RESIDUAL else 1.0
        if not -bound <= self.value <= bound:
            raise ValueError(f"{self.kind.value} value {self.value} out of range")
        if (self.band is not None) != (self.kind is EffectKind.CDE):
            raise ValueError("band is set exactly for CDE estimates")
        if (self.reference is not None) != (self.kind is EffectKind.EXPECTED_CDE):
            raise ValueError("reference is set exactly for expected-CDE estimates")
        return self


class EffectSummary(Frozen):
    control: str
    treatment: str
    tce: EffectEstimate
    nde: EffectEstimate
    nie: EffectEstimate
    moderation_residual: EffectEstimate
    subtractivity_residuals: tuple[float, float]
    cde: Optional[EffectEstimate] = None
    expected_cde: Optional[EffectEstimate] = None
    policy: UndefinedBandPolicy = UndefinedBandPolicy.ERROR


class TracePoint(Frozen):
    report_date: date
    tce: float
    nde: float
    nie: float
    undefined_band_policy_used: bool = False


class EffectTrace(Frozen):
    control: str
    treatment: str
    points: tuple[TracePoint, ...]

    @field_validator("points")
    @classmethod
    def check_dates(cls, points: tuple[TracePoint, ...]) -> tuple[TracePoint, ...]:
        for previous, point in zip(points, points[1:]):
            if point.report_date <= previous.report_date:
                raise ValueError("trace dates must increase strictly")
        return points

    def values(self, kind: EffectKind) -> list[float]:
        attribute = kind.value.lower()
        if attribute not in ("tce", "nde", "nie"):
            raise ValueError(f"traces carry TCE, NDE and NIE, not {kind.value}")
        return [getattr(point, attribute) for point in self.points]

    def sign_changes(self, kind: EffectKind) -> list[tuple[date, date]]:
        """Consecutive dates between which the effect changes sign"""
        changes = []
        values = self.values(kind)
        for i in range(1, len(values)):
            if values[i - 1] * values[i] < 0:
                changes.append((self.points[i - 1].report_date, self.points[i].report_date))
        return changes

    def peak(self, kind: EffectKind) -> tuple[date, float]:
        values = self.values(kind)
        best = max(range(len(values)), key=lambda i: values[i])
        return self.points[best].report_date, values[best]


class PairwiseEffectMatrix(Frozen):
    kind: EffectKind
    labels: tuple[str, ...]
    # values[i][j]: effect of switching from control labels[j] to treatment labels[i]
    values: tuple[tuple[float, ...], ...]
    coerced: tuple[tuple[bool, ...], ...]
    ordering_rule: str
    policy: UndefinedBandPolicy

    @model_validator(mode="after")
    def check_square(self) -> "PairwiseEffectMatrix":
        n = len(self.labels)
        if len(self.values) != n or any(len(row) != n for row in self.values):
            raise ValueError("matrix must be square over its labels")
        if len(self.coerced) != n or any(len(row) != n for row in self.coerced):
            raise ValueError("coercion flags must match the matrix shape")
        if any(self.values[i][i] != 0.0 for i in range(n)):
            raise ValueError("diagonal must be exactly zero")
        return self

    def value(self, treatment: str, control: str) -> float:
        return self.values[self._index(treatment)][self._index(control)]

    def _index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabel(label, self.labels) from None

    def row_means(self) -> dict[str, float]:
        """Mean effect of each row as treatment over every other cohort as control"""
        n = len(self.labels)
        if n < 2:
            return {label: 0.0 for label in self.labels}
        return {
            label: math.fsum(v for j, v in enumerate(self.values[i]) if j != i) / (n - 1)
            for i, label in enumerate(self.labels)
        }

    def off_diagonal(self) -> list[tuple[str, str, float]]:
        """(treatment, control, value) for every ordered pair of distinct cohorts"""
        return [
            (self.labels[i], self.labels[j], self.values[i][j])
            for i in range(len(self.labels))
            for j in range(len(self.labels))
            if i != j
        ]


class SimpsonVerdict(Frozen):
    control: str
    treatment: str
    band_labels: tuple[str, ...]
    per_band_cde_signs: tuple[Optional[int], ...]  # None for skipped bands
    total_sign: int
    is_reversal: bool
    skipped_bands: tuple[str, ...]

    @model_validator(mode="after")
    def check_verdict(self) -> "SimpsonVerdict":
        if self.is_reversal:
            signs = [s for s in self.per_band_cde_signs if s is not None]
            if self.total_sign == 0:
                raise ValueError("a reversal needs a nonzero total effect")
            if any(s == self.total_sign for s in signs):
                raise ValueError("a reversal cannot have a band agreeing with the total")
            if not any(s == -self.total_sign for s in signs):
                raise ValueError("a reversal needs at least one strictly opposite band")
        return self

    @property
    def tied_bands(self) -> tuple[str, ...]:
        return tuple(
            label for label, sign in zip(self.band_labels, self.per_band_cde_signs) if sign == 0
        )


class DiscreteScm(Frozen):
    x_arity: int = Field(ge=1)
    p_x_given_t: tuple[tuple[float, ...], tuple[float, ...]]
    p_y_given_tx: tuple[tuple[float, ...], tuple[float, ...]]
    # (t, x) cells whose outcome probability is a placeholder for an empty band
    undefined_cells: tuple[tuple[int, int], ...] = ()

    @model_validator(mode="after")
    def check_tables(self) -> "DiscreteScm":
        k = self.x_arity
        for name, table in (("p_x_given_t", self.p_x_given_t), ("p_y_given_tx", self.p_y_given_tx)):
            if any(len(row) != k for row in table):
                raise ValueError(f"{name} rows must have {k} entries")
            if any(not 0.0 <= p <= 1.0 for row in table for p in row):
                raise ValueError(f"{name} entries must lie in [0, 1]")
        for t, row in enumerate(self.p_x_given_t):
            if abs(math.fsum(row) - 1.0) > 1e-12:
                raise ValueError(f"p_x_given_t row {t} sums to {math.fsum(row)}, not 1")
        for t, x in self.undefined_cells:
            if t not in (0, 1) or not 0 <= x < k:
                raise ValueError(f"undefined cell ({t}, {x}) outside the tables")
        return self

    @property
    def t_arity(self) -> int:
        return 2


class MediationEffects(Frozen):
    tce: float
    cde: tuple[Optional[float], ...]
    nde: float
    nie: float
    undefined_band_policy_used: bool = False

    def as_tuple(self) -> tuple[float, ...]:
        return (self.tce, *[c if c is not None else math.nan for c in self.cde], self.nde, self.nie)


class SyntheticCohortPair(Frozen):
    control: StratifiedCohort
    treatment: StratifiedCohort
    n_per_arm: int
    seed: int


class EffectSpread(Frozen):
    exact: float
    estimate: float
    standard_error: float
    median_abs_error: float

    @property
    def within_three_se(self) -> bool:
        return abs(self.estimate - self.exact) <= 3.0 * self.standard_error + 1e-15


class ReplicateStudy(Frozen):
    n_per_arm: int
    replicates: int
    seed: int
    tce: EffectSpread
    nde: EffectSpread
    nie: EffectSpread

    @property
    def consistent(self) -> bool:
        return self.tce.within_three_se and self.nde.within_three_se and self.nie.within_three_se


class OracleReport(Frozen):
    k: int
    instances: int
    seed: int
    max_discrepancy: float
    max_subtractivity_residual: float
    corner_cases: int
    tolerance: float
    sampling: Optional[ReplicateStudy] = None

    @property
    def passed(self) -> bool:
        return self.max_discrepancy <= self.tolerance and self.max_subtractivity_residual <= self.tolerance


class Ranking(Frozen):
    criterion: str
    labels: tuple[str, ...]
    scores: tuple[float, ...]
    ascending: bool = True
    tied: tuple[bool, ...] = ()

    @model_validator(mode="after")
    def check_order(self) -> "Ranking":
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("ranking labels must be unique")
        if len(self.scores) != len(self.labels):
            raise ValueError("one score per label expected")
        pairs = zip(self.scores, self.scores[1:])
        if not all((a <= b) if self.ascending else (a >= b) for a, b in pairs):
            raise ValueError("scores must be sorted in the ranking direction")
        return self

    def rank(self, label: str) -> int:
        try:
            return self.labels.index(label) + 1
        except ValueError:
            raise UnknownLabel(label, self.labels) from None

    def score(self, label: str) -> float:
        return self.scores[self.rank(label) - 1]


class PValueMethod(Frozen):
    kind: Literal["t_approx", "permutation"] = "t_approx"
    seed: Optional[int] = None
    reps: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def check_permutation(self) -> "PValueMethod":
        if self.kind == "permutation" and (self.seed is None or self.reps is None):
            raise ValueError("permutation p-values need a seed and a number of reps")
        return self


class CorrelationResult(Frozen):
    method: Literal["spearman", "pearson"]
    coefficient: float = Field(ge=-1.0, le=1.0)
    p_value: float = Field(ge=0.0, le=1.0)
    p_method: PValueMethod
    n: int

    @model_validator(mode="after")
    def check_floor(self) -> "CorrelationResult":
        if self.p_method.kind == "permutation" and self.p_value < 1.0 / (self.p_method.reps + 1):
            raise ValueError("permutation p-value below 1/(reps+1)")
        return self


class DiscordanceResult(Frozen):
    count: int
    total: int
    pairs: tuple[tuple[str, str], ...]  # (treatment, control)
    zero_pairs: tuple[tuple[str, str], ...]


class CorrelationReport(Frozen):
    test: str
    primary: CorrelationResult
    # Raw-value Pearson alongside a rank correlation
    secondary: Optional[CorrelationResult] = None
    rank_deltas: Optional[dict[str, int]] = None
    discordance: Optional[DiscordanceResult] = None


class DatasetRef(Frozen):
    name: str
    sha256: str


class Provenance(Frozen):
    command: str
    datasets: tuple[DatasetRef, ...] = ()
    flags: dict[str, Any] = {}
    seed: Optional[int] = None


class OutputDocument(Frozen):
    format: Literal["table", "json", "csv"]
    provenance: Provenance
    payload: dict[str, Any]
