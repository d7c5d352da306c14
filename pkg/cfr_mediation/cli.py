"""Command-line front end; results on stdout, logs on stderr"""

import argparse
import logging
import sys
from typing import Callable, Optional, Sequence

from pydantic import ValidationError

from cfr_mediation.config import settings
from cfr_mediation.errors import CfrMediationError
from cfr_mediation.ingest import BUNDLED_DATASETS, Dataset, cohorts_in, load_bundled
from cfr_mediation.messages import (
    BAND_HEADER,
    band_rows,
    format_csv,
    format_provenance,
    get_correlation_message,
    get_dataset_list_message,
    get_effects_message,
    get_matrix_message,
    get_mediation_effects_message,
    get_oracle_message,
    get_simpson_message,
    get_trace_message,
    get_validation_message,
    matrix_rows,
    trace_rows,
)
from cfr_mediation.models import OutputDocument, Provenance, PValueMethod, ScalarTable
from cfr_mediation.oracle import (
    exact_effects,
    mediation_formula_effects,
    moderation_scm,
    parse_scm_file,
    validate_oracle,
)
from cfr_mediation.queries import (
    correlate_query,
    dataset_query,
    effects_query,
    matrix_query,
    simpson_query,
    trace_query,
)
from cfr_mediation.stats import CORRELATION_TESTS

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PROPERTY_FAILURE = 1
EXIT_USAGE = 2


def emit(document: OutputDocument, fmt: str, table: Callable[[], str], csv: Optional[Callable[[], str]] = None) -> None:
    """Write a result in the requested format"""
    if fmt == "json":
        print(document.model_dump_json(indent=2))
    elif fmt == "csv":
        if csv is None:
            raise CfrMediationError(f"{document.provenance.command} has no csv output")
        sys.stdout.write(csv())
    else:
        print(table())
        provenance = format_provenance(document.provenance)
        if provenance:
            print(provenance)


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def nonnegative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {value}")
    return value


def effects_command(args: argparse.Namespace) -> int:
    """TCE, NDE, NIE and friends for one cohort pair"""
    summary, document = effects_query(
        args.data, args.control, args.treatment, args.band, args.reference, args.undefined_band
    )
    emit(document, args.format, lambda: get_effects_message(summary))
    return EXIT_OK


def trace_command(args: argparse.Namespace) -> int:
    """Effects of every snapshot in a series against a fixed control"""
    result, document = trace_query(args.data, args.control, args.control_data, args.undefined_band)
    emit(
        document,
        args.format,
        lambda: get_trace_message(result),
        lambda: format_csv(("date", "tce", "nde", "nie"), trace_rows(result)),
    )
    return EXIT_OK


def matrix_command(args: argparse.Namespace) -> int:
    """Pairwise effect matrix, rows ordered by mean effect as treatment"""
    result, document = matrix_query(args.data, args.kind, args.undefined_band, args.workers)
    emit(
        document,
        args.format,
        lambda: get_matrix_message(result),
        lambda: format_csv(("treatment", *result.labels), matrix_rows(result)),
    )
    return EXIT_OK


def correlate_command(args: argparse.Namespace) -> int:
    """Association tests behind the country comparison"""
    method = PValueMethod(
        kind="permutation" if args.p == "permutation" else "t_approx",
        seed=(args.seed if args.seed is not None else settings.default_seed) if args.p == "permutation" else None,
        reps=(args.reps or settings.permutation_reps) if args.p == "permutation" else None,
    )
    report, document = correlate_query(
        args.data, args.test, args.median_ages, method, args.undefined_band, args.workers
    )

    def rows():
        primary = report.primary
        row = [report.test, primary.method, primary.coefficient, primary.p_value, primary.p_method.kind, primary.n]
        if report.discordance is not None:
            row += [report.discordance.count, report.discordance.total]
        else:
            row += ["", ""]
        return [row]

    emit(
        document,
        args.format,
        lambda: get_correlation_message(report),
        lambda: format_csv(("test", "method", "coefficient", "p_value", "p_method", "n", "discordant", "pairs"), rows()),
    )
    return EXIT_OK


def simpson_command(args: argparse.Namespace) -> int:
    """Per-band CDE signs against the sign of the total effect"""
    verdict, document = simpson_query(args.data, args.control, args.treatment)
    emit(
        document,
        args.format,
        lambda: get_simpson_message(verdict),
        lambda: format_csv(("band", "cde_sign"), zip(verdict.band_labels, verdict.per_band_cde_signs)),
    )
    return EXIT_OK


def validate_oracle_command(args: argparse.Namespace) -> int:
    """Exact counterfactuals against the mediation formulas"""
    if args.preset or args.scm_file:
        scm = moderation_scm() if args.preset == "moderation" else parse_scm_file(args.scm_file)
        exact, formula = exact_effects(scm), mediation_formula_effects(scm)
        document = OutputDocument(
            format="json",
            provenance=Provenance(
                command="validate-oracle", flags={"preset": args.preset, "scm_file": args.scm_file}
            ),
            payload={
                "scm": scm.model_dump(mode="json"),
                "exact": exact.model_dump(mode="json"),
                "formula": formula.model_dump(mode="json"),
            },
        )
        emit(document, args.format, lambda: get_mediation_effects_message(exact, formula))
        return EXIT_OK

    seed = args.seed if args.seed is not None else settings.default_seed
    report = validate_oracle(args.k, args.instances, seed, args.sample_n, args.replicates)
    document = OutputDocument(
        format="json",
        provenance=Provenance(
            command="validate-oracle",
            flags={"k": args.k, "instances": args.instances, "sample_n": args.sample_n, "replicates": args.replicates},
            seed=seed,
        ),
        payload={**report.model_dump(mode="json"), "passed": report.passed},
    )
    emit(document, args.format, lambda: get_oracle_message(report))
    if not report.passed:
        logger.error(f"Oracle suite failed: max discrepancy {report.max_discrepancy:.3e}")
        return EXIT_PROPERTY_FAILURE
    return EXIT_OK


def dataset_csv(data: Dataset) -> str:
    """Per-band counts, CFR and case share; label,value rows for scalar tables"""
    if isinstance(data, ScalarTable):
        return format_csv(("label", "value"), list(data.values.items()))
    return format_csv(BAND_HEADER, band_rows(cohorts_in(data)))


def datasets_command(args: argparse.Namespace) -> int:
    """List bundled datasets or show one with its validation report"""
    if args.action == "list":
        descriptions = [load_bundled(name).describe() for name in BUNDLED_DATASETS]
        document = OutputDocument(
            format="json",
            provenance=Provenance(command="datasets list"),
            payload={"datasets": descriptions},
        )
        emit(document, args.format, lambda: get_dataset_list_message(descriptions))
        return EXIT_OK

    if args.name is None:
        raise CfrMediationError("datasets show needs a dataset name")
    entry, document = dataset_query(args.name)
    emit(
        document,
        args.format,
        lambda: get_dataset_list_message([entry.describe()]) + "\n" + get_validation_message(entry.report),
        lambda: dataset_csv(entry.data),
    )
    return EXIT_OK


def serve_command(args: argparse.Namespace) -> int:
    """Serve the HTTP API with uvicorn"""
    import uvicorn

    uvicorn.run("cfr_mediation.main:app", host=args.host, port=args.port, log_level=args.log_level.lower())
    return EXIT_OK


def _add_format(parser: argparse.ArgumentParser, choices=("table", "json", "csv")) -> None:
    parser.add_argument("--format", choices=choices, default="table")


def _add_policy(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--undefined-band",
        choices=("error", "zero"),
        default=None,
        help="how bands with no cases are treated (default from settings)",
    )


def register_commands(subparsers) -> None:
    """Register one subcommand per handler"""
    p = subparsers.add_parser("effects", help=effects_command.__doc__)
    p.add_argument("--data", required=True, help="bundled dataset name or path to a dataset file")
    p.add_argument("--control", required=True)
    p.add_argument("--treatment", required=True)
    p.add_argument("--band", help="also report the CDE in this band")
    p.add_argument("--reference", help="also report the expected CDE under this cohort's demographic")
    _add_policy(p)
    _add_format(p, ("table", "json"))
    p.set_defaults(handler=effects_command)

    p = subparsers.add_parser("trace", help=trace_command.__doc__)
    p.add_argument("--data", required=True, help="series dataset")
    p.add_argument("--control", required=True)
    p.add_argument("--control-data", default="countries_latest", help="dataset holding the control cohort")
    _add_policy(p)
    _add_format(p)
    p.set_defaults(handler=trace_command)

    p = subparsers.add_parser("matrix", help=matrix_command.__doc__)
    p.add_argument("--data", default="countries_latest")
    p.add_argument("--kind", choices=("tce", "nde", "nie"), required=True)
    p.add_argument("--workers", type=positive_int, default=1)
    _add_policy(p)
    _add_format(p)
    p.set_defaults(handler=matrix_command)

    p = subparsers.add_parser("correlate", help=correlate_command.__doc__)
    p.add_argument("--data", default="countries_latest")
    p.add_argument("--test", choices=CORRELATION_TESTS, required=True)
    p.add_argument("--median-ages", default="median_ages")
    p.add_argument("--p", choices=("t-approx", "permutation"), default="t-approx")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=positive_int)
    p.add_argument("--workers", type=positive_int, default=1)
    _add_policy(p)
    _add_format(p)
    p.set_defaults(handler=correlate_command)

    p = subparsers.add_parser("simpson", help=simpson_command.__doc__)
    p.add_argument("--data", required=True)
    p.add_argument("--control", required=True)
    p.add_argument("--treatment", required=True)
    _add_format(p)
    p.set_defaults(handler=simpson_command)

    p = subparsers.add_parser("validate-oracle", help=validate_oracle_command.__doc__)
    p.add_argument("--k", type=positive_int, default=9, help="mediator levels")
    p.add_argument("--instances", type=nonnegative_int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-n", type=positive_int, help="also run the sampling study at this size per arm")
    p.add_argument("--replicates", type=positive_int, default=200)
    p.add_argument("--preset", choices=("moderation",), help="report effects of a preset model instead")
    p.add_argument("--scm-file", help="report effects of a model read from a #scm file instead")
    _add_format(p, ("table", "json"))
    p.set_defaults(handler=validate_oracle_command)

    p = subparsers.add_parser("datasets", help=datasets_command.__doc__)
    p.add_argument("action", choices=("list", "show"))
    p.add_argument("name", nargs="?")
    _add_format(p)
    p.set_defaults(handler=datasets_command)

    p = subparsers.add_parser("serve", help=serve_command.__doc__)
    p.add_argument("--host", default=settings.api_host)
    p.add_argument("--port", type=int, default=settings.api_port)
    p.set_defaults(handler=serve_command)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfr_mediation",
        description="Causal effects of age-stratified case fatality data",
    )
    parser.add_argument("--log-level", default=settings.log_level, help="logging level (stderr)")
    subparsers = parser.add_subparsers(dest="command", required=True)
    register_commands(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr)
    try:
        return args.handler(args)
    except (CfrMediationError, ValidationError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
