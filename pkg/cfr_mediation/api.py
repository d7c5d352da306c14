"""HTTP routes; datasets are bundled names or files under settings.data_dir"""

from datetime import datetime
from typing import Literal, Optional

from fastapi import APIRouter, HTTPException

from cfr_mediation.errors import CfrMediationError, UnknownDataset, UnknownLabel
from cfr_mediation.ingest import BUNDLED_DATASETS, load_bundled
from cfr_mediation.queries import (
    correlate_query,
    dataset_query,
    effects_query,
    matrix_query,
    simpson_query,
    trace_query,
)
from cfr_mediation.stats import CORRELATION_TESTS

router = APIRouter()

Policy = Optional[Literal["error", "zero"]]


def _failure(e: CfrMediationError) -> HTTPException:
    """Domain failures as HTTP errors"""
    status = 404 if isinstance(e, (UnknownDataset, UnknownLabel)) else 422
    return HTTPException(status_code=status, detail=str(e))


@router.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "timestamp": datetime.now().isoformat()}


@router.get("/datasets")
def list_datasets():
    """Bundled datasets with cohort counts, dates and sources"""
    return {"datasets": [load_bundled(name).describe() for name in BUNDLED_DATASETS]}


@router.get("/datasets/{name}")
def show_dataset(name: str):
    try:
        _, document = dataset_query(name, any_path=False)
    except CfrMediationError as e:
        raise _failure(e)
    return document.model_dump(mode="json")


@router.get("/effects")
def get_effects(
    data: str,
    control: str,
    treatment: str,
    band: Optional[str] = None,
    reference: Optional[str] = None,
    undefined_band: Policy = None,
):
    try:
        _, document = effects_query(data, control, treatment, band, reference, undefined_band, any_path=False)
    except CfrMediationError as e:
        raise _failure(e)
    return document.model_dump(mode="json")


@router.get("/trace")
def get_trace(data: str, control: str, control_data: str = "countries_latest", undefined_band: Policy = None):
    try:
        _, document = trace_query(data, control, control_data, undefined_band, any_path=False)
    except CfrMediationError as e:
        raise _failure(e)
    return document.model_dump(mode="json")


@router.get("/matrix")
def get_matrix(kind: Literal["tce", "nde", "nie"], data: str = "countries_latest", undefined_band: Policy = None):
    try:
        _, document = matrix_query(data, kind, undefined_band, any_path=False)
    except CfrMediationError as e:
        raise _failure(e)
    return document.model_dump(mode="json")


@router.get("/simpson")
def get_simpson(data: str, control: str, treatment: str):
    try:
        _, document = simpson_query(data, control, treatment, any_path=False)
    except CfrMediationError as e:
        raise _failure(e)
    return document.model_dump(mode="json")


@router.get("/correlate")
def get_correlation(test: str, data: str = "countries_latest", median_ages: str = "median_ages"):
    if test not in CORRELATION_TESTS:
        raise HTTPException(status_code=422, detail=f"test must be one of {', '.join(CORRELATION_TESTS)}")
    try:
        _, document = correlate_query(data, test, median_ages, any_path=False)
    except CfrMediationError as e:
        raise _failure(e)
    return document.model_dump(mode="json")
