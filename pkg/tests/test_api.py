import pytest
from fastapi.testclient import TestClient

from cfr_mediation.config import settings
from cfr_mediation.main import app

from conftest import NIE_ORDER

client = TestClient(app)


def test_root():
    response = client.get("/")
    assert response.status_code == 200
    assert response.json()["docs"] == "/docs"


def test_health():
    response = client.get("/api/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


def test_datasets():
    response = client.get("/api/datasets")
    assert response.status_code == 200
    assert len(response.json()["datasets"]) == 6
    assert client.get("/api/datasets/lombardy_ifr").json()["payload"]["labels"] == [
        "Lombardy pre-16 Mar",
        "Lombardy post-16 Mar",
    ]
    assert client.get("/api/datasets/nowhere").status_code == 404


def test_effects():
    response = client.get(
        "/api/effects", params={"data": "lombardy_ifr", "control": "Lombardy pre-16 Mar", "treatment": "Lombardy post-16 Mar"}
    )
    assert response.status_code == 200
    payload = response.json()["payload"]
    assert payload["tce"]["value"] == pytest.approx(-0.01626, abs=5e-6)
    assert payload["policy"] == "error"


def test_effects_errors():
    params = {"data": "china_vs_italy_march9", "control": "China (printed)", "treatment": "Italy"}
    assert client.get("/api/effects", params=params).status_code == 422
    assert client.get("/api/effects", params={**params, "undefined_band": "zero"}).status_code == 200
    assert client.get("/api/effects", params={**params, "control": "Chnia"}).status_code == 404


def test_matrix():
    response = client.get("/api/matrix", params={"kind": "nie"})
    assert response.status_code == 200
    assert response.json()["payload"]["labels"] == NIE_ORDER
    assert client.get("/api/matrix", params={"kind": "cde"}).status_code == 422


def test_trace_and_simpson():
    trace = client.get("/api/trace", params={"data": "spain_series", "control": "China"})
    assert trace.status_code == 200
    assert ["2020-03-30", "2020-04-02"] in trace.json()["payload"]["sign_changes"]["NDE"]
    simpson = client.get("/api/simpson", params={"data": "lombardy_ifr", "control": "Lombardy pre-16 Mar", "treatment": "Lombardy post-16 Mar"})
    assert simpson.json()["payload"]["is_reversal"] is False


def test_correlate():
    response = client.get("/api/correlate", params={"test": "nde-vs-nie-rank"})
    assert response.status_code == 200
    assert response.json()["payload"]["rank_deltas"]["Colombia"] == 7
    assert client.get("/api/correlate", params={"test": "other"}).status_code == 422


LOMBARDY = {"control": "Lombardy pre-16 Mar", "treatment": "Lombardy post-16 Mar"}


def _copy_lombardy(directory):
    path = directory / "lombardy_copy.csv"
    path.write_bytes((settings.bundled_dir / "lombardy_ifr.csv").read_bytes())
    return path


def test_files_outside_the_data_dir_are_not_read(tmp_path):
    path = _copy_lombardy(tmp_path)
    existing = client.get("/api/effects", params={"data": str(path), **LOMBARDY})
    missing = client.get("/api/effects", params={"data": str(tmp_path / "missing.csv"), **LOMBARDY})
    assert existing.status_code == missing.status_code == 404


def test_files_under_the_data_dir_are_read(tmp_path, monkeypatch):
    path = _copy_lombardy(tmp_path)
    monkeypatch.setattr(settings, "data_dir", tmp_path)
    response = client.get("/api/effects", params={"data": "lombardy_copy.csv", **LOMBARDY})
    assert response.status_code == 200
    assert response.json()["payload"]["tce"]["value"] == pytest.approx(-0.01626, abs=5e-6)
    assert client.get("/api/simpson", params={"data": str(path), **LOMBARDY}).status_code == 200
    assert client.get("/api/effects", params={"data": "../lombardy_copy.csv", **LOMBARDY}).status_code == 404
