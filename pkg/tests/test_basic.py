# tests/test_basic.py
import json

import pytest
from fastapi import HTTPException
from fastapi.testclient import TestClient

from forge.deps import get_artifact_service, resolve_artifact_path
from forge.main import app
from forge.services import energy_service
from forge.services.artifact_service import ArtifactService

from conftest import DATA_DIR

client = TestClient(app)


@pytest.fixture
def artifact_root(tmp_path):
    report = energy_service.compare_totals(energy_service.load_estimates(DATA_DIR / "published_estimates.csv"),
                                           config_hash="abc123")
    energy_service.write_report(tmp_path, report)
    (tmp_path / "wcss.csv").write_text("# config_hash: abc123\nk,wcss\n1,9.5\n2,4.0\n3,3.5\n4,\n")
    (tmp_path / "inventory_summary.json").write_text(json.dumps(
        {"total_count": 3, "residential_count": 2, "residential_fraction": 2 / 3, "rejections": [],
         "config_hash": "abc123"}))
    (tmp_path / "notes.txt").write_text("not an artifact")
    app.dependency_overrides[get_artifact_service] = lambda: ArtifactService(tmp_path)
    yield tmp_path
    app.dependency_overrides.clear()


def test_health():
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json()["status"] == "ok"


def test_list_artifacts(artifact_root):
    r = client.get("/api/v1/artifacts")
    assert r.status_code == 200
    kinds = {a["name"]: a["kind"] for a in r.json()}
    assert kinds == {"energy_report.csv": "table", "energy_report.json": "json",
                     "inventory_summary.json": "json", "wcss.csv": "table"}


def test_table_paging_and_sort(artifact_root):
    r = client.get("/api/v1/artifacts/wcss/table", params={"limit": 2, "offset": 1, "sort": "wcss:asc"})
    assert r.status_code == 200
    page = r.json()
    assert (page["total"], page["limit"], page["offset"]) == (4, 2, 1)
    assert [row["k"] for row in page["items"]] == [2, 1]

    # blank cells come back as null
    last = client.get("/api/v1/artifacts/wcss.csv/table", params={"sort": "k:desc", "limit": 1}).json()
    assert last["items"] == [{"k": 4, "wcss": None}]


def test_table_limit_is_bounded(artifact_root):
    assert client.get("/api/v1/artifacts/wcss/table", params={"limit": 10_000}).status_code == 422


def test_report(artifact_root):
    r = client.get("/api/v1/report")
    assert r.status_code == 200
    body = r.json()
    assert body["config_hash"] == "abc123"
    assert [z["zone"] for z in body["zones"]][:2] == ["Russian Hill", "Richmond"]
    assert body["average"]["method_accuracy"] == pytest.approx(0.9136, abs=0.005)


def test_inventory_summary(artifact_root):
    r = client.get("/api/v1/inventory/summary")
    assert r.status_code == 200
    assert r.json()["residential_count"] == 2


def test_missing_artifact_is_404(artifact_root):
    assert client.get("/api/v1/artifacts/assignments/table").status_code == 404
    (artifact_root / "energy_report.json").unlink()
    assert client.get("/api/v1/report").status_code == 404


def test_path_outside_root_is_rejected(tmp_path):
    (tmp_path / "x.csv").write_text("a\n1\n")
    root = tmp_path / "out"
    root.mkdir()
    with pytest.raises(HTTPException) as exc:
        resolve_artifact_path(root, "../x", ".csv")
    assert exc.value.status_code == 400
