"""HTTP service: endpoint contracts, validation failures, error mapping."""

import pytest
from fastapi.testclient import TestClient

from spmmlab import __version__
from spmmlab.service import app, create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


RANDOM_16 = {"random": {"rows": 16, "cols": 16, "density": 0.25, "seed": 3}}
MM_TEXT = "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 3.5\n"


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok"}


def test_create_app_reports_version():
    assert create_app().version == __version__


def test_verify_pass(client):
    resp = client.post("/verify", json={"matrix": RANDOM_16, "point": "nnz:1,col:1,r:32"})
    assert resp.status_code == 200
    data = resp.json()
    assert data["status"] == "pass"
    assert data["family"] == "nnz-one"
    assert data["kernel"] == "spmm_nnz_one"
    assert data["max_rel_error"] <= 1e-4
    assert data["grid_size"] >= 1 and data["block_size"] == 256
    assert set(data["metrics"]) == {
        "max_warp_steps", "total_steps", "atomic_ops", "idle_lane_steps", "per_warp_steps",
    }
    assert data["output"] is None


def test_verify_includes_output_when_asked(client):
    resp = client.post(
        "/verify",
        json={"matrix": RANDOM_16, "point": "row:1,col:1,r:1", "include_output": True, "n": 4},
    )
    assert resp.status_code == 200
    out = resp.json()["output"]
    assert isinstance(out, list) and len(out) == 16 * 4


def test_verify_matrix_market_body(client):
    resp = client.post(
        "/verify",
        json={"matrix": {"matrix_market": MM_TEXT, "label": "demo"}, "point": "row:1,col:1,r:1"},
    )
    assert resp.status_code == 200
    assert resp.json()["status"] == "pass"


def test_verify_illegal_point_maps_to_400(client):
    resp = client.post("/verify", json={"matrix": RANDOM_16, "point": "nnz:1/2,col:1/2,r:1"})
    assert resp.status_code == 400
    assert resp.json()["detail"] == "illegal point (rule 1)"


def test_verify_bad_point_syntax_maps_to_400(client):
    resp = client.post("/verify", json={"matrix": RANDOM_16, "point": "bogus"})
    assert resp.status_code == 400
    assert "kind:amount" in resp.json()["detail"]


def test_verify_unreadable_matrix_maps_to_400(client):
    resp = client.post(
        "/verify",
        json={"matrix": {"matrix_market": "junk", "label": "j.mtx"}, "point": "row:1,col:1,r:1"},
    )
    assert resp.status_code == 400
    assert resp.json()["detail"].startswith("j.mtx:")


def test_verify_no_template_is_a_result_not_an_error(client):
    resp = client.post("/verify", json={"matrix": RANDOM_16, "point": "row:1,col:1/2,r:1"})
    assert resp.status_code == 200
    data = resp.json()
    assert data["status"] == "no_template"
    assert data["max_rel_error"] is None


def test_verify_rejects_bad_precision(client):
    resp = client.post(
        "/verify", json={"matrix": RANDOM_16, "point": "row:1,col:1,r:1", "precision": "half"}
    )
    assert resp.status_code in (400, 422)


def test_matrix_spec_requires_exactly_one_source(client):
    resp = client.post("/verify", json={"matrix": {}, "point": "row:1,col:1,r:1"})
    assert resp.status_code == 422
    both = {"matrix_market": MM_TEXT} | RANDOM_16
    resp = client.post("/verify", json={"matrix": both, "point": "row:1,col:1,r:1"})
    assert resp.status_code == 422


def test_sweep_rows_and_error_rows(client):
    resp = client.post(
        "/sweep",
        json={
            "matrices": [RANDOM_16, {"matrix_market": "junk", "label": "bad.mtx"}],
            "points": ["nnz:32,col:1,r:1", "row:1/32,col:1,r:32"],
        },
    )
    assert resp.status_code == 200
    data = resp.json()
    assert data["schema_version"] == 1
    rows = data["rows"]
    assert len(rows) == 3  # 2 points on the good matrix + 1 error row
    assert rows[0]["status"] == "pass" and rows[1]["status"] == "pass"
    assert rows[2]["matrix"] == "bad.mtx"
    assert rows[2]["status"].startswith("matrix_error: ")


def test_sweep_rejects_illegal_explicit_point(client):
    resp = client.post(
        "/sweep", json={"matrices": [RANDOM_16], "points": ["nnz:1/2,col:1,r:1"]}
    )
    assert resp.status_code == 400
    assert resp.json()["detail"] == "illegal point (rule 1)"


def test_sweep_needs_at_least_one_matrix(client):
    resp = client.post("/sweep", json={"matrices": []})
    assert resp.status_code == 422


def test_enumerate_default_grid(client):
    resp = client.post("/enumerate", json={})
    assert resp.status_code == 200
    data = resp.json()
    assert len(data["legal"]) == 333
    assert len(data["rejected"]) == 327
    assert sum(1 for e in data["legal"] if e["templated"]) == 66
    assert {e["rule"] for e in data["rejected"]} <= {1, 2, 3}


def test_enumerate_custom_grid(client):
    resp = client.post(
        "/enumerate", json={"g_values": [2], "c_values": [1], "r_values": [1, 2]}
    )
    assert resp.status_code == 200
    data = resp.json()
    assert [e["point"] for e in data["legal"]][:2] == ["nnz:1,col:1,r:1", "nnz:1,col:1,r:2"]
    assert [e["rule"] for e in data["rejected"]] == [1, 1, 2]


def test_emit_source(client):
    resp = client.post("/emit", json={"point": "nnz:32,col:1,r:1"})
    assert resp.status_code == 200
    data = resp.json()
    assert data["kernel"] == "spmm_nnz_multiple"
    assert data["source"].startswith("__device__")
    assert "__global__ void spmm_nnz_multiple(" in data["source"]
    assert (data["grid_size"], data["block_size"]) == (1, 64)


def test_emit_with_explicit_matrix(client):
    resp = client.post(
        "/emit",
        json={"point": "nnz:32,col:1,r:1", "matrix": {"random": {"rows": 96, "cols": 96, "density": 0.5, "seed": 3}}},
    )
    assert resp.status_code == 200
    assert resp.json()["grid_size"] == 3


def test_emit_errors(client):
    resp = client.post("/emit", json={"point": "row:1,col:1/2,r:1"})
    assert resp.status_code == 400
    assert "no template covers" in resp.json()["detail"]
    resp = client.post("/emit", json={"point": "nnz:1/2,col:1,r:1"})
    assert resp.status_code == 400
    assert resp.json()["detail"] == "illegal point (rule 1)"
