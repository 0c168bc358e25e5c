# Backend/test_api.py

import pytest
from fastapi.testclient import TestClient

from Backend import api


REFERENCE = {
    "channel_type": "AWGN",
    "jamming_type": "single-tone",
    "num_tones": "1",
    "bandwidth_factor": "0.1",
    "jsr_db": "30 dB",
    "ebn0_db": "4 dB",
    "required_rate_bps": "5 Mbps",
    "required_ber_exponent": "1e-6",
}


@pytest.fixture
def client(trained, small_store):
    api.app.dependency_overrides[api.get_service] = lambda: api.RecommenderService(small_store, trained.model)
    try:
        yield TestClient(api.app)
    finally:
        api.app.dependency_overrides.clear()


def test_health_and_modes(client):
    assert client.get("/health").json() == {"status": "ok"}
    assert "invo_then_attn" in client.get("/modes").json()["modes"]


def test_recommend(client):
    response = client.post("/recommend", json={"environment": REFERENCE, "top_k": 3})
    assert response.status_code == 200
    body = response.json()
    assert body["waveform_count"] == 10
    assert body["mode"] == "invo_then_attn(1)"
    assert [r["rank"] for r in body["recommendations"]] == [1, 2, 3]
    assert body["recommendations"][0]["summary"]
    assert body["warnings"] is None


def test_top_k_clamped_with_warning(client):
    body = client.post("/recommend", json={"environment": {"jsr_db": "33 dB"}, "top_k": 40}).json()
    assert len(body["recommendations"]) == 10
    assert "clamped" in body["warnings"][0]


def test_unknown_relation(client):
    response = client.post("/recommend", json={"environment": {"colour": "blue"}})
    assert response.status_code == 422
    detail = response.json()["detail"]
    assert detail["error_type"] == "SchemaViolation"
    assert detail["invalid_value"] == "colour"


def test_top_k_must_be_positive(client):
    assert client.post("/recommend", json={"environment": REFERENCE, "top_k": 0}).status_code == 422


def test_pdf(client):
    response = client.post("/recommend-pdf", json={"environment": REFERENCE, "top_k": 2})
    assert response.status_code == 200
    assert response.headers["content-type"] == "application/pdf"
    assert response.content.startswith(b"%PDF")


def test_unconfigured_service(monkeypatch):
    monkeypatch.delenv("WAVEPILOT_KG_PATH", raising=False)
    monkeypatch.delenv("WAVEPILOT_CHECKPOINT_DIR", raising=False)
    api.reset_service_cache()
    try:
        response = TestClient(api.app).post("/recommend", json={"environment": REFERENCE})
    finally:
        api.reset_service_cache()
    assert response.status_code == 503
