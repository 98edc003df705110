import threading

import pytest
from fastapi.testclient import TestClient

from frag.config import AppConfig, ConfigError
from frag.service.app import ServiceState, app_from_config, create_app, retrieve
from frag.service.schemas import RetrieveRequest


@pytest.fixture(scope="module")
def state(tiny_work):
    return ServiceState.from_config(AppConfig(data_dir=tiny_work))


@pytest.fixture()
def client(state):
    app = create_app(lambda: state)
    with TestClient(app) as c:
        _wait_ready(app)
        yield c


def _wait_ready(app, timeout=30.0):
    import time

    deadline = time.time() + timeout
    while app.state.holder["state"] is None and app.state.holder["error"] is None:
        if time.time() > deadline:
            raise TimeoutError("service did not load")
        time.sleep(0.01)


def test_health_is_503_until_loaded(state):
    gate = threading.Event()

    def slow_loader():
        gate.wait(10)
        return state

    app = create_app(slow_loader)
    with TestClient(app) as c:
        assert c.get("/healthz").status_code == 503
        assert c.post("/v1/retrieve", json={"task": "step_from_annotation", "text": "x"}).status_code == 503
        gate.set()
        _wait_ready(app)
        r = c.get("/healthz")
        assert r.status_code == 200 and r.json()["model_fingerprint"] == state.model.fingerprint()


def test_failed_load_reported():
    def broken():
        raise RuntimeError("disk gone")

    app = create_app(broken)
    with TestClient(app) as c:
        _wait_ready(app)
        r = c.get("/healthz")
        assert r.status_code == 503 and r.json()["status"] == "failed"


def test_retrieve_matches_in_process(client, state):
    body = {"task": "step_from_annotation", "text": "look up records", "k": 5}
    r = client.post("/v1/retrieve", json=body)
    assert r.status_code == 200
    payload = r.json()
    expected = [h.to_json() for h in retrieve(state, RetrieveRequest(**body))]
    assert payload["results"] == expected
    assert all(x["kind"] == "step" for x in payload["results"])
    assert payload["model_fingerprint"] == state.model.fingerprint()


def test_bm25_engine_and_kind_filter(client):
    r = client.post("/v1/retrieve", json={"task": "table_from_text", "text": "records", "k": 3,
                                          "engine": "bm25", "kind_filter": "field"})
    assert r.status_code == 200
    assert r.json()["engine"] == "bm25"
    assert all(x["kind"] == "field" and x["parent"] for x in r.json()["results"])


@pytest.mark.parametrize("body, status, code", [
    ({"task": "step_from_annotation", "text": "x", "k": 0}, 400, "invalid_request"),
    ({"task": "step_from_annotation", "text": "x", "engine": "magic"}, 400, "invalid_request"),
    ({"text": "x"}, 400, "invalid_request"),
    ({"task": "make_coffee", "text": "x"}, 404, "unknown_task"),
])
def test_error_responses(client, body, status, code):
    r = client.post("/v1/retrieve", json=body)
    assert r.status_code == status and r.json()["code"] == code


def test_tasks_and_embed(client, state):
    tasks = client.get("/v1/tasks").json()["tasks"]
    assert len(tasks) == 9
    assert sum(len(t["templates"]) for t in tasks) == 15
    r = client.post("/v1/embed", json={"task": "step_from_requirement", "texts": ["a", "b"]})
    assert r.status_code == 200
    assert len(r.json()["embeddings"]) == 2 and len(r.json()["embeddings"][0]) == state.model.embed_dim
    assert client.post("/v1/embed", json={"task": "step_from_requirement", "texts": []}).status_code == 400


def test_bearer_auth(monkeypatch, state):
    monkeypatch.setenv("FRAG_TEST_TOKEN", "tok")
    app = create_app(lambda: state, token_env="FRAG_TEST_TOKEN")
    with TestClient(app) as c:
        _wait_ready(app)
        assert c.get("/healthz").status_code == 200
        assert c.get("/v1/tasks").status_code == 401
        assert c.get("/v1/tasks", headers={"Authorization": "Bearer tok"}).status_code == 200


def test_config_problems_reported_together(tmp_path):
    with pytest.raises(ConfigError) as info:
        app_from_config(AppConfig(data_dir=tmp_path, log_level="loud"))
    assert len(info.value.problems) == 4
