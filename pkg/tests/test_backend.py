# tests/test_backend.py

import httpx
import numpy as np
import pytest
from fastapi.testclient import TestClient

from backend.main import create_app
from runtime.server import PredictionServer
from runtime.wire import Message, MessageKind, decode_message, encode_message
from tasks.linear import LinearModel


@pytest.fixture
def model():
    return LinearModel("lin", n_samples=4, in_features=3)


@pytest.fixture
def server(model):
    return PredictionServer(model)


@pytest.fixture
def client(server):
    """Test client over an app serving the single 'lin' task."""
    with TestClient(create_app({"lin": server})) as test_client:
        yield test_client


def request_frame(step=3, request_id=1, x=None):
    x = np.arange(12.0).reshape(4, 3) if x is None else x
    return encode_message(Message(MessageKind.REQUEST, "lin", "peer", 0, request_id, step, {"x": x}))


# --- Root ---

def test_root_lists_served_tasks(client):
    response = client.get("/")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "active"
    assert body["tasks"] == ["lin"]


# --- Predictions ---

def test_unknown_task_is_404(client):
    response = client.post("/api/predict/ghost", content=request_frame())
    assert response.status_code == 404


def test_unpublished_task_is_503(client):
    response = client.post("/api/predict/lin", content=request_frame())
    assert response.status_code == 503


def test_malformed_frame_is_400(client, server, model):
    server.publish(model.init_params(0), 0)
    assert client.post("/api/predict/lin", content=b"\x00\x01\x02").status_code == 400
    assert client.post("/api/predict/lin", content=request_frame(x=np.zeros((4, 5)))).status_code == 400


def test_prediction_returns_the_snapshot_outputs(client, server, model):
    params = model.init_params(1)
    server.publish(params, 2)

    response = client.post("/api/predict/lin", content=request_frame(step=4, request_id=7))

    assert response.status_code == 200
    assert response.headers["content-type"] == "application/octet-stream"
    reply = decode_message(response.content)
    assert (reply.kind, reply.version, reply.request_id, reply.step) == (MessageKind.RESPONSE, 1, 7, 2)
    expected = model(params, {"x": np.arange(12.0).reshape(4, 3)})["output"].data
    np.testing.assert_array_equal(reply.arrays["output"], expected)


# --- Snapshots ---

def test_snapshot_status_before_and_after_publication(client, server, model):
    before = client.get("/api/snapshots/lin").json()
    assert before["ready"] is False
    assert before["version"] is None

    server.publish(model.init_params(0), 5)
    after = client.get("/api/snapshots/lin").json()
    assert (after["ready"], after["version"], after["publisher_step"]) == (True, 1, 5)
    assert after["published_at"] is not None


def test_publication_frame_installs_the_next_version(client, server, model):
    publisher = PredictionServer(model)
    snapshot = publisher.publish(model.init_params(3), 8)

    response = client.post("/api/snapshots/lin", content=encode_message(snapshot.to_message()))

    assert response.status_code == 200
    assert decode_message(response.content).version == 1
    assert server.snapshot.params.fingerprint() == snapshot.params.fingerprint()
    # the same version again is out of order
    assert client.post("/api/snapshots/lin", content=encode_message(snapshot.to_message())).status_code == 400


def test_served_log_is_paginated(client, server, model):
    server.publish(model.init_params(0), 0)
    for request_id in range(1, 6):
        client.post("/api/predict/lin", content=request_frame(step=request_id, request_id=request_id))

    page = client.get("/api/snapshots/lin/served", params={"skip": 1, "limit": 2}).json()
    assert [row["request_id"] for row in page] == [2, 3]
    assert page[0] == {"requester": "peer", "request_id": 2, "snapshot_version": 1, "snapshot_step": 0, "requester_step": 2}
    assert client.get("/api/snapshots/lin").json()["served_requests"] == 5
    assert client.get("/api/snapshots/lin/served", params={"limit": 0}).status_code == 400


# --- Lifespan ---

def test_startup_restores_servers_from_the_ledger(model, ledger):
    params = model.init_params(4)
    PredictionServer(model, ledger).publish(params, 12)

    restarted = PredictionServer(model)
    with TestClient(create_app({"lin": restarted}, ledger)) as client:
        status = client.get("/api/snapshots/lin").json()

    assert (status["ready"], status["version"], status["publisher_step"]) == (True, 1, 12)
    assert restarted.snapshot.params.fingerprint() == params.fingerprint()


@pytest.mark.asyncio
async def test_async_client_round_trip(server, model):
    server.publish(model.init_params(0), 0)
    transport = httpx.ASGITransport(app=create_app({"lin": server}))
    async with httpx.AsyncClient(transport=transport, base_url="http://test") as client:
        response = await client.post("/api/predict/lin", content=request_frame())
    assert response.status_code == 200
    assert decode_message(response.content).version == 1
    assert len(server.served) == 1
