import numpy as np
import pytest
from fastapi.testclient import TestClient

from mosmooth.pipeline.config import ModelConfig, RunConfig, TrainConfig
from mosmooth.pipeline.train import train_dda, train_ds
from mosmooth.service.app import create_app
from mosmooth.simkit import TASKS, scene_from_dict


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def test_health_and_presets(client):
    assert client.get("/health").json()["status"] == "ok"
    presets = client.get("/presets").json()
    assert "task1" in presets["tasks"] and "desk" in presets["runs"]


def test_simulate_is_deterministic(client):
    body = {"task": "desk", "seed": 4, "count": 3}
    a, b = client.post("/simulate", json=body).json(), client.post("/simulate", json=body).json()
    assert a == b and len(a["scenes"]) == 3
    scene_from_dict(a["scenes"][0], TASKS["desk"])


def test_simulate_rejects_unknown_fields(client):
    assert client.post("/simulate", json={"task": "desk", "colour": 1}).status_code == 422
    assert client.post("/simulate", json={"task": "nope"}).status_code == 404


def test_tgospa_echoes_params(client):
    body = {
        "truths": [{"t_s": 1, "states": [[0, 0, 0, 0]] * 3}],
        "estimates": [],
        "params": {"p": 1, "c": 20, "gamma": 3},
    }
    out = client.post("/tgospa", json=body).json()
    assert out["total"] == 30 and out["miss"] == 30 and out["params"]["gamma"] == 3 and out["T"] == 3


def test_tgospa_window_error(client):
    body = {"truths": [{"t_s": 2, "states": [[0, 0, 0, 0]] * 3}], "estimates": [], "T": 2}
    assert client.post("/tgospa", json=body).status_code == 422


def test_taa(client):
    body = {"A": [[0.9, 0.1], [0.8, 0.2], [0.1, 0.9]], "labels": [1, 1, -1], "clutter_target": "literal"}
    out = client.post("/taa", json=body).json()
    assert out == {"taa": 1.0, "s_star": [1, -1]}
    body["labels"] = [-1, -1, -1]
    assert client.post("/taa", json=body).json()["taa"] is None
    body["labels"] = [1, 1]
    assert client.post("/taa", json=body).status_code == 422


def test_track_needs_checkpoints(client):
    assert client.post("/track", json={"z": [[7, 1, 0]], "times": [1]}).status_code == 503


def test_track_with_checkpoints(tmp_path):
    cfg = RunConfig(
        model=ModelConfig(d=8, ffn_hidden=8, dda_head_hidden=8, ds_state_hidden=8, ds_exist_hidden=8),
        train=TrainConfig(dda_steps=2, ds_steps=2, dda_batch=2, ds_batch=2),
    )
    dda, _ = train_dda(cfg, tmp_path)
    train_ds(cfg, dda, tmp_path)
    client = TestClient(create_app(tmp_path))
    assert client.get("/health").json()["tracking"] is True
    out = client.post("/track", json={"z": [[7, 1, 0], [7.1, 1, 0]], "times": [1, 2]}).json()
    A = np.asarray(out["association"])
    assert A.shape == (2, 8)
    np.testing.assert_allclose(A.sum(1), 1.0)
    assert client.post("/track", json={"z": [[7, 1, 0]], "times": [9]}).status_code == 422
