import base64
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import httpx
import numpy as np
import pytest
import uvicorn
from fastapi.testclient import TestClient

from sawgan import heatmap as hmp
from sawgan import service


@pytest.fixture(scope="module")
def live_service(tiny_checkpoint):
    """The real service process loop on an ephemeral port."""
    app = service.create_app(tiny_checkpoint)
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 15
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("service did not start")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=10)


def default_centers(spread=0.0):
    return {
        "level0": [[0.0, spread]],
        "level1": [[0.1, 0.1 + spread], [-0.1, -0.1 + spread]],
        "level2": [[0.2, 0.2], [-0.2, 0.2], [0.2, -0.2], [-0.2, -0.2]],
    }


def test_model_info_schema_and_stable_hash(live_service):
    with httpx.Client(base_url=live_service) as c:
        a = c.get("/model/info").json()
        b = c.get("/model/info").json()
    assert a["center_counts"] == [1, 2, 4]
    assert a["levels"] == [0, 1, 2]
    assert a["level_resolutions"] == [4, 8, 16]
    assert a["base_res"] == 32
    assert a["checkpoint_hash"] == b["checkpoint_hash"]


def test_generate_deterministic_byte_identical(live_service):
    body = {"latent_seed": 11, "centers": default_centers(), "include_overlays": True}
    with httpx.Client(base_url=live_service, timeout=60) as c:
        r1 = c.post("/generate", json=body)
        r2 = c.post("/generate", json=body)
    assert r1.status_code == r2.status_code == 200
    assert r1.content == r2.content
    payload = r1.json()
    assert set(payload) == {"image", "heatmaps", "attn", "checkpoint_hash"}
    assert len(payload["heatmaps"]) == 3
    assert len(payload["attn"]) == 3
    base64.b64decode(payload["image"])  # decodable


def test_generate_validation_errors(live_service):
    with httpx.Client(base_url=live_service, timeout=30) as c:
        bad = default_centers()
        bad["level1"].append([0.0, 0.0])  # 3 centers where 2 belong
        r = c.post("/generate", json={"latent_seed": 1, "centers": bad})
        assert r.status_code == 400
        assert r.json()["detail"]["field"] == "centers.level1"

        missing = {k: v for k, v in default_centers().items() if k != "level2"}
        r = c.post("/generate", json={"latent_seed": 1, "centers": missing})
        assert r.status_code == 400
        assert r.json()["detail"]["field"] == "centers.level2"

        r = c.post("/generate", json={"latent_seed": "not-an-int",
                                      "centers": default_centers()})
        assert r.status_code == 400


def test_generate_moving_centers_changes_image(live_service):
    with httpx.Client(base_url=live_service, timeout=30) as c:
        a = c.post("/generate", json={"latent_seed": 3, "centers": default_centers(0.0)})
        b = c.post("/generate", json={"latent_seed": 3, "centers": default_centers(0.4)})
    assert a.json()["image"] != b.json()["image"]


def test_generate_clamps_out_of_bound_coords(live_service):
    wild = default_centers()
    wild["level0"] = [[5.0, -9.0]]  # clamped to +-1.25, not rejected
    with httpx.Client(base_url=live_service, timeout=30) as c:
        r = c.post("/generate", json={"latent_seed": 5, "centers": wild})
    assert r.status_code == 200


def test_reset_returns_distinct_in_frame_centers(live_service):
    seeds, centers0 = [], []
    with httpx.Client(base_url=live_service, timeout=60) as c:
        for _ in range(100):
            payload = c.post("/reset").json()
            seeds.append(payload["seed"])
            centers0.append(tuple(payload["centers"]["level0"][0]))
            counts = [len(payload["centers"][k]) for k in ("level0", "level1", "level2")]
            assert counts == [1, 2, 4]
    assert len(set(seeds)) == len(seeds)
    assert len(set(centers0)) == len(centers0)
    for y, x in centers0:
        py = hmp.pixel_from_normalized(y, 32)
        px = hmp.pixel_from_normalized(x, 32)
        assert 0 <= py < 32 and 0 <= px < 32


def test_concurrent_identical_requests_identical_responses(live_service):
    body = {"latent_seed": 21, "centers": default_centers()}

    def hit(_):
        with httpx.Client(base_url=live_service, timeout=60) as c:
            return c.post("/generate", json=body).content

    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(hit, range(8)))
    assert len(set(results)) == 1


def test_service_503_before_model_load():
    app = service.create_app(None)
    client = TestClient(app)
    assert client.get("/model/info").status_code == 503
    r = client.post("/generate", json={"latent_seed": 1, "centers": default_centers()})
    assert r.status_code == 503


def test_info_not_blocked_by_generate_lock(live_service):
    # /model/info must answer while the generate lock is held elsewhere
    with httpx.Client(base_url=live_service, timeout=30) as c:
        big = {"latent_seed": 9, "centers": default_centers(), "include_overlays": True}
        with ThreadPoolExecutor(max_workers=2) as pool:
            fut = pool.submit(lambda: c.post("/generate", json=big))
            info = c.get("/model/info", timeout=5)
            assert info.status_code == 200
            assert fut.result().status_code == 200
