"""Protocol conformance: the core toolkit's HTTP backend against a live sidecar.

Runs a real uvicorn server on an ephemeral localhost port and drives it through
ccr's HttpBackend, covering shape, determinism, health-dim consistency, value
round-trip, and error codes.
"""

import threading
import time

import numpy as np
import pytest
import requests
import uvicorn

from ccr.backends import BackendError, HttpBackend, embed_batch

from ccr_embed_server.app import ServerConfig, create_app
from ccr_embed_server.encoder import load_encoder


class ServerThread:
    def __init__(self, app):
        config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self) -> str:
        self.thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start")
            time.sleep(0.01)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        return f"http://127.0.0.1:{port}"

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=5)


@pytest.fixture(scope="module")
def live_server():
    config = ServerConfig(model_name="hash:dim=40,seed=11", max_batch=16)
    app = create_app(config, encoder=load_encoder(config.model_name))
    with ServerThread(app) as url:
        yield url


class TestConformance:
    def test_health_advertises_dim(self, live_server):
        backend = HttpBackend(live_server)
        info = backend.health()
        assert info["status"] == "ok"
        assert info["dim"] == 40
        assert backend.dim == 40

    def test_embed_shape(self, live_server):
        backend = HttpBackend(live_server)
        rows = embed_batch(backend, ["甲", "乙 丙", "third text"])
        assert rows.shape == (3, 40)

    def test_determinism_across_requests(self, live_server):
        backend = HttpBackend(live_server)
        a = embed_batch(backend, ["determinism probe"])
        b = embed_batch(backend, ["determinism probe"])
        assert np.max(np.abs(a - b)) <= 1e-5

    def test_round_trip_matches_direct_encoder(self, live_server):
        backend = HttpBackend(live_server)
        encoder = load_encoder("hash:dim=40,seed=11")
        texts = ["some probe", "另 一 個"]
        via_http = embed_batch(backend, texts)
        direct = encoder.encode(texts)
        assert np.max(np.abs(via_http - direct)) < 1e-6

    def test_batching_invariance_through_chunks(self, live_server):
        backend = HttpBackend(live_server, batch_size=2, max_in_flight=3)
        texts = [f"text {i}" for i in range(7)]
        chunked = embed_batch(backend, texts)
        singles = np.vstack([embed_batch(backend, [t]) for t in texts])
        assert np.max(np.abs(chunked - singles)) <= 1e-5

    def test_dim_stable_across_100_health_calls(self, live_server):
        dims = {requests.get(f"{live_server}/v1/health", timeout=5).json()["dim"] for _ in range(100)}
        assert dims == {40}

    def test_error_codes(self, live_server):
        empty = requests.post(f"{live_server}/v1/embed", json={"texts": []}, timeout=5)
        assert empty.status_code == 400
        oversized = requests.post(f"{live_server}/v1/embed", json={"texts": ["x"] * 17}, timeout=5)
        assert oversized.status_code == 400
        blank = requests.post(f"{live_server}/v1/embed", json={"texts": ["ok", ""]}, timeout=5)
        assert blank.status_code == 400

    def test_client_rejects_bad_batches_as_backend_error(self, live_server):
        backend = HttpBackend(live_server)
        with pytest.raises(BackendError, match="rejected"):
            backend._post_chunk(["x"] * 17)

    def test_identity_text_twice_in_one_batch(self, live_server):
        backend = HttpBackend(live_server)
        rows = embed_batch(backend, ["同 文", "同 文"])
        assert np.array_equal(rows[0], rows[1])
