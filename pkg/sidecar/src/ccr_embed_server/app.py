"""FastAPI application implementing the embedding protocol.

POST /v1/embed  {"texts": [...]}  ->  {"dim": d, "vectors": [[...], ...]}
GET  /v1/health                   ->  {"status": "ok", "model": name, "dim": d, ...}

The server answers 503 on both routes while the model is still loading, 400 on
empty or oversized batches and empty texts, and 500 with an error body when the
encoder fails.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .encoder import load_encoder

log = logging.getLogger(__name__)


@dataclass
class ServerConfig:
    model_name: str = "hash:dim=256,seed=0"
    host: str = "127.0.0.1"
    port: int = 8230
    max_batch: int = 256
    normalize: bool = False

    def __post_init__(self):
        if not (0 <= self.port <= 65535):
            raise ValueError(f"invalid port {self.port}")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")


class EmbedRequest(BaseModel):
    texts: list[str]


class EmbedResponse(BaseModel):
    dim: int
    vectors: list[list[float]]


def create_app(config: ServerConfig, encoder=None, loader=None) -> FastAPI:
    """Build the service. `encoder` injects a ready encoder; `loader` overrides
    how the encoder is constructed (used by tests to simulate slow loading)."""
    app = FastAPI(title="ccr-embed-server")
    app.state.config = config
    app.state.encoder = encoder
    app.state.load_error = None
    lock = threading.Lock()

    def ensure_loaded():
        if app.state.encoder is not None:
            return
        with lock:
            if app.state.encoder is None and app.state.load_error is None:
                try:
                    make = loader or (lambda: load_encoder(config.model_name))
                    app.state.encoder = make()
                    log.info("loaded encoder %s (dim %d)", config.model_name, app.state.encoder.dim)
                except Exception as exc:  # surfaced as 503 until resolved
                    app.state.load_error = str(exc)
                    log.error("encoder load failed: %s", exc)

    if encoder is None and loader is None:
        # eager load in the background so health can answer 503 meanwhile
        threading.Thread(target=ensure_loaded, daemon=True).start()

    @app.get("/v1/health")
    def health():
        if loader is not None:
            ensure_loaded()
        enc = app.state.encoder
        if enc is None:
            detail = {"status": "loading"}
            if app.state.load_error:
                detail = {"status": "error", "error": app.state.load_error}
            return JSONResponse(status_code=503, content=detail)
        return {
            "status": "ok",
            "model": enc.name,
            "dim": enc.dim,
            "pooling": enc.pooling,
            "normalize": config.normalize,
        }

    @app.post("/v1/embed")
    def embed(request: EmbedRequest) -> EmbedResponse:
        if loader is not None:
            ensure_loaded()
        enc = app.state.encoder
        if enc is None:
            raise HTTPException(status_code=503, detail="model loading")
        if len(request.texts) == 0:
            raise HTTPException(status_code=400, detail="empty batch")
        if len(request.texts) > config.max_batch:
            raise HTTPException(
                status_code=400,
                detail=f"batch of {len(request.texts)} exceeds max_batch {config.max_batch}",
            )
        if any(not t for t in request.texts):
            raise HTTPException(status_code=400, detail="empty text in batch")
        try:
            vectors = np.asarray(enc.encode(list(request.texts)), dtype=np.float64)
            if config.normalize:
                norms = np.linalg.norm(vectors, axis=1, keepdims=True)
                norms[norms == 0.0] = 1.0
                vectors = vectors / norms
        except Exception as exc:
            log.exception("encoder failure")
            return JSONResponse(status_code=500, content={"error": str(exc)})
        return EmbedResponse(dim=enc.dim, vectors=[[float(x) for x in row] for row in vectors])

    return app
