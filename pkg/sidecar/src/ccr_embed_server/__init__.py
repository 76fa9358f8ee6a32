"""Reference embedding sidecar: a small FastAPI service exposing sentence
embeddings over POST /v1/embed and GET /v1/health."""

__version__ = "0.1.0"
