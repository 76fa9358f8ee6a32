"""Interchangeable paragraph-embedding backends and the trainable affine adapter.

Three backends: `mock` (deterministic hash-based test double), `cache` (embeddings
precomputed to a JSONL file), and `http` (remote sidecar speaking the
POST /v1/embed // GET /v1/health protocol). Backends embed *texts*; the
EmbeddingSource wrapper resolves paragraph ids to embeddings for training and
evaluation code.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import requests

from .errors import BackendError, ConfigError, DataError
from .hashing import text_seed

log = logging.getLogger(__name__)


def mock_embed(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit vector for (text, seed): a PRNG seeded with the 64-bit
    FNV-1a hash of the UTF-8 text (mixed with the seed) draws dim normal values,
    which are then L2-normalized. Stable across runs and platforms."""
    if dim < 1:
        raise DataError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(text_seed(text, seed))
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    if norm == 0.0:  # astronomically unlikely; keep the unit-norm contract anyway
        v[0] = 1.0
        norm = 1.0
    return v / norm


class EmbeddingBackend:
    """Capability shared by all backends: name, output dim, and batch embedding."""

    name: str = "abstract"
    deterministic: bool = False

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError


def embed_batch(backend: EmbeddingBackend, texts: Sequence[str]) -> np.ndarray:
    """Embed a batch of texts; row k is the embedding of texts[k].

    Validates inputs and guards against dimension drift between calls.
    """
    if len(texts) == 0:
        return np.zeros((0, backend.dim))
    for k, t in enumerate(texts):
        if not isinstance(t, str) or not t:
            raise DataError(f"texts[{k}] is empty or not a string")
    out = np.asarray(backend.embed(list(texts)), dtype=np.float64)
    if out.shape != (len(texts), backend.dim):
        raise BackendError(
            f"backend {backend.name!r} returned shape {out.shape}, expected {(len(texts), backend.dim)}"
        )
    return out


class MockBackend(EmbeddingBackend):
    """Deterministic test double: a text embeds to the normalized mean of the
    hash-derived vectors of its whitespace tokens, so texts sharing tokens get
    correlated embeddings (what makes planted-structure corpora learnable)."""

    deterministic = True

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ConfigError(f"mock backend dim must be >= 1, got {dim}")
        self._dim = dim
        self.seed = seed
        self.name = f"mock:dim={dim},seed={seed}"

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows = np.empty((len(texts), self._dim))
        for k, text in enumerate(texts):
            tokens = text.split() or [text]
            mean = np.mean([mock_embed(t, self._dim, self.seed) for t in tokens], axis=0)
            norm = np.linalg.norm(mean)
            rows[k] = mean / norm if norm > 0 else mock_embed(text, self._dim, self.seed)
        return rows


class CacheBackend(EmbeddingBackend):
    """Backend over a cache file; serves lookups by text (when the cache stores
    texts) and exposes the id -> vector table for id-based resolution."""

    deterministic = True

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.name = f"cache:{self.path}"
        self.by_id: dict[str, np.ndarray] = load_cache(self.path)
        self.by_text: dict[str, np.ndarray] = {}
        with self.path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                if "_meta" in obj:
                    continue
                if "text" in obj:
                    self.by_text[obj["text"]] = self.by_id[obj["id"]]
        self._dim = next(iter(self.by_id.values())).shape[0]

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows = np.empty((len(texts), self._dim))
        for k, text in enumerate(texts):
            vec = self.by_text.get(text)
            if vec is None:
                raise BackendError(f"text not present in embedding cache {self.path}")
            rows[k] = vec
        return rows


class HttpBackend(EmbeddingBackend):
    """Client for the embedding sidecar protocol. Embedding requests are pure, so
    failed calls are retried; concurrent chunk requests are bounded."""

    deterministic = True

    def __init__(
        self,
        base_url: str,
        batch_size: int = 64,
        max_in_flight: int = 4,
        timeout: float = 30.0,
        retries: int = 3,
    ):
        self.base_url = base_url.rstrip("/")
        self.name = f"http:{self.base_url}"
        self.batch_size = batch_size
        self.max_in_flight = max_in_flight
        self.timeout = timeout
        self.retries = retries
        self._session = requests.Session()
        self._dim: int | None = None

    def health(self) -> dict:
        try:
            resp = self._session.get(f"{self.base_url}/v1/health", timeout=self.timeout)
        except requests.RequestException as exc:
            raise BackendError(f"health check failed for {self.base_url}: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"health check returned {resp.status_code} for {self.base_url}")
        return resp.json()

    @property
    def dim(self) -> int:
        if self._dim is None:
            info = self.health()
            try:
                self._dim = int(info["dim"])
            except (KeyError, TypeError, ValueError) as exc:
                raise BackendError(f"malformed health response: {info!r}") from exc
        return self._dim

    def _post_chunk(self, chunk: list[str]) -> np.ndarray:
        last_exc: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self._session.post(
                    f"{self.base_url}/v1/embed", json={"texts": chunk}, timeout=self.timeout
                )
                if resp.status_code >= 500:
                    raise BackendError(f"server error {resp.status_code}: {resp.text[:200]}")
                if resp.status_code != 200:
                    # 4xx is not retryable: the request itself is wrong
                    raise BackendError(f"embed request rejected ({resp.status_code}): {resp.text[:200]}")
                payload = resp.json()
                vectors = np.asarray(payload["vectors"], dtype=np.float64)
                if vectors.shape != (len(chunk), int(payload["dim"])):
                    raise BackendError(f"response shape {vectors.shape} != ({len(chunk)}, {payload['dim']})")
                if vectors.shape[1] != self.dim:
                    raise BackendError(
                        f"dim drift: response dim {vectors.shape[1]} != advertised {self.dim}"
                    )
                return vectors
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_exc = exc
            except BackendError as exc:
                if "rejected" in str(exc) or "drift" in str(exc):
                    raise
                last_exc = exc
            time.sleep(0.2 * 2**attempt)
        raise BackendError(f"embed request failed after {self.retries} attempts: {last_exc}")

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        chunks = [list(texts[i : i + self.batch_size]) for i in range(0, len(texts), self.batch_size)]
        if len(chunks) == 1:
            return self._post_chunk(chunks[0])
        with ThreadPoolExecutor(max_workers=min(self.max_in_flight, len(chunks))) as pool:
            results = list(pool.map(self._post_chunk, chunks))
        return np.vstack(results)


def parse_backend_spec(spec: str) -> EmbeddingBackend:
    """Build a backend from a spec string: 'mock:dim=64,seed=7', 'cache:emb.jsonl',
    or 'http://host:port'."""
    if spec.startswith(("http://", "https://")):
        return HttpBackend(spec)
    if spec == "mock" or spec.startswith("mock:"):
        kwargs = {"dim": 64, "seed": 0}
        if ":" in spec and spec.split(":", 1)[1]:
            for item in spec.split(":", 1)[1].split(","):
                key, _, value = item.partition("=")
                if key not in kwargs or not value:
                    raise ConfigError(f"bad mock backend option {item!r} in {spec!r}")
                try:
                    kwargs[key] = int(value)
                except ValueError as exc:
                    raise ConfigError(f"non-integer mock option {item!r}") from exc
        return MockBackend(**kwargs)
    if spec.startswith("cache:"):
        path = spec.split(":", 1)[1]
        if not path:
            raise ConfigError("cache backend needs a path: 'cache:<file>'")
        return CacheBackend(path)
    raise ConfigError(f"unrecognized backend spec {spec!r}")


def cache_embeddings(backend: EmbeddingBackend, records, path: str | Path, meta: dict | None = None) -> None:
    """Embed records and write a JSONL cache of {id, text, vector} lines."""
    path = Path(path)
    ids = [rec.id for rec in records]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate record ids in cache input")
    texts = [rec.text for rec in records]
    vectors = embed_batch(backend, texts)
    with path.open("w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for rec, vec in zip(records, vectors):
            row = {"id": rec.id, "text": rec.text, "vector": [float(x) for x in vec]}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_cache(path: str | Path) -> dict[str, np.ndarray]:
    """Load an embedding cache to an id -> vector map, validating constant dim."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"embedding cache not found: {path}")
    out: dict[str, np.ndarray] = {}
    dim = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "_meta" in obj:
                continue
            try:
                pid, vec = obj["id"], np.asarray(obj["vector"], dtype=np.float64)
            except (KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed cache line: {exc}") from exc
            if vec.ndim != 1:
                raise DataError(f"{path}:{lineno}: vector is not one-dimensional")
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise DataError(f"{path}:{lineno}: dim {vec.shape[0]} != first-seen dim {dim}")
            if pid in out:
                raise DataError(f"{path}:{lineno}: duplicate id {pid!r}")
            out[pid] = vec
    if not out:
        raise DataError(f"embedding cache {path} holds no vectors")
    return out


@dataclass
class AdapterParams:
    """Trainable affine projection over frozen backend embeddings: e -> W e + b."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.ndim != 1 or self.W.shape[0] != self.b.shape[0]:
            raise DataError(f"inconsistent adapter shapes: W {self.W.shape}, b {self.b.shape}")

    @property
    def dim_in(self) -> int:
        return self.W.shape[1]

    @property
    def dim_out(self) -> int:
        return self.W.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "AdapterParams":
        return cls(W=np.eye(dim), b=np.zeros(dim))

    def copy(self) -> "AdapterParams":
        return AdapterParams(W=self.W.copy(), b=self.b.copy())


def apply_adapter(params: AdapterParams, e: np.ndarray) -> np.ndarray:
    """Affine map W e + b for a single embedding."""
    e = np.asarray(e, dtype=np.float64)
    if e.shape != (params.dim_in,):
        raise DataError(f"adapter expects dim {params.dim_in}, got {e.shape}")
    return params.W @ e + params.b


def apply_adapter_batch(params: AdapterParams | None, E: np.ndarray) -> np.ndarray:
    """Apply the adapter row-wise; None means identity."""
    E = np.asarray(E, dtype=np.float64)
    if params is None:
        return E
    if E.shape[1] != params.dim_in:
        raise DataError(f"adapter expects dim {params.dim_in}, got {E.shape[1]}")
    return E @ params.W.T + params.b


def save_adapter(params: AdapterParams, path: str | Path, meta: dict | None = None) -> None:
    payload = {
        "dim_in": params.dim_in,
        "dim_out": params.dim_out,
        "W": [[float(x) for x in row] for row in params.W],
        "b": [float(x) for x in params.b],
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_adapter(path: str | Path) -> AdapterParams:
    path = Path(path)
    if not path.exists():
        raise DataError(f"adapter checkpoint not found: {path}")
    obj = json.loads(path.read_text(encoding="utf-8"))
    try:
        params = AdapterParams(W=np.asarray(obj["W"]), b=np.asarray(obj["b"]))
        if params.dim_in != obj["dim_in"] or params.dim_out != obj["dim_out"]:
            raise DataError(f"{path}: declared dims do not match matrix shapes")
    except KeyError as exc:
        raise DataError(f"{path}: missing adapter field {exc}") from exc
    return params


class EmbeddingSource:
    """Resolves paragraph ids to raw backend embeddings, memoizing results.

    Accepts a backend plus an id -> text mapping, or a pure id -> vector cache
    (in which case no backend is needed).
    """

    def __init__(
        self,
        backend: EmbeddingBackend | None = None,
        texts: Mapping[str, str] | None = None,
        cache: Mapping[str, np.ndarray] | None = None,
    ):
        if backend is None and cache is None:
            raise ConfigError("EmbeddingSource needs a backend or an id->vector cache")
        if backend is not None and texts is None and not isinstance(backend, CacheBackend):
            raise ConfigError("EmbeddingSource with a backend needs an id->text mapping")
        self.backend = backend
        self.texts = texts
        self._memo: dict[str, np.ndarray] = dict(cache) if cache else {}
        if cache is not None:
            dims = {v.shape[0] for v in self._memo.values()}
            if len(dims) > 1:
                raise DataError(f"inconsistent cached dims: {sorted(dims)}")
            self._dim = dims.pop() if dims else None
        else:
            self._dim = None

    @classmethod
    def from_backend(cls, backend: EmbeddingBackend, records) -> "EmbeddingSource":
        if isinstance(backend, CacheBackend):
            return cls(backend=backend, cache=backend.by_id)
        return cls(backend=backend, texts={rec.id: rec.text for rec in records})

    @property
    def dim(self) -> int:
        if self._dim is None:
            if self.backend is None:
                raise DataError("empty embedding cache")
            self._dim = self.backend.dim
        return self._dim

    def vectors(self, ids: Sequence[str]) -> np.ndarray:
        missing = [pid for pid in ids if pid not in self._memo]
        if missing:
            if self.backend is None:
                raise DataError(f"no embedding for id {missing[0]!r} and no backend to compute it")
            if isinstance(self.backend, CacheBackend):
                raise DataError(f"no embedding for id {missing[0]!r} in cache {self.backend.path}")
            try:
                texts = [self.texts[pid] for pid in missing]
            except KeyError as exc:
                raise DataError(f"no text known for paragraph id {exc}") from exc
            rows = embed_batch(self.backend, texts)
            for pid, row in zip(missing, rows):
                self._memo[pid] = row
        return np.asarray([self._memo[pid] for pid in ids], dtype=np.float64)
