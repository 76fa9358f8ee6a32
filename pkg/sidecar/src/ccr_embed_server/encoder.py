"""Sentence encoders served by the sidecar.

Two kinds: real sentence-transformer checkpoints (loaded by identifier, needs
the optional sentence-transformers dependency and a local model), and a
deterministic hash encoder ("hash:dim=256,seed=0") that embeds texts from
character n-gram hashes. The hash encoder needs no model files, which keeps
protocol tests and offline pipelines self-contained.
"""

from __future__ import annotations

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


class HashEncoder:
    """Deterministic encoder: the embedding is the L2-normalized mean of
    hash-seeded gaussian vectors of the text's character n-grams."""

    pooling = "ngram-mean"

    def __init__(self, dim: int = 256, seed: int = 0, min_n: int = 1, max_n: int = 3):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed
        self.min_n = min_n
        self.max_n = max_n
        self.name = f"hash:dim={dim},seed={seed}"

    def _gram_vector(self, gram: str) -> np.ndarray:
        payload = gram.encode("utf-8") + (self.seed & _MASK64).to_bytes(8, "little")
        rng = np.random.default_rng(_fnv1a(payload))
        return rng.standard_normal(self.dim)

    def encode(self, texts: list[str]) -> np.ndarray:
        rows = np.empty((len(texts), self.dim))
        for k, text in enumerate(texts):
            grams = []
            for n in range(self.min_n, self.max_n + 1):
                grams.extend(text[i : i + n] for i in range(max(len(text) - n + 1, 0)))
            if not grams:
                grams = [text]
            mean = np.mean([self._gram_vector(g) for g in grams], axis=0)
            norm = np.linalg.norm(mean)
            rows[k] = mean / norm if norm > 0 else self._gram_vector(text)
        return rows


class SentenceTransformerEncoder:
    """Wraps a sentence-transformers checkpoint; mean pooling unless the model
    ships its own pooling head."""

    pooling = "model-default"

    def __init__(self, model_name: str):
        from sentence_transformers import SentenceTransformer  # optional dependency

        self.name = model_name
        self._model = SentenceTransformer(model_name)
        self._model.eval()
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts: list[str]) -> np.ndarray:
        return np.asarray(
            self._model.encode(texts, convert_to_numpy=True, show_progress_bar=False),
            dtype=np.float64,
        )


def load_encoder(model_name: str):
    """Encoder for a model identifier; 'hash:...' selects the built-in encoder."""
    if model_name == "hash" or model_name.startswith("hash:"):
        kwargs = {"dim": 256, "seed": 0}
        if ":" in model_name and model_name.split(":", 1)[1]:
            for item in model_name.split(":", 1)[1].split(","):
                key, _, value = item.partition("=")
                if key not in kwargs or not value:
                    raise ValueError(f"bad hash encoder option {item!r}")
                kwargs[key] = int(value)
        return HashEncoder(**kwargs)
    return SentenceTransformerEncoder(model_name)
