"""Static word-vector training and lookup.

Implements CBOW and skip-gram with negative sampling (unigram^0.75 noise
distribution) and an optional subword mode that hashes character n-grams into
buckets and represents a word as the mean of its word vector and n-gram
vectors. Training is single-threaded and bit-reproducible for a given seed.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .hashing import fnv1a64

log = logging.getLogger(__name__)

ARCHITECTURES = ("cbow", "skipgram")
DEFAULT_BUCKET_COUNT = 2_000_000
MIN_LEARNING_RATE = 1e-4


@dataclass(frozen=True)
class SubwordConfig:
    min_n: int = 1
    max_n: int = 4
    bucket_count: int = DEFAULT_BUCKET_COUNT

    def __post_init__(self):
        if not (1 <= self.min_n <= self.max_n):
            raise ConfigError(f"need 1 <= min_n <= max_n, got ({self.min_n}, {self.max_n})")
        if self.bucket_count < 1:
            raise ConfigError("bucket_count must be >= 1")


@dataclass(frozen=True)
class WordVecTrainConfig:
    architecture: str = "skipgram"
    dim: int = 300
    epochs: int = 5
    window: int = 5
    negative: int = 5
    min_count: int = 10
    subword: SubwordConfig | None = None
    learning_rate: float | None = None  # None -> 0.025 skip-gram / 0.05 CBOW
    seed: int = 42

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.dim < 1 or self.epochs < 1 or self.window < 1:
            raise ConfigError("dim, epochs, and window must be positive")
        if self.negative < 0 or self.min_count < 1:
            raise ConfigError("negative must be >= 0 and min_count >= 1")

    @property
    def initial_lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 0.025 if self.architecture == "skipgram" else 0.05


@dataclass
class WordVectorModel:
    """Token -> vector table with optional hashed n-gram vectors for OOV lookup."""

    dim: int
    vocab: dict[str, int]
    vectors: np.ndarray
    metadata: dict = field(default_factory=dict)
    ngram_vectors: np.ndarray | None = None

    def __contains__(self, token: str) -> bool:
        return token in self.vocab

    @property
    def subword(self) -> SubwordConfig | None:
        return self.metadata.get("subword")

    def has_vector(self, token: str) -> bool:
        return token in self.vocab or (self.subword is not None and len(token) >= 1)

    def vector(self, token: str) -> np.ndarray:
        """Vector for a token; OOV tokens are composed from n-grams in subword mode."""
        idx = self.vocab.get(token)
        if idx is not None:
            return self.vectors[idx]
        sw = self.subword
        if sw is None or self.ngram_vectors is None:
            raise DataError(f"token {token!r} not in vocabulary")
        buckets = ngram_buckets(token, sw)
        if not buckets:
            raise DataError(f"token {token!r} has no character n-grams")
        return self.ngram_vectors[buckets].mean(axis=0)


def ngram_buckets(word: str, config: SubwordConfig) -> list[int]:
    """Hash all character n-grams of the word (lengths min_n..max_n) into buckets."""
    out = []
    for n in range(config.min_n, config.max_n + 1):
        if n > len(word):
            break
        for start in range(len(word) - n + 1):
            gram = word[start : start + n]
            out.append(fnv1a64(gram.encode("utf-8")) % config.bucket_count)
    return out


def _as_token_sequences(corpus_tokens: Iterable) -> list[list[str]]:
    sentences = []
    for sent in corpus_tokens:
        if isinstance(sent, str):
            sentences.append(sent.split())
        else:
            sentences.append(list(sent))
    return sentences


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


class _NoiseSampler:
    """Negative sampling from the unigram^0.75 distribution via inverse CDF."""

    def __init__(self, frequencies: np.ndarray):
        weights = frequencies.astype(np.float64) ** 0.75
        self.cdf = np.cumsum(weights / weights.sum())

    def draw(self, rng: np.random.Generator, k: int) -> np.ndarray:
        return np.searchsorted(self.cdf, rng.random(k))


def train_word_vectors(corpus_tokens: Iterable, config: WordVecTrainConfig) -> WordVectorModel:
    """Train a word-vector model on pre-segmented sentences.

    Accepts sequences of tokens or raw strings (whitespace-split as a fallback).
    Deterministic for a given seed: single worker, seeded initialization and
    negative sampling, fixed context window.
    """
    sentences = _as_token_sequences(corpus_tokens)
    if not sentences or all(not s for s in sentences):
        raise DataError("empty training corpus")

    counts = Counter(tok for sent in sentences for tok in sent)
    kept = sorted(
        ((tok, c) for tok, c in counts.items() if c >= config.min_count),
        key=lambda tc: (-tc[1], tc[0]),
    )
    if not kept:
        raise DataError(f"vocabulary empty after min_count={config.min_count} truncation")
    vocab = {tok: i for i, (tok, _) in enumerate(kept)}
    freqs = np.array([c for _, c in kept], dtype=np.float64)
    vsize = len(vocab)

    sw = config.subword
    n_buckets = sw.bucket_count if sw is not None else 0
    rng = np.random.default_rng(config.seed)
    bound = 0.5 / config.dim
    in_vecs = rng.uniform(-bound, bound, size=(vsize + n_buckets, config.dim))
    out_vecs = np.zeros((vsize, config.dim))
    sampler = _NoiseSampler(freqs)

    # Input representation of word i = mean over its part rows (word row plus
    # hashed n-gram rows in subword mode).
    if sw is not None:
        parts = [
            np.array([i] + [vsize + b for b in ngram_buckets(tok, sw)], dtype=np.int64)
            for tok, i in vocab.items()
        ]
    else:
        parts = [np.array([i], dtype=np.int64) for i in range(vsize)]

    encoded = [
        np.array([vocab[t] for t in sent if t in vocab], dtype=np.int64) for sent in sentences
    ]
    encoded = [s for s in encoded if len(s) > 0]
    total_positions = sum(len(s) for s in encoded) * config.epochs
    if total_positions == 0:
        raise DataError("no in-vocabulary tokens to train on")

    lr0 = config.initial_lr
    processed = 0
    for _epoch in range(config.epochs):
        for sent in encoded:
            for center_pos, center in enumerate(sent):
                alpha = max(MIN_LEARNING_RATE, lr0 * (1.0 - processed / total_positions))
                processed += 1
                lo = max(0, center_pos - config.window)
                hi = min(len(sent), center_pos + config.window + 1)
                context = [sent[p] for p in range(lo, hi) if p != center_pos]
                if not context:
                    continue
                if config.architecture == "skipgram":
                    for ctx in context:
                        _train_pair(
                            in_vecs, out_vecs, parts[center], int(ctx),
                            sampler, rng, config.negative, alpha,
                        )
                else:
                    _train_cbow(
                        in_vecs, out_vecs, [parts[c] for c in context], int(center),
                        sampler, rng, config.negative, alpha,
                    )

    metadata = {
        "framework": config.architecture,
        "min_count": config.min_count,
        "subword": sw,
    }
    if sw is not None:
        composed = np.vstack([in_vecs[p].mean(axis=0) for p in parts])
        return WordVectorModel(
            dim=config.dim, vocab=vocab, vectors=composed,
            metadata=metadata, ngram_vectors=in_vecs[vsize:],
        )
    return WordVectorModel(dim=config.dim, vocab=vocab, vectors=in_vecs[:vsize], metadata=metadata)


def _train_pair(in_vecs, out_vecs, center_parts, positive, sampler, rng, negative, alpha):
    """One skip-gram update: center predicts one context word plus noise words."""
    l1 = in_vecs[center_parts].mean(axis=0)
    targets = [positive]
    labels = [1.0]
    if negative > 0:
        for t in sampler.draw(rng, negative):
            if int(t) != positive:
                targets.append(int(t))
                labels.append(0.0)
    targets = np.asarray(targets, dtype=np.int64)
    labels = np.asarray(labels)
    g = (labels - _sigmoid(out_vecs[targets] @ l1)) * alpha
    dl1 = g @ out_vecs[targets]
    np.add.at(out_vecs, targets, np.outer(g, l1))
    np.add.at(in_vecs, center_parts, dl1[None, :].repeat(len(center_parts), 0) / len(center_parts))


def _train_cbow(in_vecs, out_vecs, context_parts, center, sampler, rng, negative, alpha):
    """One CBOW update: mean of context representations predicts the center word."""
    reps = [in_vecs[p].mean(axis=0) for p in context_parts]
    l1 = np.mean(reps, axis=0)
    targets = [center]
    labels = [1.0]
    if negative > 0:
        for t in sampler.draw(rng, negative):
            if int(t) != center:
                targets.append(int(t))
                labels.append(0.0)
    targets = np.asarray(targets, dtype=np.int64)
    labels = np.asarray(labels)
    g = (labels - _sigmoid(out_vecs[targets] @ l1)) * alpha
    dl1 = g @ out_vecs[targets]
    np.add.at(out_vecs, targets, np.outer(g, l1))
    share = dl1 / len(context_parts)
    for p in context_parts:
        np.add.at(in_vecs, p, share[None, :].repeat(len(p), 0) / len(p))


def save_vectors(model: WordVectorModel, path: str | Path) -> None:
    """Write the standard text vector format: 'vocab_size dim' header then one
    'token v1 ... v_dim' line per word. Subword bucket vectors are not persisted."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{len(model.vocab)} {model.dim}\n")
        for tok, idx in model.vocab.items():
            if any(ch.isspace() for ch in tok):
                raise DataError(f"token {tok!r} contains whitespace, not serializable")
            comps = " ".join(f"{x:.8e}" for x in model.vectors[idx])
            fh.write(f"{tok} {comps}\n")


def load_vectors(path: str | Path) -> WordVectorModel:
    """Load a text-format vector file; errors carry 1-based line numbers."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"vector file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}:1: expected header 'vocab_size dim'")
        try:
            vsize, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise DataError(f"{path}:1: non-integer header") from exc
        if vsize < 1 or dim < 1:
            raise DataError(f"{path}:1: vocab_size and dim must be positive")
        vocab: dict[str, int] = {}
        vectors = np.empty((vsize, dim))
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split(" ")
            if len(fields) != dim + 1:
                raise DataError(f"{path}:{lineno}: expected {dim} components, got {len(fields) - 1}")
            tok = fields[0]
            if tok in vocab:
                raise DataError(f"{path}:{lineno}: duplicate token {tok!r}")
            try:
                row = [float(x) for x in fields[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric component") from exc
            vectors[len(vocab)] = row
            vocab[tok] = len(vocab)
        if len(vocab) != vsize:
            raise DataError(f"{path}: header says {vsize} tokens, file has {len(vocab)}")
    return WordVectorModel(dim=dim, vocab=vocab, vectors=vectors, metadata={"framework": "loaded"})


def segment_text(text: str, model: WordVectorModel | None = None) -> list[str]:
    """Whitespace segmentation with a per-character fallback for tokens the model
    does not know (covers unsegmented CJK input)."""
    tokens = text.split()
    if model is None:
        return tokens
    out: list[str] = []
    for tok in tokens:
        if model.has_vector(tok) or len(tok) == 1:
            out.append(tok)
        else:
            out.extend(tok)
    return out


def embed_title(title: str, model: WordVectorModel) -> np.ndarray:
    """Mean of the title's token vectors (single-token titles return that vector).

    In subword mode OOV tokens are composed from n-grams; otherwise OOV tokens
    are skipped. Raises DataError when no token is representable.
    """
    if not title:
        raise DataError("empty title")
    vecs = []
    for tok in segment_text(title, model):
        try:
            vecs.append(model.vector(tok))
        except DataError:
            continue
    if not vecs:
        raise DataError(f"unrepresentable title {title!r}")
    if len(vecs) == 1:
        return np.asarray(vecs[0], dtype=np.float64)
    return np.mean(np.asarray(vecs, dtype=np.float64), axis=0)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, clipped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        raise DataError("zero-norm input to cosine")
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def centroid(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Component-wise arithmetic mean of a nonempty list of equal-dim vectors."""
    if len(vectors) == 0:
        raise DataError("centroid of empty list")
    rows = [np.asarray(v, dtype=np.float64) for v in vectors]
    if any(r.shape != rows[0].shape or r.ndim != 1 for r in rows):
        raise DataError("dimension mismatch in centroid input")
    return np.asarray(rows).mean(axis=0)
