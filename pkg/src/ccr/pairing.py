"""Pseudo ground truth from title similarity: percentile thresholds, positive and
negative paragraph-pair labeling, and anchor-positive-negative triplet sampling."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .corpus import ParagraphRecord
from .errors import ConfigError, DataError
from .wordvec import WordVectorModel, cosine, embed_title

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ThresholdConfig:
    """Lower/upper percentiles over the title-similarity distribution."""

    lower_pct: float = 10.0
    upper_pct: float = 90.0

    def __post_init__(self):
        if not (0.0 < self.lower_pct < 100.0 and 0.0 < self.upper_pct < 100.0):
            raise ConfigError(f"percentiles must lie in (0, 100): {self}")
        if self.lower_pct >= self.upper_pct:
            raise ConfigError(f"lower_pct must be < upper_pct: {self}")


THRESHOLD_PRESETS = (
    ThresholdConfig(0.5, 99.5),
    ThresholdConfig(1.0, 99.0),
    ThresholdConfig(10.0, 90.0),
    ThresholdConfig(25.0, 75.0),
)


@dataclass(frozen=True)
class LabeledPair:
    id_i: str
    id_j: str
    title_sim: float
    label: str  # "positive" | "negative"


@dataclass
class LabeledPairSet:
    pairs: list[LabeledPair]
    thresholds_used: tuple[float, float]  # (lower, upper)

    def positives(self) -> list[LabeledPair]:
        return [p for p in self.pairs if p.label == "positive"]

    def negatives(self) -> list[LabeledPair]:
        return [p for p in self.pairs if p.label == "negative"]


@dataclass(frozen=True)
class Triplet:
    anchor_id: str
    positive_id: str
    negative_id: str


def title_key(t1: str, t2: str) -> tuple[str, str]:
    return (t1, t2) if t1 <= t2 else (t2, t1)


def title_similarity_matrix(
    records: Sequence[ParagraphRecord], model: WordVectorModel
) -> dict[tuple[str, str], float]:
    """Cosine similarity for every unordered pair of distinct unique titles.

    Unrepresentable titles are excluded with a warning; identical titles are not
    in the map (they are always-positive downstream).
    """
    seen: dict[str, None] = {}
    for rec in records:
        seen.setdefault(rec.title, None)
    embeddings: dict[str, np.ndarray] = {}
    dropped = []
    for title in seen:
        try:
            embeddings[title] = embed_title(title, model)
        except DataError:
            dropped.append(title)
    if dropped:
        log.warning("excluding %d unrepresentable titles: %s", len(dropped), dropped[:10])
    titles = list(embeddings)
    if len(titles) < 2:
        raise DataError(f"need at least 2 representable unique titles, got {len(titles)}")
    mat = np.asarray([embeddings[t] for t in titles], dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        raise DataError("zero-norm title embedding")
    unit = mat / norms[:, None]
    gram = np.clip(unit @ unit.T, -1.0, 1.0)
    sims: dict[tuple[str, str], float] = {}
    for i in range(len(titles)):
        for j in range(i + 1, len(titles)):
            sims[title_key(titles[i], titles[j])] = float(gram[i, j])
    return sims


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: 1-based index ceil(pct/100 * N) into sorted values."""
    n = len(sorted_values)
    k = math.ceil(Fraction(pct) * n / 100)
    k = min(max(k, 1), n)
    return sorted_values[k - 1]


def compute_thresholds(sims: Sequence[float], config: ThresholdConfig) -> tuple[float, float]:
    """(lower, upper) thresholds as nearest-rank percentiles of the similarity values."""
    if len(sims) == 0:
        raise DataError("empty similarity list")
    ordered = sorted(sims)
    return nearest_rank(ordered, config.lower_pct), nearest_rank(ordered, config.upper_pct)


def iter_labeled_pairs(
    records: Sequence[ParagraphRecord],
    title_sims: Mapping[tuple[str, str], float],
    thresholds: tuple[float, float],
) -> Iterator[LabeledPair]:
    """Lazily enumerate labeled paragraph pairs (i < j in record order).

    A pair is positive when its titles are identical (recorded as sim 1.0) or the
    title similarity exceeds the upper threshold; negative when the similarity is
    below the lower threshold; otherwise it is omitted. Pairs whose titles have no
    similarity entry (excluded titles) are skipped.
    """
    lower, upper = thresholds
    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            ri, rj = records[i], records[j]
            if ri.title == rj.title:
                yield LabeledPair(ri.id, rj.id, 1.0, "positive")
                continue
            sim = title_sims.get(title_key(ri.title, rj.title))
            if sim is None:
                continue
            if sim > upper:
                yield LabeledPair(ri.id, rj.id, sim, "positive")
            elif sim < lower:
                yield LabeledPair(ri.id, rj.id, sim, "negative")


def label_pairs(
    records: Sequence[ParagraphRecord],
    title_sims: Mapping[tuple[str, str], float],
    thresholds: tuple[float, float],
) -> LabeledPairSet:
    pairs = list(iter_labeled_pairs(records, title_sims, thresholds))
    return LabeledPairSet(pairs=pairs, thresholds_used=tuple(thresholds))


def _pools(pairs: LabeledPairSet, allowed_ids: set[str] | None = None):
    positive: dict[str, list[str]] = {}
    negative: dict[str, list[str]] = {}
    for pair in pairs.pairs:
        if allowed_ids is not None and (pair.id_i not in allowed_ids or pair.id_j not in allowed_ids):
            continue
        table = positive if pair.label == "positive" else negative
        table.setdefault(pair.id_i, []).append(pair.id_j)
        table.setdefault(pair.id_j, []).append(pair.id_i)
    for table in (positive, negative):
        for ids in table.values():
            ids.sort()
    return positive, negative


def sample_triplets_random(
    pairs: LabeledPairSet, split_records: Sequence[ParagraphRecord], seed: int = 42
) -> list[Triplet]:
    """One triplet per eligible anchor: positive and negative partners drawn
    uniformly from the anchor's pools, restricted to the given records."""
    allowed = {rec.id for rec in split_records}
    positive, negative = _pools(pairs, allowed)
    rng = random.Random(seed)
    triplets = []
    skipped = 0
    for rec in split_records:
        pos_pool = positive.get(rec.id)
        neg_pool = negative.get(rec.id)
        if not pos_pool or not neg_pool:
            skipped += 1
            continue
        triplets.append(Triplet(rec.id, rng.choice(pos_pool), rng.choice(neg_pool)))
    if skipped:
        log.info("triplet sampling: %d anchors skipped (empty pool)", skipped)
    if not triplets:
        raise DataError("no eligible anchors: every paragraph lacks a positive or negative partner")
    return triplets


def sample_triplets_hard(
    pairs: LabeledPairSet, embeddings: Mapping[str, np.ndarray], seed: int = 42
) -> list[Triplet]:
    """Hard triplets: for each anchor pick the least-similar positive and the
    most-similar negative under the given embeddings; ties break to the smallest id."""
    positive, negative = _pools(pairs)
    triplets = []
    skipped = 0
    for anchor in sorted(set(positive) | set(negative)):
        pos_pool = positive.get(anchor)
        neg_pool = negative.get(anchor)
        if not pos_pool or not neg_pool:
            skipped += 1
            continue
        anchor_emb = _lookup(embeddings, anchor)
        best_pos, _ = _argopt(anchor_emb, pos_pool, embeddings, want_max=False)
        best_neg, _ = _argopt(anchor_emb, neg_pool, embeddings, want_max=True)
        triplets.append(Triplet(anchor, best_pos, best_neg))
    if skipped:
        log.info("hard sampling: %d anchors skipped (empty pool)", skipped)
    if not triplets:
        raise DataError("no eligible anchors: every paragraph lacks a positive or negative partner")
    return triplets


def _lookup(embeddings: Mapping[str, np.ndarray], pid: str) -> np.ndarray:
    try:
        return embeddings[pid]
    except KeyError:
        raise DataError(f"missing embedding for paragraph {pid!r}") from None


def _argopt(anchor_emb, pool, embeddings, want_max: bool):
    best_id = None
    best_val = None
    for cand in pool:  # pool is sorted, so strict comparison keeps the smallest id on ties
        val = cosine(anchor_emb, _lookup(embeddings, cand))
        if best_val is None or (val > best_val if want_max else val < best_val):
            best_id, best_val = cand, val
    return best_id, best_val


def sample_validation_pairs(
    records: Sequence[ParagraphRecord],
    title_sims: Mapping[tuple[str, str], float],
    seed: int = 42,
    pairs_per_record: int = 1,
) -> list[tuple[str, str, float]]:
    """Random paragraph pairs with their title-similarity pseudo ground truth,
    one per record by default (used as the training validation set)."""
    if len(records) < 2:
        raise DataError("need at least 2 records to form validation pairs")
    rng = random.Random(seed)
    out = []
    for rec in records:
        for _ in range(pairs_per_record):
            for _attempt in range(50):
                other = records[rng.randrange(len(records))]
                if other.id == rec.id:
                    continue
                if other.title == rec.title:
                    out.append((rec.id, other.id, 1.0))
                    break
                sim = title_sims.get(title_key(rec.title, other.title))
                if sim is not None:
                    out.append((rec.id, other.id, sim))
                    break
    if not out:
        raise DataError("could not form any validation pair with known title similarity")
    return out


def write_pairs(pair_set: LabeledPairSet, path: str | Path, meta: dict | None = None) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = dict(meta or {})
        header["thresholds"] = list(pair_set.thresholds_used)
        fh.write(json.dumps({"_meta": header}, sort_keys=True) + "\n")
        for p in pair_set.pairs:
            fh.write(json.dumps({"i": p.id_i, "j": p.id_j, "sim": p.title_sim, "label": p.label}) + "\n")


def load_pairs(path: str | Path) -> LabeledPairSet:
    path = Path(path)
    pairs = []
    thresholds = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "_meta" in obj:
                raw = obj["_meta"].get("thresholds")
                thresholds = tuple(raw) if raw else None
                continue
            if "thresholds" in obj and "i" not in obj:
                thresholds = tuple(obj["thresholds"])
                continue
            try:
                pairs.append(LabeledPair(obj["i"], obj["j"], float(obj["sim"]), obj["label"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed pair line: {exc}") from exc
    if thresholds is None:
        thresholds = (float("nan"), float("nan"))
    return LabeledPairSet(pairs=pairs, thresholds_used=thresholds)


def write_triplets(triplets: Sequence[Triplet], path: str | Path, meta: dict | None = None) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for t in triplets:
            fh.write(json.dumps({"anchor": t.anchor_id, "pos": t.positive_id, "neg": t.negative_id}) + "\n")


def load_triplets(path: str | Path) -> list[Triplet]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "_meta" in obj:
                continue
            try:
                out.append(Triplet(obj["anchor"], obj["pos"], obj["neg"]))
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: malformed triplet line: {exc}") from exc
    return out
