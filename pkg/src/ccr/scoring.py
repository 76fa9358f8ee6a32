"""Questionnaire (CCR) and dictionary (DDR) scoring, plus quote recommendation
for converting questionnaire items into quotations from a historical corpus."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import AdapterParams, EmbeddingBackend, apply_adapter_batch, embed_batch
from .corpus import ParagraphRecord
from .errors import DataError
from .stats import pearson  # noqa: F401  (re-exported convenience for report code)
from .wordvec import WordVectorModel, centroid, cosine, embed_title, segment_text

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuestionnaireItem:
    id: str
    text: str
    source_item: str | None = None


@dataclass
class Questionnaire:
    """A psychological construct and the declarative items that measure it."""

    construct: str
    language: str
    items: list[QuestionnaireItem]

    def __post_init__(self):
        if not self.items:
            raise DataError(f"questionnaire {self.construct!r}: no items")
        ids = [item.id for item in self.items]
        if len(set(ids)) != len(ids):
            raise DataError(f"questionnaire {self.construct!r}: duplicate item ids")
        for item in self.items:
            if not item.text:
                raise DataError(f"questionnaire {self.construct!r}: item {item.id!r} has empty text")


@dataclass
class Dictionary:
    """A construct word list; duplicates are removed at construction (order kept)."""

    construct: str
    words: list[str] = field(default_factory=list)

    def __post_init__(self):
        deduped = list(dict.fromkeys(self.words))
        if len(deduped) != len(self.words):
            log.info("dictionary %s: removed %d duplicate words", self.construct, len(self.words) - len(deduped))
        if not deduped:
            raise DataError(f"dictionary {self.construct!r}: no words")
        self.words = deduped


@dataclass(frozen=True)
class ScoreRecord:
    paragraph_id: str
    construct: str
    method: str  # "ccr" | "ddr"
    score: float


def load_questionnaire(path: str | Path) -> Questionnaire:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        items = [
            QuestionnaireItem(id=i["id"], text=i["text"], source_item=i.get("source_item"))
            for i in obj["items"]
        ]
        return Questionnaire(construct=obj["construct"], language=obj.get("language", ""), items=items)
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed questionnaire: {exc}") from exc


def load_dictionary(path: str | Path) -> Dictionary:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return Dictionary(construct=obj["construct"], words=list(obj["words"]))
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed dictionary: {exc}") from exc


def ccr_score(paragraph_emb: np.ndarray, item_embs: Sequence[np.ndarray]) -> float:
    """Mean cosine similarity between a paragraph embedding and each item embedding."""
    if len(item_embs) == 0:
        raise DataError("ccr_score with empty item list")
    sims = [cosine(paragraph_emb, item) for item in item_embs]
    return float(np.mean(sims))


def ddr_score(
    paragraph_tokens: Sequence[str], dictionary: Dictionary, model: WordVectorModel
) -> float:
    """Cosine between the centroid of in-vocabulary paragraph token vectors and the
    centroid of in-vocabulary dictionary word vectors. OOV tokens are skipped."""
    para_vecs, skipped = _known_vectors(paragraph_tokens, model)
    if not para_vecs:
        raise DataError("no known tokens in paragraph")
    dict_vecs, dict_skipped = _known_vectors(dictionary.words, model)
    if not dict_vecs:
        raise DataError(f"no dictionary words of {dictionary.construct!r} in vocabulary")
    if skipped or dict_skipped:
        log.debug(
            "ddr_score: skipped %d/%d paragraph tokens, %d/%d dictionary words",
            skipped, len(paragraph_tokens), dict_skipped, len(dictionary.words),
        )
    return cosine(centroid(para_vecs), centroid(dict_vecs))


def _known_vectors(tokens: Sequence[str], model: WordVectorModel):
    vecs = []
    skipped = 0
    for tok in tokens:
        try:
            vecs.append(model.vector(tok))
        except DataError:
            skipped += 1
    return vecs, skipped


def pm_pseudo_ground_truth(title: str, dictionary: Dictionary, model: WordVectorModel) -> float:
    """Mean cosine between the title embedding and each in-vocabulary dictionary word."""
    title_vec = embed_title(title, model)
    sims = []
    for word in dictionary.words:
        try:
            sims.append(cosine(title_vec, model.vector(word)))
        except DataError:
            continue
    if not sims:
        raise DataError(f"no usable dictionary words for {dictionary.construct!r}")
    return float(np.mean(sims))


def recommend_quotes(
    item_text: str,
    quote_corpus: Sequence[dict],
    backend: EmbeddingBackend,
    adapter: AdapterParams | None = None,
    k: int = 20,
) -> list[tuple[str, float]]:
    """Top-k quotes by adapted-embedding cosine to the item text, descending,
    ties broken by quote id. Candidates beyond the corpus size are clamped."""
    if not quote_corpus:
        raise DataError("empty quote corpus")
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    texts = [q["text"] for q in quote_corpus]
    ids = [q["id"] for q in quote_corpus]
    item_vec = apply_adapter_batch(adapter, embed_batch(backend, [item_text]))[0]
    quote_vecs = apply_adapter_batch(adapter, embed_batch(backend, texts))
    scored = [(qid, cosine(item_vec, vec)) for qid, vec in zip(ids, quote_vecs)]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[: min(k, len(scored))]


def score_corpus(
    records: Sequence[ParagraphRecord],
    questionnaire: Questionnaire,
    backend: EmbeddingBackend,
    adapter: AdapterParams | None = None,
) -> list[ScoreRecord]:
    """CCR loading score of every paragraph against the questionnaire.

    Item embeddings are computed once and reused; the adapter (when given) is
    applied to both paragraph and item embeddings.
    """
    if not records:
        raise DataError("no records to score")
    item_embs = apply_adapter_batch(adapter, embed_batch(backend, [i.text for i in questionnaire.items]))
    out = []
    para_embs = apply_adapter_batch(adapter, embed_batch(backend, [r.text for r in records]))
    for rec, emb in zip(records, para_embs):
        try:
            score = ccr_score(emb, item_embs)
        except DataError as exc:
            raise DataError(f"scoring paragraph {rec.id!r}: {exc}") from exc
        out.append(ScoreRecord(rec.id, questionnaire.construct, "ccr", score))
    return out


def ddr_score_corpus(
    records: Sequence[ParagraphRecord], dictionary: Dictionary, model: WordVectorModel
) -> list[ScoreRecord]:
    """DDR score of every paragraph against the dictionary."""
    if not records:
        raise DataError("no records to score")
    out = []
    for rec in records:
        tokens = segment_text(rec.text, model)
        try:
            score = ddr_score(tokens, dictionary, model)
        except DataError as exc:
            raise DataError(f"scoring paragraph {rec.id!r}: {exc}") from exc
        out.append(ScoreRecord(rec.id, dictionary.construct, "ddr", score))
    return out


def write_scores(scores: Sequence[ScoreRecord], path: str | Path, meta: dict | None = None) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for s in scores:
            fh.write(
                json.dumps(
                    {"paragraph_id": s.paragraph_id, "construct": s.construct, "method": s.method, "score": s.score},
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_scores(path: str | Path) -> list[ScoreRecord]:
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
                out.append(ScoreRecord(obj["paragraph_id"], obj["construct"], obj["method"], float(obj["score"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed score line: {exc}") from exc
    return out
