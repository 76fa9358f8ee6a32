"""Corpus ingestion, paragraph normalization, and train/valid/test split assignment.

The canonical corpus format is JSONL, one object per line with fields
{id, work_id, title, text, split?}. A leading {"_meta": ...} line is treated
as artifact metadata and skipped on read.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")

# Sentence-final punctuation used as split points for over-long paragraphs.
SENTENCE_ENDINGS = "。！？；.!?;"


@dataclass(frozen=True)
class ParagraphRecord:
    """One corpus paragraph: a unit of text belonging to a titled work."""

    id: str
    work_id: str
    title: str
    text: str
    split: str | None = None

    def __post_init__(self):
        if not self.text:
            raise DataError(f"paragraph {self.id!r}: empty text")
        if self.split is not None and self.split not in SPLITS:
            raise DataError(f"paragraph {self.id!r}: unknown split {self.split!r}")

    @property
    def char_len(self) -> int:
        """Paragraph length in Unicode scalar values (not bytes)."""
        return len(self.text)

    def to_json(self) -> dict:
        out = {"id": self.id, "work_id": self.work_id, "title": self.title, "text": self.text}
        if self.split is not None:
            out["split"] = self.split
        return out


@dataclass(frozen=True)
class CorpusStats:
    n_paragraphs: int
    n_works: int
    mean_char_len: float
    split_fractions: tuple[float, float, float]


def ingest_corpus(path: str | Path, format: str = "jsonl") -> list[ParagraphRecord]:
    """Load paragraph records from a JSONL file, in file order.

    Raises DataError with a 1-based line number on malformed lines, missing or
    empty required fields, and duplicate ids.
    """
    if format != "jsonl":
        raise ConfigError(f"unsupported corpus format {format!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    records: list[ParagraphRecord] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected an object")
            if "_meta" in obj:
                continue
            for field in ("id", "work_id", "title", "text"):
                if not isinstance(obj.get(field), str):
                    raise DataError(f"{path}:{lineno}: missing or non-string field {field!r}")
            if not obj["text"]:
                raise DataError(f"{path}:{lineno}: empty text")
            if not obj["title"]:
                raise DataError(f"{path}:{lineno}: empty title")
            if obj["id"] in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {obj['id']!r}")
            seen.add(obj["id"])
            try:
                rec = ParagraphRecord(
                    id=obj["id"],
                    work_id=obj["work_id"],
                    title=obj["title"],
                    text=obj["text"],
                    split=obj.get("split"),
                )
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            records.append(rec)
    return records


def write_corpus(records: list[ParagraphRecord], path: str | Path, meta: dict | None = None) -> None:
    """Write records as canonical JSONL, with an optional leading _meta line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, ensure_ascii=False, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def corpus_stats(records: list[ParagraphRecord]) -> CorpusStats:
    if not records:
        raise DataError("empty corpus")
    counts = {name: 0 for name in SPLITS}
    for rec in records:
        if rec.split is None:
            raise DataError(f"paragraph {rec.id!r} has no split; run assign_splits first")
        counts[rec.split] += 1
    n = len(records)
    return CorpusStats(
        n_paragraphs=n,
        n_works=len({rec.work_id for rec in records}),
        mean_char_len=sum(rec.char_len for rec in records) / n,
        split_fractions=tuple(counts[name] / n for name in SPLITS),
    )


def split_sentences(text: str) -> list[str]:
    """Split at sentence-final punctuation, keeping the punctuation with its sentence."""
    sentences: list[str] = []
    start = 0
    for i, ch in enumerate(text):
        if ch in SENTENCE_ENDINGS:
            sentences.append(text[start : i + 1])
            start = i + 1
    if start < len(text):
        sentences.append(text[start:])
    return sentences


def _split_long(rec: ParagraphRecord, max_len: int) -> list[ParagraphRecord]:
    """Split one over-long paragraph at sentence boundaries into segments < max_len.

    A single sentence that itself reaches max_len cannot be split further; it is
    emitted whole and flagged via the log.
    """
    segments: list[str] = []
    current = ""
    for sentence in split_sentences(rec.text):
        if current and len(current) + len(sentence) >= max_len:
            segments.append(current)
            current = sentence
        else:
            current += sentence
    if current:
        segments.append(current)
    if len(segments) == 1:
        if len(segments[0]) >= max_len:
            log.warning(
                "paragraph %s: single sentence of %d chars >= max_len %d, emitted whole",
                rec.id, len(segments[0]), max_len,
            )
        return [rec]
    out = []
    for k, seg in enumerate(segments, start=1):
        if len(seg) >= max_len:
            log.warning(
                "paragraph %s#%d: single sentence of %d chars >= max_len %d, emitted whole",
                rec.id, k, len(seg), max_len,
            )
        out.append(replace(rec, id=f"{rec.id}#{k}", text=seg))
    return out


def normalize_paragraphs(
    records: list[ParagraphRecord], min_len: int = 50, max_len: int = 500
) -> list[ParagraphRecord]:
    """Normalize paragraph lengths per work: split over-long paragraphs at sentence
    boundaries, then merge paragraphs shorter than min_len into their preceding
    paragraph (the first paragraph of a work merges into the following one).

    Merges that would push the result to max_len or beyond are skipped so that the
    split and merge passes cannot undo each other; this makes the operation
    idempotent. Concatenated text per work is preserved exactly. Records must be
    grouped by work_id in document order.
    """
    if min_len < 1 or max_len <= min_len:
        raise ConfigError(f"invalid length bounds: min_len={min_len}, max_len={max_len}")
    out: list[ParagraphRecord] = []
    for work in _group_by_work(records):
        segments: list[ParagraphRecord] = []
        for rec in work:
            if rec.char_len >= max_len:
                segments.extend(_split_long(rec, max_len))
            else:
                segments.append(rec)
        merged: list[ParagraphRecord] = []
        for rec in segments:
            if merged and rec.char_len < min_len and merged[-1].char_len + rec.char_len < max_len:
                prev = merged[-1]
                merged[-1] = replace(prev, text=prev.text + rec.text)
            else:
                merged.append(rec)
        if (
            len(merged) > 1
            and merged[0].char_len < min_len
            and merged[0].char_len + merged[1].char_len < max_len
        ):
            merged[0] = replace(merged[0], text=merged[0].text + merged[1].text)
            del merged[1]
        out.extend(merged)
    return out


def _group_by_work(records: list[ParagraphRecord]) -> list[list[ParagraphRecord]]:
    groups: list[list[ParagraphRecord]] = []
    for rec in records:
        if groups and groups[-1][0].work_id == rec.work_id:
            groups[-1].append(rec)
        else:
            groups.append([rec])
    return groups


def _allocate(n: int, fractions: tuple[float, ...]) -> list[int]:
    """Largest-remainder allocation of n items over fractions (exact when possible)."""
    exact = [Fraction(f) * n for f in fractions]
    counts = [int(e) for e in exact]
    short = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def assign_splits(
    records: list[ParagraphRecord],
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 42,
    stratify_by_title: bool = False,
) -> list[ParagraphRecord]:
    """Assign train/valid/test splits at the paragraph level, deterministically.

    With stratify_by_title, allocation runs per title so each split's title
    distribution tracks the corpus. Output preserves input order.
    """
    if len(fractions) != len(SPLITS):
        raise ConfigError(f"need {len(SPLITS)} fractions, got {len(fractions)}")
    if any(f <= 0 for f in fractions):
        raise ConfigError(f"fractions must be positive: {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1: {fractions}")
    rng = random.Random(seed)
    assignment: dict[int, str] = {}
    if stratify_by_title:
        groups: dict[str, list[int]] = {}
        for idx, rec in enumerate(records):
            groups.setdefault(rec.title, []).append(idx)
        group_lists = list(groups.values())
    else:
        group_lists = [list(range(len(records)))]
    for indices in group_lists:
        indices = list(indices)
        rng.shuffle(indices)
        counts = _allocate(len(indices), fractions)
        pos = 0
        for name, count in zip(SPLITS, counts):
            for idx in indices[pos : pos + count]:
                assignment[idx] = name
            pos += count
    return [replace(rec, split=assignment[idx]) for idx, rec in enumerate(records)]
