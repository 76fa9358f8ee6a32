import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccr.corpus import (
    ParagraphRecord,
    assign_splits,
    corpus_stats,
    ingest_corpus,
    normalize_paragraphs,
    split_sentences,
    write_corpus,
)
from ccr.errors import ConfigError, DataError

from conftest import make_record


def write_jsonl(path, rows):
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


class TestIngest:
    def test_three_lines_in_order(self, tmp_path):
        rows = [
            {"id": f"p{i}", "work_id": "w1", "title": "節義", "text": f"text {i}"}
            for i in range(3)
        ]
        path = tmp_path / "c.jsonl"
        write_jsonl(path, rows)
        records = ingest_corpus(path)
        assert [r.id for r in records] == ["p0", "p1", "p2"]
        assert records[1].text == "text 1"

    def test_empty_text_names_line(self, tmp_path):
        rows = [
            {"id": "p0", "work_id": "w", "title": "t", "text": "ok"},
            {"id": "p1", "work_id": "w", "title": "t", "text": ""},
        ]
        path = tmp_path / "c.jsonl"
        write_jsonl(path, rows)
        with pytest.raises(DataError, match=":2"):
            ingest_corpus(path)

    def test_malformed_line_names_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "p0", "work_id": "w", "title": "t", "text": "x"}\nnot json\n')
        with pytest.raises(DataError, match=":2"):
            ingest_corpus(path)

    def test_duplicate_id(self, tmp_path):
        rows = [
            {"id": "p0", "work_id": "w", "title": "t", "text": "a"},
            {"id": "p0", "work_id": "w", "title": "t", "text": "b"},
        ]
        path = tmp_path / "c.jsonl"
        write_jsonl(path, rows)
        with pytest.raises(DataError, match="duplicate id"):
            ingest_corpus(path)

    def test_write_then_ingest_round_trips(self, tmp_path):
        records = [make_record(f"p{i}", title=f"t{i % 2}", split="train") for i in range(5)]
        path = tmp_path / "out.jsonl"
        write_corpus(records, path, meta={"seed": 1})
        assert ingest_corpus(path) == records

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            ingest_corpus(tmp_path / "nope.jsonl")


class TestSplitSentences:
    def test_cjk_and_ascii_endings(self):
        assert split_sentences("甲。乙！丙") == ["甲。", "乙！", "丙"]
        assert split_sentences("a.b;c") == ["a.", "b;", "c"]

    def test_no_punctuation_is_single_sentence(self):
        assert split_sentences("abc") == ["abc"]


def para(pid, text, work="w1"):
    return ParagraphRecord(id=pid, work_id=work, title="題", text=text)


def sentence_text(n_sentences, sentence_len):
    # each sentence ends with a CJK full stop and has exactly sentence_len chars
    return "".join("字" * (sentence_len - 1) + "。" for _ in range(n_sentences))


class TestNormalize:
    def test_short_merges_into_preceding(self):
        records = [para("p1", "字" * 100), para("p2", "短" * 30)]
        out = normalize_paragraphs(records)
        assert len(out) == 1
        assert out[0].id == "p1"
        assert out[0].text == "字" * 100 + "短" * 30
        assert out[0].char_len == 130

    def test_exactly_min_len_unchanged(self):
        records = [para("p1", "字" * 100), para("p2", "边" * 50)]
        out = normalize_paragraphs(records)
        assert [r.char_len for r in out] == [100, 50]

    def test_first_paragraph_merges_forward(self):
        records = [para("p1", "短" * 30), para("p2", "字" * 100)]
        out = normalize_paragraphs(records)
        assert len(out) == 1
        assert out[0].text == "短" * 30 + "字" * 100

    def test_single_short_paragraph_kept(self):
        out = normalize_paragraphs([para("p1", "短" * 10)])
        assert len(out) == 1 and out[0].char_len == 10

    def test_long_paragraph_splits_at_sentences(self):
        # 12 sentences of 100 chars -> 1200 chars -> 3 segments of 400, each < 500
        text = sentence_text(12, 100)
        out = normalize_paragraphs([para("p1", text)])
        assert [r.char_len for r in out] == [400, 400, 400]
        assert [r.id for r in out] == ["p1#1", "p1#2", "p1#3"]
        # re-concatenation oracle: content preserved
        assert "".join(r.text for r in out) == text

    def test_unsplittable_sentence_emitted_whole(self, caplog):
        text = "字" * 600  # no sentence boundary at all
        with caplog.at_level("WARNING"):
            out = normalize_paragraphs([para("p1", text)])
        assert len(out) == 1 and out[0].char_len == 600
        assert "emitted whole" in caplog.text

    def test_never_merges_across_works(self):
        records = [para("p1", "字" * 100, work="w1"), para("p2", "短" * 10, work="w2")]
        out = normalize_paragraphs(records)
        assert len(out) == 2

    def test_idempotent_on_resplit_shorts(self):
        # 510 chars with a boundary at 480: splits to 480 + 30; the 30-char tail
        # must not be re-merged (would recreate an over-long paragraph)
        text = "字" * 479 + "。" + "尾" * 30
        once = normalize_paragraphs([para("p1", text)])
        twice = normalize_paragraphs(once)
        assert once == twice
        assert [r.char_len for r in once] == [480, 30]

    @given(
        st.lists(
            st.lists(st.integers(min_value=1, max_value=40), min_size=1, max_size=6),
            min_size=1,
            max_size=4,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_content_preserved_and_idempotent(self, works):
        records = []
        for w, lengths in enumerate(works):
            for k, n_sents in enumerate(lengths):
                records.append(para(f"p{w}-{k}", sentence_text(n_sents, 37), work=f"w{w}"))
        out = normalize_paragraphs(records)
        # per-work concatenation unchanged
        for w in range(len(works)):
            original = "".join(r.text for r in records if r.work_id == f"w{w}")
            normalized = "".join(r.text for r in out if r.work_id == f"w{w}")
            assert normalized == original
        assert normalize_paragraphs(out) == out
        for rec in out:
            assert rec.char_len < 500 or len(split_sentences(rec.text)) == 1


class TestAssignSplits:
    def test_exact_proportions(self):
        records = [make_record(f"p{i}") for i in range(10)]
        out = assign_splits(records, (0.6, 0.2, 0.2), seed=42)
        counts = {s: sum(r.split == s for r in out) for s in ("train", "valid", "test")}
        assert counts == {"train": 6, "valid": 2, "test": 2}

    def test_deterministic(self):
        records = [make_record(f"p{i}") for i in range(23)]
        a = assign_splits(records, seed=7)
        b = assign_splits(records, seed=7)
        assert a == b
        c = assign_splits(records, seed=8)
        assert a != c

    def test_partition(self):
        records = [make_record(f"p{i}") for i in range(17)]
        out = assign_splits(records, seed=3)
        assert len(out) == 17
        assert all(r.split in ("train", "valid", "test") for r in out)
        assert [r.id for r in out] == [r.id for r in records]

    def test_stratified_covers_titles(self):
        records = [make_record(f"p{i}", title=f"t{i % 2}") for i in range(20)]
        out = assign_splits(records, seed=5, stratify_by_title=True)
        for split in ("train", "valid", "test"):
            titles = {r.title for r in out if r.split == split}
            assert titles == {"t0", "t1"}
        # count oracle: each title allocates 6/2/2 of its 10 paragraphs
        for title in ("t0", "t1"):
            counts = [sum(1 for r in out if r.title == title and r.split == s) for s in ("train", "valid", "test")]
            assert counts == [6, 2, 2]

    def test_bad_fractions(self):
        records = [make_record("p0")]
        with pytest.raises(ConfigError):
            assign_splits(records, (0.5, 0.2, 0.2))
        with pytest.raises(ConfigError):
            assign_splits(records, (1.2, -0.1, -0.1))


class TestStats:
    def test_corpus_stats(self):
        records = [
            make_record("a", title="t1", text="xxxx", split="train"),
            make_record("b", title="t1", text="xx", split="valid"),
            make_record("c", title="t2", text="xxxxxx", split="test"),
            make_record("d", title="t2", text="xxxx", split="train"),
        ]
        stats = corpus_stats(records)
        assert stats.n_paragraphs == 4
        assert stats.n_works == 2
        assert stats.mean_char_len == 4.0
        assert stats.split_fractions == (0.5, 0.25, 0.25)
        assert abs(sum(stats.split_fractions) - 1.0) < 1e-9

    def test_requires_splits(self):
        with pytest.raises(DataError, match="no split"):
            corpus_stats([make_record("a")])
