import json
import random

import numpy as np
import pytest

from ccr.backends import AdapterParams, MockBackend, embed_batch
from ccr.errors import DataError
from ccr.scoring import (
    Dictionary,
    Questionnaire,
    QuestionnaireItem,
    ScoreRecord,
    ccr_score,
    ddr_score,
    ddr_score_corpus,
    load_dictionary,
    load_questionnaire,
    load_scores,
    pm_pseudo_ground_truth,
    recommend_quotes,
    score_corpus,
    write_scores,
)
from ccr.wordvec import WordVectorModel

from conftest import brute_force_cosine, make_record


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def model_from(tokens_vectors):
    vocab = {tok: i for i, tok in enumerate(tokens_vectors)}
    vectors = np.asarray(list(tokens_vectors.values()), dtype=np.float64)
    return WordVectorModel(dim=vectors.shape[1], vocab=vocab, vectors=vectors, metadata={"framework": "loaded"})


class TestCcrScore:
    def test_identical_single_item(self):
        e = unit([1.0, 2.0, 3.0])
        assert ccr_score(e, [e]) == pytest.approx(1.0, abs=1e-12)

    def test_mean_of_two_items(self):
        # items at cosine 0.2 and 0.4 from the paragraph
        para = np.array([1.0, 0.0])
        item1 = np.array([0.2, np.sqrt(1 - 0.04)])
        item2 = np.array([0.4, np.sqrt(1 - 0.16)])
        assert ccr_score(para, [item1, item2]) == pytest.approx(0.3, abs=1e-12)

    def test_matches_mean_of_cosines_oracle(self):
        rng = np.random.default_rng(0)
        para = rng.standard_normal(16)
        items = [rng.standard_normal(16) for _ in range(7)]
        oracle = sum(brute_force_cosine(para, it) for it in items) / 7
        assert ccr_score(para, items) == pytest.approx(oracle, abs=1e-9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        para = rng.standard_normal(8)
        items = [rng.standard_normal(8) for _ in range(3)]
        base = ccr_score(para, items)
        assert ccr_score(3.7 * para, items) == pytest.approx(base, abs=1e-9)
        scaled_items = [items[0] * 9.1, items[1], items[2]]
        assert ccr_score(para, scaled_items) == pytest.approx(base, abs=1e-9)

    def test_empty_items(self):
        with pytest.raises(DataError):
            ccr_score(np.ones(4), [])


class TestDdrScore:
    def test_paragraph_of_dictionary_words_scores_one(self):
        model = model_from({"a": [1.0, 0.0], "b": [0.0, 1.0]})
        d = Dictionary(construct="c", words=["a", "b"])
        assert ddr_score(["a", "b"], d, model) == pytest.approx(1.0, abs=1e-12)

    def test_all_oov_paragraph_raises(self):
        model = model_from({"a": [1.0, 0.0]})
        d = Dictionary(construct="c", words=["a"])
        with pytest.raises(DataError, match="no known tokens"):
            ddr_score(["x", "y"], d, model)

    def test_no_dictionary_word_in_vocab(self):
        model = model_from({"a": [1.0, 0.0]})
        d = Dictionary(construct="c", words=["z"])
        with pytest.raises(DataError, match="dictionary words"):
            ddr_score(["a"], d, model)

    def test_matches_centroid_cosine_oracle(self):
        rng = np.random.default_rng(2)
        vocab = {f"t{i}": rng.standard_normal(12) for i in range(30)}
        model = model_from(vocab)
        tokens = [f"t{i}" for i in rng.integers(0, 30, size=10)]
        words = [f"t{i}" for i in range(12, 20)]
        d = Dictionary(construct="c", words=words)
        para_centroid = np.mean([vocab[t] for t in tokens], axis=0)
        dict_centroid = np.mean([vocab[w] for w in words], axis=0)
        assert ddr_score(tokens, d, model) == pytest.approx(
            brute_force_cosine(para_centroid, dict_centroid), abs=1e-9
        )

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        vocab = {f"t{i}": rng.standard_normal(6) for i in range(10)}
        model = model_from(vocab)
        tokens = [f"t{i}" for i in range(6)]
        words = [f"t{i}" for i in range(4, 10)]
        base = ddr_score(tokens, Dictionary("c", words), model)
        shuffled_tokens = list(tokens)
        random.Random(0).shuffle(shuffled_tokens)
        shuffled_words = list(words)
        random.Random(1).shuffle(shuffled_words)
        assert ddr_score(shuffled_tokens, Dictionary("c", shuffled_words), model) == pytest.approx(
            base, abs=1e-12
        )

    def test_oov_tokens_skipped(self):
        model = model_from({"a": [1.0, 0.0], "b": [0.0, 1.0]})
        d = Dictionary(construct="c", words=["a", "b"])
        with_oov = ddr_score(["a", "b", "zzz"], d, model)
        assert with_oov == pytest.approx(ddr_score(["a", "b"], d, model), abs=1e-12)


class TestPmPseudoGroundTruth:
    def test_dictionary_of_title_itself(self):
        model = model_from({"忠": [1.0, 0.5]})
        d = Dictionary(construct="c", words=["忠"])
        assert pm_pseudo_ground_truth("忠", d, model) == pytest.approx(1.0, abs=1e-12)

    def test_mean_of_two_words(self):
        model = model_from({"t": [1.0, 0.0], "w0": [1.0, 0.0], "w1": [0.0, 1.0]})
        d = Dictionary(construct="c", words=["w0", "w1"])
        assert pm_pseudo_ground_truth("t", d, model) == pytest.approx(0.5, abs=1e-12)

    def test_matches_mean_oracle_20_words(self):
        rng = np.random.default_rng(4)
        vocab = {"title": rng.standard_normal(8)}
        vocab.update({f"w{i}": rng.standard_normal(8) for i in range(20)})
        model = model_from(vocab)
        d = Dictionary(construct="c", words=[f"w{i}" for i in range(20)])
        oracle = np.mean([brute_force_cosine(vocab["title"], vocab[f"w{i}"]) for i in range(20)])
        assert pm_pseudo_ground_truth("title", d, model) == pytest.approx(oracle, abs=1e-9)

    def test_unrepresentable_title(self):
        model = model_from({"w": [1.0]})
        with pytest.raises(DataError, match="unrepresentable"):
            pm_pseudo_ground_truth("絕", Dictionary("c", ["w"]), model)


class TestDictionaryDedup:
    def test_duplicates_removed_order_kept(self):
        d = Dictionary(construct="c", words=["b", "a", "b", "c", "a"])
        assert d.words == ["b", "a", "c"]

    def test_dedup_leaves_ddr_unchanged_but_would_change_pm(self):
        model = model_from({"t": [1.0, 0.0], "w0": [1.0, 0.0], "w1": [0.0, 1.0]})
        deduped = Dictionary(construct="c", words=["w0", "w1", "w0"])
        assert deduped.words == ["w0", "w1"]
        # with the duplicate left in, the pm mean would be (1 + 0 + 1)/3, not 0.5
        title_vec = np.array([1.0, 0.0])
        biased = np.mean([1.0, 0.0, 1.0])
        assert biased != pytest.approx(0.5)
        assert pm_pseudo_ground_truth("t", deduped, model) == pytest.approx(0.5, abs=1e-12)


class TestRecommendQuotes:
    def test_verbatim_match_ranks_first(self, mock_backend):
        corpus = [
            {"id": "q1", "text": "some unrelated quote"},
            {"id": "q2", "text": "the item text itself"},
            {"id": "q3", "text": "another distractor line"},
        ]
        ranked = recommend_quotes("the item text itself", corpus, mock_backend, k=3)
        assert ranked[0][0] == "q2"
        assert ranked[0][1] == pytest.approx(1.0, abs=1e-9)

    def test_k_clamped_to_corpus_size(self, mock_backend):
        corpus = [{"id": f"q{i}", "text": f"quote {i}"} for i in range(4)]
        assert len(recommend_quotes("item", corpus, mock_backend, k=10)) == 4

    def test_matches_exhaustive_scan_oracle(self, mock_backend):
        corpus = [{"id": f"q{i:02d}", "text": f"quote tokens {i} shared"} for i in range(20)]
        corpus.append({"id": "q99", "text": "item words nearly duplicate"})
        item = "item words nearly duplicate extra"
        ranked = recommend_quotes(item, corpus, mock_backend, k=21)
        item_vec = embed_batch(mock_backend, [item])[0]
        scores = {}
        for q in corpus:
            scores[q["id"]] = brute_force_cosine(item_vec, embed_batch(mock_backend, [q["text"]])[0])
        oracle = sorted(scores.items(), key=lambda kv: (-round(kv[1], 9), kv[0]))
        assert [qid for qid, _ in ranked] == [qid for qid, _ in oracle]
        assert ranked[0][0] == "q99"

    def test_sorted_non_increasing(self, mock_backend):
        corpus = [{"id": f"q{i}", "text": f"text {i}"} for i in range(10)]
        ranked = recommend_quotes("probe text", corpus, mock_backend, k=10)
        sims = [s for _, s in ranked]
        assert sims == sorted(sims, reverse=True)

    def test_empty_corpus(self, mock_backend):
        with pytest.raises(DataError):
            recommend_quotes("item", [], mock_backend, k=5)


class TestScoreCorpus:
    def make_questionnaire(self, texts):
        return Questionnaire(
            construct="collectivism",
            language="lzh",
            items=[QuestionnaireItem(id=f"i{k}", text=t) for k, t in enumerate(texts)],
        )

    def test_identical_paragraph_and_item(self, mock_backend):
        records = [make_record("p0", text="exact same text")]
        q = self.make_questionnaire(["exact same text"])
        scores = score_corpus(records, q, mock_backend)
        assert scores[0].score == pytest.approx(1.0, abs=1e-9)
        assert scores[0].method == "ccr"
        assert scores[0].construct == "collectivism"

    def test_output_length_and_order(self, mock_backend):
        records = [make_record(f"p{i}", text=f"text {i}") for i in range(9)]
        q = self.make_questionnaire(["item a", "item b"])
        scores = score_corpus(records, q, mock_backend)
        assert [s.paragraph_id for s in scores] == [r.id for r in records]

    def test_batch_equals_per_paragraph_calls(self, mock_backend):
        records = [make_record(f"p{i}", text=f"text {i} tok") for i in range(6)]
        q = self.make_questionnaire(["item one", "item two", "item three"])
        batch = score_corpus(records, q, mock_backend)
        item_embs = embed_batch(mock_backend, [i.text for i in q.items])
        for rec, got in zip(records, batch):
            para = embed_batch(mock_backend, [rec.text])[0]
            assert got.score == pytest.approx(ccr_score(para, item_embs), abs=1e-12)

    def test_adapter_applied_to_both_sides(self, mock_backend):
        rng = np.random.default_rng(5)
        adapter = AdapterParams(W=rng.standard_normal((64, 64)), b=np.zeros(64))
        records = [make_record("p0", text="paragraph text")]
        q = self.make_questionnaire(["item text"])
        raw = score_corpus(records, q, mock_backend)[0].score
        adapted = score_corpus(records, q, mock_backend, adapter)[0].score
        assert raw != pytest.approx(adapted)


class TestDdrScoreCorpus:
    def test_scores_every_record(self):
        model = model_from({"a": [1.0, 0.1], "b": [0.2, 1.0], "c": [0.5, 0.5]})
        records = [make_record("p0", text="a b"), make_record("p1", text="b c")]
        scores = ddr_score_corpus(records, Dictionary("c", ["a", "c"]), model)
        assert [s.paragraph_id for s in scores] == ["p0", "p1"]
        assert all(s.method == "ddr" for s in scores)


class TestIO:
    def test_questionnaire_json(self, tmp_path):
        payload = {
            "construct": "traditionalism",
            "language": "lzh",
            "items": [
                {"id": "i1", "text": "古之道不可易"},
                {"id": "i2", "text": "先王之法", "source_item": "Old ways are best"},
            ],
        }
        path = tmp_path / "q.json"
        path.write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")
        q = load_questionnaire(path)
        assert q.construct == "traditionalism"
        assert len(q.items) == 2
        assert q.items[1].source_item == "Old ways are best"

    def test_duplicate_item_ids_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            Questionnaire(
                construct="c", language="", items=[
                    QuestionnaireItem("i1", "a"), QuestionnaireItem("i1", "b"),
                ],
            )

    def test_dictionary_json(self, tmp_path):
        path = tmp_path / "d.json"
        path.write_text(json.dumps({"construct": "authority", "words": ["君", "臣", "君"]}))
        d = load_dictionary(path)
        assert d.words == ["君", "臣"]

    def test_scores_round_trip(self, tmp_path):
        scores = [ScoreRecord("p0", "c", "ccr", 0.25), ScoreRecord("p1", "c", "ccr", -0.5)]
        path = tmp_path / "s.jsonl"
        write_scores(scores, path, meta={"seed": 0})
        assert load_scores(path) == scores
