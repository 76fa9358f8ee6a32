import math
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccr.errors import DataError
from ccr.wordvec import (
    SubwordConfig,
    WordVecTrainConfig,
    WordVectorModel,
    centroid,
    cosine,
    embed_title,
    load_vectors,
    ngram_buckets,
    save_vectors,
    segment_text,
    train_word_vectors,
)


def toy_model(tokens_vectors):
    vocab = {tok: i for i, tok in enumerate(tokens_vectors)}
    vectors = np.asarray(list(tokens_vectors.values()), dtype=np.float64)
    return WordVectorModel(dim=vectors.shape[1], vocab=vocab, vectors=vectors, metadata={"framework": "loaded"})


class TestCosine:
    def test_identical(self):
        assert cosine([1.0, 0.0], [1.0, 0.0]) == 1.0

    def test_orthogonal(self):
        assert cosine([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_hand_computed(self):
        # dot=32, norms sqrt(14)*sqrt(77)=sqrt(1078)
        expected = 32.0 / math.sqrt(1078.0)
        assert cosine([1, 2, 3], [4, 5, 6]) == pytest.approx(0.9746, abs=1e-4)
        assert cosine([1, 2, 3], [4, 5, 6]) == pytest.approx(expected, abs=1e-12)

    def test_errors(self):
        with pytest.raises(DataError):
            cosine([1, 2], [1, 2, 3])
        with pytest.raises(DataError):
            cosine([0, 0], [1, 0])

    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=8), st.floats(0.01, 50))
    @settings(max_examples=100, deadline=None)
    def test_scale_invariance_and_self_similarity(self, vals, scale):
        a = np.asarray(vals)
        if np.linalg.norm(a) < 1e-6:
            return
        assert cosine(a, a) == pytest.approx(1.0, abs=1e-12)
        assert cosine(a, scale * a) == pytest.approx(1.0, abs=1e-9)
        b = a + 1.0
        if np.linalg.norm(b) > 1e-6:
            assert cosine(a, b) == pytest.approx(cosine(b, a), abs=0)


class TestCentroid:
    def test_single_vector_is_itself(self):
        v = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(centroid([v]), v)

    def test_two_vectors(self):
        assert np.array_equal(centroid([np.zeros(2), np.full(2, 2.0)]), np.ones(2))

    def test_matches_per_component_mean_oracle(self):
        rng = np.random.default_rng(0)
        vecs = [rng.standard_normal(300) for _ in range(5)]
        oracle = np.array([np.mean([v[c] for v in vecs]) for c in range(300)])
        assert np.allclose(centroid(vecs), oracle, atol=1e-9)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        vecs = [rng.standard_normal(8) for _ in range(6)]
        shuffled = list(vecs)
        random.Random(3).shuffle(shuffled)
        assert np.allclose(centroid(vecs), centroid(shuffled), atol=1e-12)

    def test_errors(self):
        with pytest.raises(DataError):
            centroid([])
        with pytest.raises(DataError):
            centroid([np.zeros(2), np.zeros(3)])


class TestEmbedTitle:
    def test_single_token_identity(self):
        model = toy_model({"忠": [1.0, 2.0], "孝": [3.0, 4.0]})
        assert np.array_equal(embed_title("忠", model), [1.0, 2.0])

    def test_two_token_mean(self):
        model = toy_model({"忠": [1.0, 2.0], "孝": [3.0, 4.0]})
        assert np.array_equal(embed_title("忠 孝", model), [2.0, 3.0])

    def test_unsegmented_title_falls_back_to_characters(self):
        model = toy_model({"忠": [1.0, 0.0], "孝": [0.0, 1.0]})
        assert np.allclose(embed_title("忠孝", model), [0.5, 0.5])

    def test_fully_oov_raises(self):
        model = toy_model({"忠": [1.0, 0.0]})
        with pytest.raises(DataError, match="unrepresentable"):
            embed_title("悌", model)

    def test_oov_skipped_when_partner_known(self):
        model = toy_model({"忠": [1.0, 2.0]})
        assert np.array_equal(embed_title("忠 悌", model), [1.0, 2.0])


class TestVectorIO:
    def test_small_file(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("2 3\nalpha 1 2 3\nbeta 4 5 6\n")
        model = load_vectors(path)
        assert model.dim == 3
        assert list(model.vocab) == ["alpha", "beta"]
        assert np.array_equal(model.vector("beta"), [4.0, 5.0, 6.0])
        assert model.metadata["framework"] == "loaded"

    def test_component_count_mismatch_names_line(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("2 3\nalpha 1 2 3\nbeta 4 5\n")
        with pytest.raises(DataError, match=":3"):
            load_vectors(path)

    def test_duplicate_token(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("2 2\na 1 2\na 3 4\n")
        with pytest.raises(DataError, match="duplicate"):
            load_vectors(path)

    def test_non_numeric_component(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("1 2\na 1 oops\n")
        with pytest.raises(DataError, match="non-numeric"):
            load_vectors(path)

    def test_header_count_mismatch(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("3 2\na 1 2\nb 3 4\n")
        with pytest.raises(DataError, match="header says 3"):
            load_vectors(path)

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        model = toy_model({f"tok{i}": rng.standard_normal(16) for i in range(7)})
        path = tmp_path / "v.txt"
        save_vectors(model, path)
        loaded = load_vectors(path)
        assert list(loaded.vocab) == list(model.vocab)
        assert np.max(np.abs(loaded.vectors - model.vectors)) < 1e-6


def shared_context_corpus(n_sentences=10_000, seed=0):
    """Tokens A and B always appear in identical contexts; C never shares them."""
    rng = random.Random(seed)
    sentences = []
    for _ in range(n_sentences):
        if rng.random() < 0.7:
            word = rng.choice(["A", "B"])
            ctx = rng.choice(["k1", "k2", "k3", "k4"])
            sentences.append([ctx, word, ctx])
        else:
            ctx = rng.choice(["m1", "m2", "m3", "m4"])
            sentences.append([ctx, "C", ctx])
    return sentences


class TestTraining:
    def test_defaults_match_reference_setup(self):
        cfg = WordVecTrainConfig()
        assert (cfg.dim, cfg.epochs, cfg.window, cfg.negative) == (300, 5, 5, 5)
        assert cfg.min_count == 10

    def test_min_count_truncation(self):
        sentences = [["common", "rare"]] * 9 + [["common"]] * 20
        counts = Counter(t for s in sentences for t in s)
        assert counts["rare"] == 9
        cfg = WordVecTrainConfig(dim=8, epochs=1, window=2, min_count=10, seed=1)
        model = train_word_vectors(sentences, cfg)
        assert "rare" not in model.vocab
        assert "common" in model.vocab
        # every kept token really occurs >= min_count times
        assert all(counts[tok] >= 10 for tok in model.vocab)

    def test_empty_corpus(self):
        with pytest.raises(DataError, match="empty"):
            train_word_vectors([], WordVecTrainConfig(dim=4, epochs=1))

    def test_vocab_empty_after_truncation(self):
        with pytest.raises(DataError, match="truncation"):
            train_word_vectors([["a", "b"]], WordVecTrainConfig(dim=4, epochs=1, min_count=10))

    def test_deterministic_given_seed(self):
        sentences = shared_context_corpus(300, seed=2)
        cfg = WordVecTrainConfig(dim=12, epochs=2, window=2, min_count=1, seed=9)
        m1 = train_word_vectors(sentences, cfg)
        m2 = train_word_vectors(sentences, cfg)
        assert np.array_equal(m1.vectors, m2.vectors)

    def test_shared_contexts_align_skipgram(self):
        sentences = shared_context_corpus(10_000, seed=3)
        cfg = WordVecTrainConfig(
            architecture="skipgram", dim=24, epochs=2, window=1, negative=5, min_count=1, seed=4
        )
        model = train_word_vectors(sentences, cfg)
        ab = cosine(model.vector("A"), model.vector("B"))
        ac = cosine(model.vector("A"), model.vector("C"))
        assert ab > ac

    def test_shared_contexts_align_cbow(self):
        sentences = shared_context_corpus(4_000, seed=5)
        cfg = WordVecTrainConfig(
            architecture="cbow", dim=24, epochs=2, window=1, negative=5, min_count=1, seed=6
        )
        model = train_word_vectors(sentences, cfg)
        ab = cosine(model.vector("A"), model.vector("B"))
        ac = cosine(model.vector("A"), model.vector("C"))
        assert ab > ac

    def test_accepts_raw_strings(self):
        model = train_word_vectors(
            ["a b a b", "a b a"], WordVecTrainConfig(dim=4, epochs=1, window=1, min_count=1, seed=0)
        )
        assert set(model.vocab) == {"a", "b"}


class TestSubword:
    def test_ngram_buckets_cover_lengths(self):
        cfg = SubwordConfig(min_n=1, max_n=2, bucket_count=50)
        # "abc" -> a, b, c, ab, bc
        assert len(ngram_buckets("abc", cfg)) == 5
        assert all(0 <= b < 50 for b in ngram_buckets("abc", cfg))

    def test_oov_composition(self):
        sentences = [["ab", "cd"], ["ab", "ef"], ["cd", "ef"]] * 30
        cfg = WordVecTrainConfig(
            dim=8, epochs=2, window=1, min_count=1, seed=7,
            subword=SubwordConfig(min_n=1, max_n=2, bucket_count=64),
        )
        model = train_word_vectors(sentences, cfg)
        vec = model.vector("ac")  # OOV, composed from n-grams of "ac"
        assert vec.shape == (8,)
        buckets = ngram_buckets("ac", SubwordConfig(1, 2, 64))
        oracle = model.ngram_vectors[buckets].mean(axis=0)
        assert np.allclose(vec, oracle, atol=1e-12)

    def test_in_vocab_vector_is_mean_of_word_and_ngrams(self):
        sentences = [["xy", "zq"]] * 40
        sw = SubwordConfig(min_n=1, max_n=2, bucket_count=32)
        cfg = WordVecTrainConfig(dim=6, epochs=1, window=1, min_count=1, seed=8, subword=sw)
        model = train_word_vectors(sentences, cfg)
        assert model.subword == sw
        assert model.vector("xy").shape == (6,)


class TestSegmentText:
    def test_whitespace_split(self):
        assert segment_text("a b c") == ["a", "b", "c"]

    def test_character_fallback_for_unknown_tokens(self):
        model = toy_model({"甲": [1.0], "乙": [2.0]})
        assert segment_text("甲乙", model) == ["甲", "乙"]

    def test_known_multichar_token_kept(self):
        model = toy_model({"甲乙": [1.0]})
        assert segment_text("甲乙", model) == ["甲乙"]
