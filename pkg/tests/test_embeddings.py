import io
import itertools
import string

import numpy as np
import pytest
from hypothesis import given, strategies as st

from offlang import corpus
from offlang.embeddings import (
    CbowTrainParams,
    FastTextModel,
    NgramConfig,
    build_embedding_matrix,
    extract_ngrams,
    fnv1a_32,
    load_fasttext,
    load_text_embeddings,
    ngram_strings,
    save_fasttext,
    train_cbow,
)
from offlang.gradcheck import check_cbow


def cosine(u, v):
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


class TestNgrams:
    def test_single_char_word(self):
        cfg = NgramConfig()
        assert ngram_strings("a", cfg) == ["<a>"]
        assert len(extract_ngrams("a", cfg)) == 1

    def test_two_char_word(self):
        assert ngram_strings("ab", NgramConfig()) == ["<ab", "ab>", "<ab>"]

    def test_car_enumeration(self):
        # substrings of '<car>' (length 5) for n in 3..5
        assert ngram_strings("car", NgramConfig()) == ["<ca", "car", "ar>", "<car", "car>", "<car>"]
        assert len(extract_ngrams("car", NgramConfig())) == 6

    def test_bucket_ids_are_fnv_mod_buckets(self):
        cfg = NgramConfig(buckets=97)
        expected = [fnv1a_32(g.encode()) % 97 for g in ngram_strings("car", cfg)]
        assert extract_ngrams("car", cfg) == expected

    def test_empty_word_rejected(self):
        with pytest.raises(ValueError):
            extract_ngrams("", NgramConfig())

    @given(st.text(alphabet=string.ascii_lowercase, min_size=1, max_size=12))
    def test_count_formula(self, word):
        cfg = NgramConfig()
        wrapped = len(word) + 2
        expected = sum(
            wrapped - n + 1 for n in range(cfg.n_min, min(cfg.n_max, wrapped) + 1)
        )
        assert len(extract_ngrams(word, cfg)) == expected

    def test_bad_config(self):
        with pytest.raises(ValueError):
            NgramConfig(n_min=4, n_max=3)


class TestWordVector:
    @staticmethod
    def _tiny_model(dim=4, buckets=50):
        cfg = NgramConfig(buckets=buckets)
        return FastTextModel.init(["car", "new"], np.array([2.0, 2.0]), dim, cfg, seed=0)

    def test_mean_of_identical_vectors(self):
        m = self._tiny_model()
        v = np.full(m.dim, 0.25)
        m.word_in[:] = v
        m.bucket_vecs[:] = v
        assert np.allclose(m.word_vector("car"), v)

    def test_mean_formula_in_vocab(self):
        m = self._tiny_model()
        ids = m.constituent_ids("car")
        k = len(ids) - 1
        bucket_sum = m.bucket_vecs[ids[1:] - len(m.tokens)].sum(axis=0)
        expected = (m.word_in[0] + bucket_sum) / (k + 1)
        assert np.allclose(m.word_vector("car"), expected)

    def test_oov_uses_buckets_only(self):
        m = self._tiny_model()
        ids = m.constituent_ids("zzz")
        assert (ids >= len(m.tokens)).all()
        expected = m.bucket_vecs[ids - len(m.tokens)].mean(axis=0)
        assert np.allclose(m.word_vector("zzz"), expected)


class TestTrainCbow:
    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            train_cbow([])

    def test_single_token_documents_leave_model_at_init(self):
        params = CbowTrainParams(seed=4)
        trained = train_cbow([["x"], ["y"], ["x"]], params=params, dim=8)
        fresh = FastTextModel.init(trained.tokens, None, 8, NgramConfig(), seed=4)
        assert np.array_equal(trained.word_in, fresh.word_in)
        assert np.array_equal(trained.bucket_vecs, fresh.bucket_vecs)
        assert np.array_equal(trained.word_out, fresh.word_out)

    def test_bit_reproducible_given_seed(self):
        rng = np.random.default_rng(0)
        sents = [[f"t{i}" for i in rng.integers(0, 12, size=6)] for _ in range(40)]
        a = train_cbow(sents, NgramConfig(buckets=100), CbowTrainParams(epochs=2, seed=7), dim=8)
        b = train_cbow(sents, NgramConfig(buckets=100), CbowTrainParams(epochs=2, seed=7), dim=8)
        assert np.array_equal(a.word_in, b.word_in)
        assert np.array_equal(a.bucket_vecs, b.bucket_vecs)
        assert np.array_equal(a.word_out, b.word_out)

    def test_negative_sampling_gradient_vs_finite_differences(self):
        assert check_cbow(seed=0) <= 1e-4

    def test_topic_clusters_separate(self):
        rng = np.random.default_rng(11)
        a_toks = [f"apple{i}" for i in range(10)]
        b_toks = [f"brick{i}" for i in range(10)]
        sents = []
        for _ in range(250):
            sents.append(list(rng.choice(a_toks, size=8)))
            sents.append(list(rng.choice(b_toks, size=8)))
        m = train_cbow(
            sents,
            NgramConfig(buckets=500),
            CbowTrainParams(epochs=5, subsample=0.0, seed=1),
            dim=16,
        )
        vecs = {t: m.word_vector(t) for t in a_toks + b_toks}
        intra = np.mean(
            [cosine(vecs[x], vecs[y]) for x in a_toks for y in a_toks if x != y]
            + [cosine(vecs[x], vecs[y]) for x in b_toks for y in b_toks if x != y]
        )
        inter = np.mean([cosine(vecs[x], vecs[y]) for x in a_toks for y in b_toks])
        assert intra > inter

    def test_oov_composition_newcar_resembles_car(self):
        # fillers share no characters with 'new'/'car', so subword overlap
        # is what ties the unseen compound to its parts
        rng = np.random.default_rng(5)
        letters = [ch for ch in string.ascii_lowercase if ch not in set("carnew")]
        filler = ["".join(t) for t in itertools.islice(itertools.permutations(letters, 3), 60)]
        sents = []
        for _ in range(400):
            s = list(rng.choice(filler, size=7))
            s[3] = "car" if rng.random() < 0.5 else "new"
            sents.append(s)
        m = train_cbow(
            sents,
            NgramConfig(buckets=5000),
            CbowTrainParams(epochs=5, subsample=0.0, seed=2),
            dim=32,
        )
        assert "newcar" not in m
        nc = m.word_vector("newcar")
        target = cosine(nc, m.word_vector("car"))
        others = sorted(
            cosine(nc, m.word_vector(w)) for w in m.tokens if w not in ("car", "new")
        )
        p95 = others[int(0.95 * len(others))]
        assert target > p95


class TestLoadTextEmbeddings:
    def test_basic_line(self):
        out = load_text_embeddings(io.StringIO("hello 0.1 0.2\n"))
        assert set(out) == {"hello"}
        assert np.allclose(out["hello"], [0.1, 0.2])

    def test_empty_stream(self):
        assert load_text_embeddings(io.StringIO("")) == {}

    def test_arity_error_names_line(self):
        stream = io.StringIO("hello 0.1 0.2\nworld 0.1 0.2 0.3\n")
        with pytest.raises(ValueError, match="line 2"):
            load_text_embeddings(stream)

    def test_non_numeric(self):
        with pytest.raises(ValueError, match="line 1"):
            load_text_embeddings(io.StringIO("hello x y\n"))


class TestEmbeddingMatrix:
    def test_pad_row_zero_and_unk_mean(self):
        vocab = corpus.build_vocab([["a"]])
        matrix = build_embedding_matrix(vocab, {"a": np.array([1.0, 1.0])})
        assert np.array_equal(matrix[0], np.zeros(2))
        assert np.array_equal(matrix[1], np.array([1.0, 1.0]))

    def test_missing_tokens_get_mean(self):
        vocab = corpus.build_vocab([["a", "b"]])
        matrix = build_embedding_matrix(vocab, {"a": np.array([2.0, 4.0])})
        assert np.array_equal(matrix[vocab.index("b")], np.array([2.0, 4.0]))

    def test_empty_map_rejected(self):
        with pytest.raises(ValueError):
            build_embedding_matrix(corpus.build_vocab([["a"]]), {})

    def test_paper_scale_entry_count(self):
        vocab = corpus.Vocabulary(f"tok{i}" for i in range(21_249))
        assert vocab.size == 21_251
        matrix = build_embedding_matrix(vocab, {"tok0": np.zeros(100)})
        assert matrix.size == 2_125_100

    def test_model_source_uses_subwords(self):
        m = FastTextModel.init(["a"], np.array([1.0]), 4, NgramConfig(buckets=20), seed=0)
        vocab = corpus.build_vocab([["a", "zq"]])  # 'zq' is OOV for the model
        matrix = build_embedding_matrix(vocab, m)
        assert np.allclose(matrix[vocab.index("a")], m.word_vector("a"))
        assert np.allclose(matrix[vocab.index("zq")], m.word_vector("zq"))


class TestSaveLoad:
    def test_roundtrip_word_vectors(self, tmp_path):
        sents = [["red", "blue", "red"], ["blue", "red"]]
        m = train_cbow(sents, NgramConfig(buckets=30), CbowTrainParams(epochs=1, seed=0), dim=6)
        path = tmp_path / "ft.txt"
        save_fasttext(m, path)
        header = path.read_text().splitlines()[0]
        assert header == f"{len(m.tokens)} 30 6"
        loaded = load_fasttext(path)
        assert loaded.tokens == m.tokens
        assert np.array_equal(loaded.word_in, m.word_in)
        assert np.array_equal(loaded.bucket_vecs, m.bucket_vecs)
        for w in ("red", "blue", "purple"):
            assert np.allclose(loaded.word_vector(w), m.word_vector(w))

    def test_truncated_file_rejected(self, tmp_path):
        m = FastTextModel.init(["x"], np.array([1.0]), 3, NgramConfig(buckets=5), seed=0)
        path = tmp_path / "ft.txt"
        save_fasttext(m, path)
        lines = path.read_text().splitlines()
        (tmp_path / "bad.txt").write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(ValueError):
            load_fasttext(tmp_path / "bad.txt")
