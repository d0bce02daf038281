import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from momentalign import autodiff as ad
from momentalign.exceptions import DimensionError, InputError
from momentalign.language import (EMBEDDING_DIM, MAX_WORDS, UNKNOWN_TOKEN, EmbeddingTable,
                                  SentenceEncoding, Vocabulary, embedding_row, lstm_forward,
                                  make_dynamic_filters, split_words, tokenize)


@pytest.fixture
def vocab():
    return Vocabulary(["child", "runs", "the", "dog"])


class TestVocabulary:
    def test_ids_contiguous_with_unknown_first(self, vocab):
        assert vocab.tokens[0] == UNKNOWN_TOKEN
        assert [vocab.id(t) for t in vocab.tokens] == list(range(len(vocab.tokens)))

    def test_tokenize_example(self, vocab):
        assert tokenize("Child runs.", vocab) == [vocab.id("child"), vocab.id("runs")]

    def test_unknown_word(self, vocab):
        assert tokenize("zzzxqq", vocab) == [0]

    def test_truncates_to_max_words(self, vocab):
        assert len(tokenize(" ".join(["dog"] * 20), vocab)) == MAX_WORDS == 15

    def test_empty_query_rejected(self, vocab):
        with pytest.raises(InputError):
            tokenize(" ?! ", vocab)

    def test_split_words(self):
        assert split_words("The Dog, runs!") == ["the", "dog", "runs"]

    def test_save_load_round_trip(self, vocab, tmp_path):
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        assert path.read_text().splitlines()[0] == UNKNOWN_TOKEN
        assert Vocabulary.load(path).tokens == vocab.tokens

    def test_load_rejects_missing_unknown_header(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("dog\ncat\n")
        with pytest.raises(InputError):
            Vocabulary.load(path)


class TestEmbeddings:
    def test_rows_depend_only_on_seed_and_token(self):
        va, vb = Vocabulary(["dog", "cat"]), Vocabulary(["cat", "bird", "dog"])
        a, b = EmbeddingTable(va, seed=3), EmbeddingTable(vb, seed=3)
        assert np.array_equal(a.matrix[va.id("dog")], b.matrix[vb.id("dog")])
        assert np.array_equal(embedding_row("cat", 3), embedding_row("cat", 3))
        assert not np.array_equal(embedding_row("cat", 3), embedding_row("cat", 4))

    def test_range_and_frozen(self):
        table = EmbeddingTable(Vocabulary(["dog"]), seed=0)
        assert table.matrix.shape == (2, EMBEDDING_DIM)
        assert np.abs(table.matrix).max() <= 0.05
        with pytest.raises(ValueError):
            table.matrix[0, 0] = 1.0


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_lstm(embedded, w_ih, w_hh, bias):
    """Loop-over-units reference of the gate equations (order i, f, g, o)."""
    d = w_hh.shape[0]
    h, c = [0.0] * d, [0.0] * d
    out = []
    for x in embedded:
        z = [bias[k] + sum(x[j] * w_ih[j, k] for j in range(len(x)))
             + sum(h[j] * w_hh[j, k] for j in range(d)) for k in range(4 * d)]
        new_c, new_h = [], []
        for u in range(d):
            i, f = _sig(z[u]), _sig(z[d + u])
            g, o = math.tanh(z[2 * d + u]), _sig(z[3 * d + u])
            new_c.append(f * c[u] + i * g)
            new_h.append(o * math.tanh(new_c[-1]))
        h, c = new_h, new_c
        out.append(list(h))
    return np.array(out)


class TestLstm:
    def test_matches_scalar_oracle_two_units(self):
        rng = np.random.default_rng(11)
        e, d, L = 3, 2, 4
        embedded = rng.normal(size=(L, e))
        w_ih, w_hh, bias = rng.normal(size=(e, 4 * d)), rng.normal(size=(d, 4 * d)), rng.normal(size=4 * d)
        enc = lstm_forward(embedded, ad.Tensor(w_ih), ad.Tensor(w_hh), ad.Tensor(bias))
        np.testing.assert_allclose(enc.states.data, scalar_lstm(embedded, w_ih, w_hh, bias),
                                   rtol=0, atol=1e-12)

    def test_zero_parameters_give_zero_states(self):
        enc = lstm_forward(np.ones((3, 4)), ad.Tensor(np.zeros((4, 8))),
                           ad.Tensor(np.zeros((2, 8))), ad.Tensor(np.zeros(8)))
        assert np.all(enc.states.data == 0.0)

    def test_single_word_is_one_step(self):
        rng = np.random.default_rng(2)
        w_ih, w_hh, bias = rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8)
        x = rng.normal(size=(1, 3))
        enc = lstm_forward(x, ad.Tensor(w_ih), ad.Tensor(w_hh), ad.Tensor(bias))
        z = x[0] @ w_ih + bias
        sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
        c = sig(z[:2]) * np.tanh(z[4:6])
        np.testing.assert_allclose(enc.states.data[0], sig(z[6:]) * np.tanh(c), atol=1e-14)

    def test_length_bounds(self):
        args = (ad.Tensor(np.zeros((2, 8))), ad.Tensor(np.zeros((2, 8))), ad.Tensor(np.zeros(8)))
        with pytest.raises(InputError):
            lstm_forward(np.zeros((16, 2)), *args)
        with pytest.raises(DimensionError):
            lstm_forward(np.zeros((3, 5)), *args)


class TestDynamicFilters:
    def test_zero_parameters(self):
        enc = SentenceEncoding(ad.Tensor(np.ones((3, 4))))
        gamma = make_dynamic_filters(enc, ad.Tensor(np.zeros((4, 4))), ad.Tensor(np.zeros(4))).gamma
        assert gamma.shape == (4, 3) and np.all(gamma.data == 0.0)

    def test_constant_bias_gives_identical_columns(self):
        enc = SentenceEncoding(ad.Tensor(np.random.default_rng(0).normal(size=(3, 4))))
        gamma = make_dynamic_filters(enc, ad.Tensor(np.zeros((4, 4))), ad.Tensor(np.full(4, 0.3))).gamma.data
        assert np.all(gamma == np.tanh(0.3))

    def test_hand_evaluated_two_dim(self):
        f = np.array([[0.5, -1.0]])
        w = np.array([[1.0, 2.0], [-0.5, 0.25]])
        b = np.array([0.1, -0.2])
        gamma = make_dynamic_filters(SentenceEncoding(ad.Tensor(f)), ad.Tensor(w), ad.Tensor(b)).gamma.data
        expected = [math.tanh(1.0 * 0.5 + 2.0 * -1.0 + 0.1), math.tanh(-0.5 * 0.5 + 0.25 * -1.0 - 0.2)]
        np.testing.assert_allclose(gamma[:, 0], expected, atol=1e-15)

    def test_column_locality(self):
        rng = np.random.default_rng(5)
        states = rng.normal(size=(4, 6))
        w, b = ad.Tensor(rng.normal(size=(6, 6))), ad.Tensor(rng.normal(size=6))
        base = make_dynamic_filters(SentenceEncoding(ad.Tensor(states)), w, b).gamma.data
        for i in range(4):
            moved = states.copy()
            moved[i] += rng.normal(size=6)
            gamma = make_dynamic_filters(SentenceEncoding(ad.Tensor(moved)), w, b).gamma.data
            changed = np.any(gamma != base, axis=0)
            assert changed.tolist() == [j == i for j in range(4)]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 100.0))
    def test_range_open_interval(self, seed, scale):
        rng = np.random.default_rng(seed)
        enc = SentenceEncoding(ad.Tensor(rng.normal(size=(3, 5))))
        gamma = make_dynamic_filters(enc, ad.Tensor(scale * rng.normal(size=(5, 5)) * 1e-3),
                                     ad.Tensor(rng.normal(size=5))).gamma.data
        assert np.all(np.abs(gamma) < 1)
