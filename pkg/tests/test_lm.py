import numpy as np
import pytest

from lmtag import tensor as T
from lmtag.data import Sentence, Token, build_vocab, parse_text_corpus
from lmtag.lm import (
    LanguageModel,
    LmConfig,
    LmError,
    extract_embeddings,
    perplexity,
    train_lm,
)
from lmtag.tensor import RngStream
from conftest import finite_diff_check


def toy_corpus():
    return parse_text_corpus("the cat sat\nthe dog ran\na cat ran\n")


@pytest.fixture
def vocab():
    return build_vocab(toy_corpus())


class TestConfig:
    def test_bad_direction(self):
        with pytest.raises(ValueError):
            LmConfig(direction="sideways")

    def test_lstmp_needs_projection(self):
        with pytest.raises(ValueError):
            LmConfig(cell="LSTMP")

    def test_state_dim(self):
        assert LmConfig(hidden=32).state_dim == 32
        assert LmConfig(cell="LSTMP", hidden=32, projection=8).state_dim == 8

    def test_dict_round_trip(self):
        cfg = LmConfig(direction="backward", embed_dim=8, cell="LSTMP",
                       hidden=16, projection=4)
        assert LmConfig.from_dict(cfg.to_dict()) == cfg


class TestForwardPass:
    def test_shapes(self, vocab):
        model = LanguageModel(LmConfig(embed_dim=6, hidden=8), vocab, RngStream(0))
        sent = toy_corpus()[0]
        ids = model.sentence_ids(sent)
        states, logp, targets = model.forward_pass(ids)
        assert len(states) == len(ids) == 3
        assert logp.value.shape == (4, len(vocab))  # 3 tokens + closing sentinel
        assert targets == ids + [vocab.eos_id]

    def test_log_probs_normalized(self, vocab):
        model = LanguageModel(LmConfig(embed_dim=6, hidden=8), vocab, RngStream(0))
        _, logp, _ = model.forward_pass([5, 6, 7])
        sums = np.exp(logp.value).sum(axis=-1)
        assert np.allclose(sums, 1.0, atol=1e-12)

    def test_backward_targets_end_with_bos(self, vocab):
        model = LanguageModel(LmConfig(direction="backward", embed_dim=6, hidden=8),
                              vocab, RngStream(0))
        ids = [5, 6, 7]
        _, _, targets = model.forward_pass(ids)
        assert targets == [7, 6, 5, vocab.bos_id]

    def test_nll_counts_closing_sentinel(self, vocab):
        model = LanguageModel(LmConfig(embed_dim=6, hidden=8), vocab, RngStream(0))
        _, n = model.nll(toy_corpus()[0])
        assert n == 4


class TestBackwardEquivalence:
    def test_backward_is_forward_on_reversed_ids(self, vocab):
        """The backward model's internal scan must be bitwise identical to
        running its own forward machinery on the reversed sequence."""
        model = LanguageModel(LmConfig(direction="backward", embed_dim=6, hidden=8),
                              vocab, RngStream(0))
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(1, 9))
            ids = [int(rng.integers(4, len(vocab))) for _ in range(n)]
            states, logp, _ = model.forward_pass(ids)
            ctx = [vocab.eos_id] + list(reversed(ids))
            ref_states, ref_logp = model.scan_ids(ctx)
            assert np.array_equal(logp.value, ref_logp.value)
            for s, r in zip(states, ref_states[1:]):
                assert np.array_equal(s.value, r.value)

    def test_states_are_index_aligned(self, vocab):
        model = LanguageModel(LmConfig(direction="backward", embed_dim=6, hidden=8),
                              vocab, RngStream(0))
        sent = Sentence([Token(w) for w in ["cat", "dog", "ran"]])
        mat = model.states(sent)
        assert mat.shape == (3, 8)
        # backward state at position k summarizes tokens k..N-1, so changing
        # the first token must not touch the last position's state
        other = Sentence([Token(w) for w in ["the", "dog", "ran"]])
        mat2 = model.states(other)
        assert np.array_equal(mat[2], mat2[2])
        assert not np.array_equal(mat[0], mat2[0])


class TestTraining:
    def test_gradients(self, vocab, np_rng):
        model = LanguageModel(LmConfig(embed_dim=4, hidden=5), vocab, RngStream(1))
        sent = toy_corpus()[0]
        finite_diff_check(lambda: model.nll(sent)[0],
                          list(model.parameters().values()), rng=np_rng)

    def test_memorizes_tiny_corpus(self, vocab):
        sents = toy_corpus()
        model, history = train_lm(LmConfig(embed_dim=8, hidden=16), sents, vocab,
                                  seed=0, epochs=60, learning_rate=1e-2, batch_size=3)
        assert history[-1] < history[0]
        assert perplexity(model, sents) < 2.0

    def test_deterministic(self, vocab):
        sents = toy_corpus()

        def run():
            model, hist = train_lm(LmConfig(embed_dim=4, hidden=5), sents, vocab,
                                   seed=3, epochs=2)
            return hist, {k: v.value.copy() for k, v in model.parameters().items()}

        h1, p1 = run()
        h2, p2 = run()
        assert h1 == h2
        assert all(np.array_equal(p1[k], p2[k]) for k in p1)

    def test_freeze_blocks_gradients(self, vocab):
        model = LanguageModel(LmConfig(embed_dim=4, hidden=5), vocab, RngStream(1))
        model.freeze()
        loss, _ = model.nll(toy_corpus()[0])
        T.backward(loss)
        assert all(p.grad is None for p in model.parameters().values())

    def test_perplexity_empty_corpus(self, vocab):
        model = LanguageModel(LmConfig(embed_dim=4, hidden=5), vocab, RngStream(1))
        with pytest.raises(LmError):
            perplexity(model, [])


class TestExtractEmbeddings:
    def test_concatenation(self, vocab):
        fwd = LanguageModel(LmConfig(embed_dim=4, hidden=5), vocab, RngStream(1))
        bwd = LanguageModel(LmConfig(direction="backward", embed_dim=4, hidden=7),
                            vocab, RngStream(2))
        sent = toy_corpus()[0]
        both = extract_embeddings(fwd, bwd, sent)
        assert both.combined.shape == (3, 12)
        assert np.array_equal(both.combined[:, :5], fwd.states(sent))
        assert np.array_equal(both.combined[:, 5:], bwd.states(sent))
        assert both.dim == 12

    def test_single_direction(self, vocab):
        fwd = LanguageModel(LmConfig(embed_dim=4, hidden=5), vocab, RngStream(1))
        only = extract_embeddings(fwd, None, toy_corpus()[0])
        assert only.combined.shape == (3, 5)
        assert only.backward is None

    def test_no_models_rejected(self, vocab):
        with pytest.raises(LmError):
            extract_embeddings(None, None, toy_corpus()[0])
