"""Tagger assembly: token representation -> stacked bi-RNN -> CRF head,
with configurable injection of frozen LM context embeddings.

Insertion modes:
    none          baseline tagger, no LM features
    input_first   LM features concatenated into the first layer's input
    output_first  concatenated between the first and second RNN layers
    output_second concatenated after the second layer, before the CRF head
    lm_only       no task RNN at all: dense(LM features) -> CRF

Derived wiring dimensions (H1/H2 the two layer hidden sizes, d_LM the LM
feature width):
    input_first:   layer-1 input  = char_out + word_dim + d_LM
    output_first:  layer-2 input  = 2*H1 + d_LM
    output_second: CRF head input = 2*H2 + d_LM

The character encoder reads the raw token characters by default (keeps the
capitalization signal); word lookup always uses the normalized form.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, asdict

import numpy as np

from . import crf, tensor as T
from .data import LabelScheme, Sentence, Vocabulary
from .layers import (
    BiLayer,
    CharBiRNN,
    CharCNN,
    Dense,
    EmbeddingTable,
    GRUCell,
    LSTMCell,
    make_cell,
)
from .tensor import Node, RngStream

INSERTION_MODES = ("none", "input_first", "output_first", "output_second", "lm_only")


class TaggerError(ValueError):
    pass


@dataclass
class CharEncoderConfig:
    kind: str = "CNN"  # "CNN" | "RNN"
    char_dim: int = 16
    filters: int = 16  # CNN
    width: int = 3  # CNN
    hidden: int = 16  # RNN
    layers: int = 1  # RNN: number of stacked bi-layers
    source: str = "raw"  # which character stream the encoder sees

    @property
    def output_dim(self) -> int:
        return self.filters if self.kind == "CNN" else 2 * self.hidden


@dataclass
class TaggerConfig:
    char: CharEncoderConfig = field(default_factory=CharEncoderConfig)
    word_dim: int = 32
    rnn_kind: str = "GRU"  # "GRU" | "LSTM"
    hidden1: int = 32
    hidden2: int = 32
    insertion: str = "none"
    lm_dim: int = 0
    scheme_kind: str = "BIOES"
    types: tuple[str, ...] = ()
    constrain: bool = True
    input_keep_prob: float = 1.0  # per RNN layer input
    char_keep_prob: float = 1.0
    output_keep_prob: float = 1.0

    def __post_init__(self):
        if self.insertion not in INSERTION_MODES:
            raise TaggerError(f"unknown insertion mode {self.insertion!r}")
        if self.insertion == "none" and self.lm_dim:
            raise TaggerError("lm_dim must be 0 when insertion mode is none")
        # lm_dim 0 with an injection mode is the degenerate wiring that
        # reduces to the baseline graph; only lm_only genuinely needs input.
        if self.insertion == "lm_only" and self.lm_dim <= 0:
            raise TaggerError("lm_only needs lm_dim > 0")
        if self.lm_dim < 0:
            raise TaggerError("lm_dim must be >= 0")
        self.types = tuple(self.types)

    @property
    def scheme(self) -> LabelScheme:
        return LabelScheme(self.scheme_kind, self.types)

    @property
    def num_labels(self) -> int:
        return len(self.scheme.tags)

    @property
    def token_dim(self) -> int:
        d = self.char.output_dim + self.word_dim
        if self.insertion == "input_first":
            d += self.lm_dim
        return d

    @property
    def layer2_input_dim(self) -> int:
        d = 2 * self.hidden1
        if self.insertion == "output_first":
            d += self.lm_dim
        return d

    @property
    def head_input_dim(self) -> int:
        if self.insertion == "lm_only":
            return self.lm_dim
        d = 2 * self.hidden2
        if self.insertion == "output_second":
            d += self.lm_dim
        return d

    def to_dict(self) -> dict:
        d = asdict(self)
        d["types"] = list(self.types)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaggerConfig":
        d = dict(d)
        d["char"] = CharEncoderConfig(**d["char"])
        d["types"] = tuple(d["types"])
        return cls(**d)


def _cell_count(kind: str, d: int, h: int) -> int:
    if kind.upper() == "GRU":
        return GRUCell.count(d, h)
    if kind.upper() == "LSTM":
        return LSTMCell.count(d, h)
    raise TaggerError(f"unknown task RNN kind {kind!r}")


def parameter_count(config: TaggerConfig, word_vocab_size: int,
                    char_vocab_size: int) -> int:
    """Closed-form total trainable parameter count for a config."""
    L = config.num_labels
    total = config.head_input_dim * L + L  # CRF emission head
    total += (L + 2) ** 2  # transitions incl. START/STOP
    if config.insertion == "lm_only":
        return total
    c = config.char
    total += char_vocab_size * c.char_dim
    if c.kind == "CNN":
        total += c.width * c.char_dim * c.filters + c.filters
    else:
        d = c.char_dim
        for _ in range(c.layers):
            total += 2 * GRUCell.count(d, c.hidden)
            d = 2 * c.hidden
    total += word_vocab_size * config.word_dim
    total += 2 * _cell_count(config.rnn_kind, config.token_dim, config.hidden1)
    total += 2 * _cell_count(config.rnn_kind, config.layer2_input_dim, config.hidden2)
    return total


def match_parameters(base: TaggerConfig, target_count: int,
                     word_vocab_size: int, char_vocab_size: int) -> TaggerConfig:
    """Raise or lower hidden2 until the count is closest to ``target_count``.

    Integer search over the monotone knob; returns a new config.
    """

    def count_at(h2: int) -> int:
        cfg = copy.deepcopy(base)
        cfg.hidden2 = h2
        return parameter_count(cfg, word_vocab_size, char_vocab_size)

    if count_at(1) > target_count:
        raise TaggerError(f"target count {target_count} below minimum")
    h2 = base.hidden2
    while count_at(h2) < target_count:
        h2 += 1
    while h2 > 1 and count_at(h2) > target_count:
        h2 -= 1
    # h2 now under or at the target; pick the closer of h2 / h2+1
    below, above = count_at(h2), count_at(h2 + 1)
    best_h2 = h2 if abs(below - target_count) <= abs(above - target_count) else h2 + 1
    cfg = copy.deepcopy(base)
    cfg.hidden2 = best_h2
    return cfg


# ---------------------------------------------------------------------------
# Presets


def preset(name: str, types: tuple[str, ...] = ()) -> TaggerConfig:
    """Named hyperparameter sets. The conll* presets are the full-scale task
    configurations; desk-* shrink every width for laptop-scale experiments
    while keeping the shape relationships."""
    if name == "conll2003-ner":
        return TaggerConfig(
            char=CharEncoderConfig(kind="RNN", char_dim=25, hidden=80, layers=2),
            word_dim=50, rnn_kind="GRU", hidden1=300, hidden2=300,
            input_keep_prob=0.75, types=types or ("PER", "LOC", "ORG", "MISC"),
        )
    if name == "conll2000-chunk":
        return TaggerConfig(
            char=CharEncoderConfig(kind="CNN", char_dim=30, filters=30, width=3),
            word_dim=50, rnn_kind="LSTM", hidden1=200, hidden2=200,
            input_keep_prob=0.5, char_keep_prob=0.5, output_keep_prob=0.5,
            types=types or ("NP", "VP", "PP", "ADJP", "ADVP", "SBAR",
                             "PRT", "INTJ", "CONJP", "LST", "UCP"),
        )
    if name == "desk-ner":
        return TaggerConfig(
            char=CharEncoderConfig(kind="RNN", char_dim=8, hidden=8, layers=1),
            word_dim=16, rnn_kind="GRU", hidden1=24, hidden2=24,
            input_keep_prob=0.75, types=types,
        )
    if name == "desk-chunk":
        return TaggerConfig(
            char=CharEncoderConfig(kind="CNN", char_dim=8, filters=8, width=3),
            word_dim=16, rnn_kind="LSTM", hidden1=16, hidden2=16,
            input_keep_prob=0.5, char_keep_prob=0.5, output_keep_prob=0.5,
            types=types,
        )
    raise TaggerError(f"unknown preset {name!r}")


# ---------------------------------------------------------------------------
# Model


class TaggerModel:
    def __init__(self, config: TaggerConfig, word_vocab: Vocabulary,
                 char_vocab: Vocabulary, rng: RngStream,
                 word_table: np.ndarray | None = None):
        self.config = config
        self.word_vocab = word_vocab
        self.char_vocab = char_vocab
        scheme = config.scheme
        self.scheme = scheme
        self.tag_list = scheme.tags
        self.tag_index = scheme.tag_index()
        L = len(self.tag_list)

        self.char_encoder = None
        self.word_embed = None
        self.layer1 = None
        self.layer2 = None
        if config.insertion != "lm_only":
            c = config.char
            if c.kind == "CNN":
                self.char_encoder = CharCNN(
                    rng, len(char_vocab), c.char_dim, c.filters, c.width,
                    dropout_keep=config.char_keep_prob)
            elif c.kind == "RNN":
                self.char_encoder = CharBiRNN(
                    rng, len(char_vocab), c.char_dim, c.hidden, c.layers,
                    dropout_keep=config.char_keep_prob)
            else:
                raise TaggerError(f"unknown char encoder kind {c.kind!r}")
            if word_table is not None:
                self.word_embed = EmbeddingTable(word_table, "word_embed")
            else:
                self.word_embed = EmbeddingTable.random(
                    rng, len(word_vocab), config.word_dim, "word_embed")
            self.layer1 = BiLayer(
                make_cell(rng, config.rnn_kind, config.token_dim, config.hidden1, "rnn1.fwd"),
                make_cell(rng, config.rnn_kind, config.token_dim, config.hidden1, "rnn1.bwd"),
                input_keep_prob=config.input_keep_prob)
            self.layer2 = BiLayer(
                make_cell(rng, config.rnn_kind, config.layer2_input_dim, config.hidden2, "rnn2.fwd"),
                make_cell(rng, config.rnn_kind, config.layer2_input_dim, config.hidden2, "rnn2.bwd"),
                input_keep_prob=config.input_keep_prob)
        self.head = Dense(rng, config.head_input_dim, L, "crf.head")
        self.transitions = T.parameter(np.zeros((L + 2, L + 2)), "crf.transitions")
        self.constraint_mask = crf.build_constraint_mask(scheme) if config.constrain else None

    def parameters(self) -> dict[str, Node]:
        out: dict[str, Node] = {}
        for mod in (self.char_encoder, self.word_embed, self.layer1, self.layer2, self.head):
            if mod is not None:
                out.update(mod.parameters())
        out[self.transitions.name] = self.transitions
        return out

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.parameters().values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.parameters().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters().items():
            p.value[...] = snap[name]

    # -- forward ----------------------------------------------------------

    def _check_lm(self, sentence: Sentence, lm_embeddings):
        if self.config.insertion == "none":
            if lm_embeddings is not None:
                raise TaggerError("LM embeddings supplied but insertion mode is none")
            return None
        if lm_embeddings is None:
            if self.config.lm_dim == 0:
                return T.constant(np.zeros((len(sentence), 0)))
            raise TaggerError(
                f"insertion mode {self.config.insertion!r} requires LM embeddings")
        mat = np.asarray(lm_embeddings, dtype=np.float64)
        if mat.shape != (len(sentence), self.config.lm_dim):
            raise TaggerError(
                f"LM embeddings shape {mat.shape}, expected "
                f"({len(sentence)}, {self.config.lm_dim})")
        return T.constant(mat)

    def forward(self, sentence: Sentence, lm_embeddings=None,
                rng: RngStream | None = None, train: bool = False) -> Node:
        """Per-position tag scores [N, L] for the CRF."""
        cfg = self.config
        lm = self._check_lm(sentence, lm_embeddings)
        if cfg.insertion == "lm_only":
            return self.head(lm)

        word_ids = self.word_vocab.encode(t.norm for t in sentence.tokens)
        words = self.word_embed.lookup(word_ids)
        char_rows = []
        for tok in sentence.tokens:
            text = tok.raw if cfg.char.source == "raw" else tok.norm
            ids = self.char_vocab.encode(text)
            vec = self.char_encoder.encode(ids, rng=rng, train=train)
            char_rows.append(T.reshape(vec, (1, -1)))
        chars = T.concat(char_rows, axis=0)
        x = T.concat([chars, words], axis=1)
        if cfg.insertion == "input_first":
            x = T.concat([x, lm], axis=1)

        h1 = self.layer1.run(x, rng=rng, train=train)
        if cfg.insertion == "output_first":
            h1 = T.concat([h1, lm], axis=1)
        h2 = self.layer2.run(h1, rng=rng, train=train)
        if cfg.insertion == "output_second":
            h2 = T.concat([h2, lm], axis=1)
        if train and cfg.output_keep_prob < 1.0:
            h2 = T.dropout(h2, cfg.output_keep_prob, rng, train)
        return self.head(h2)

    def loss(self, sentence: Sentence, lm_embeddings=None,
             rng: RngStream | None = None, train: bool = True) -> Node:
        """CRF negative log-likelihood of the sentence's gold tags."""
        if sentence.tags is None:
            raise TaggerError("loss needs gold tags")
        emissions = self.forward(sentence, lm_embeddings, rng=rng, train=train)
        gold = [self.tag_index[t] for t in sentence.tags]
        return crf.nll_loss(emissions, self.transitions, gold, self.constraint_mask)

    def predict(self, sentence: Sentence, lm_embeddings=None) -> list[str]:
        """Viterbi-decoded tag strings; scheme-legal when constrained."""
        emissions = self.forward(sentence, lm_embeddings, train=False)
        trans = self.transitions.value
        if self.constraint_mask is not None:
            trans = trans + self.constraint_mask
        path, _ = crf.viterbi(emissions.value, trans)
        return [self.tag_list[i] for i in path]
