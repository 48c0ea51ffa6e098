"""Forward and backward recurrent language models.

A forward model predicts each next token from its left context; the
backward model is realized as a forward scan over the reversed token
sequence with outputs re-reversed, so one code path serves both directions.

Sentences are wrapped in <s> ... </s>. The forward model predicts
(t_1 .. t_N, </s>) from contexts starting at <s>; the backward model
predicts (t_N .. t_1, <s>) from contexts starting at </s>. Perplexity is
exp(total NLL / total predicted tokens), counting the closing sentinel.

After pre-training, ``extract_embeddings`` returns the top-layer states
(post-projection for LSTMP) per token position as frozen context features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Sentence, Vocabulary
from .layers import Dense, EmbeddingTable, make_cell
from .tensor import Node, RngStream


class LmError(RuntimeError):
    pass


@dataclass
class LmConfig:
    direction: str = "forward"  # "forward" | "backward"
    embed_dim: int = 16
    cell: str = "LSTM"  # "LSTM" | "LSTMP"
    hidden: int = 32
    projection: int | None = None
    normalize_input: bool = True

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"direction must be forward/backward, got {self.direction!r}")
        if self.cell.upper() == "LSTMP" and not self.projection:
            raise ValueError("LSTMP language model needs a projection dim")

    @property
    def state_dim(self) -> int:
        return self.projection if self.cell.upper() == "LSTMP" else self.hidden

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "embed_dim": self.embed_dim,
            "cell": self.cell,
            "hidden": self.hidden,
            "projection": self.projection,
            "normalize_input": self.normalize_input,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LmConfig":
        return cls(**d)


class LanguageModel:
    """One directional LM: embedding -> recurrent cell -> softmax head."""

    def __init__(self, config: LmConfig, vocab: Vocabulary, rng: RngStream):
        self.config = config
        self.vocab = vocab
        v = len(vocab)
        self.embed = EmbeddingTable.random(rng, v, config.embed_dim, "lm.embed")
        self.cell = make_cell(rng, config.cell, config.embed_dim, config.hidden,
                              "lm.cell", projection_dim=config.projection)
        self.head = Dense(rng, config.state_dim, v, "lm.head")
        self.frozen = False

    def parameters(self) -> dict[str, Node]:
        return {
            **self.embed.parameters(),
            **self.cell.parameters(),
            **self.head.parameters(),
        }

    def freeze(self) -> None:
        """Stop gradient flow into this model permanently."""
        for p in self.parameters().values():
            p.requires_grad = False
        self.frozen = True

    def sentence_ids(self, sentence: Sentence) -> list[int]:
        if self.config.normalize_input:
            words = [t.norm for t in sentence.tokens]
        else:
            words = [t.raw for t in sentence.tokens]
        return self.vocab.encode(words)

    def forward_pass(self, ids: list[int]):
        """Left-to-right pass over token ids (without sentinels).

        Returns (top-layer states at each of the N token positions,
        log-prob rows predicting (t_1 .. t_N, </s>), target id list).
        State k is the state after consuming t_1..t_k.
        """
        if self.config.direction == "backward":
            # Backward LM: scan the reversed sequence and re-reverse outputs.
            rev = list(reversed(ids))
            states, logp = self._scan_direction(rev)
            targets = rev + [self.vocab.bos_id]
            return states, logp, targets
        states, logp = self._scan_direction(ids)
        targets = list(ids) + [self.vocab.eos_id]
        return states, logp, targets

    def scan_ids(self, context_ids: list[int]):
        """Left-to-right scan over explicit context ids (sentinel included).

        Returns (per-position top-layer states, [len, V] log-prob rows where
        row k predicts the id following context_ids[k]).
        """
        emb = self.embed.lookup(context_ids)
        states = self.cell.scan(emb)
        rows = [T.reshape(s, (1, -1)) for s in states]
        logits = self.head(T.concat(rows, axis=0))
        return states, T.log_softmax(logits, axis=-1)

    def _scan_direction(self, ids: list[int]):
        start = self.vocab.eos_id if self.config.direction == "backward" else self.vocab.bos_id
        states, logp = self.scan_ids([start] + list(ids))
        # states[0] is the sentinel-only context; the N token states follow.
        return states[1:], logp

    def nll(self, sentence: Sentence) -> tuple[Node, int]:
        """Summed next-token NLL over the sentence; returns (loss, n_predicted)."""
        ids = self.sentence_ids(sentence)
        _, logp, targets = self.forward_pass(ids)
        picked = T.pick_sum(logp, [(k, t) for k, t in enumerate(targets)])
        return T.scale(picked, -1.0), len(targets)

    def states(self, sentence: Sentence) -> np.ndarray:
        """Top-layer context state per token position, index-aligned with
        the sentence regardless of direction. Frozen numpy output."""
        ids = self.sentence_ids(sentence)
        states, _, _ = self.forward_pass(ids)
        mat = np.stack([s.value for s in states])
        if self.config.direction == "backward":
            mat = mat[::-1]
        return np.ascontiguousarray(mat)


def perplexity(model: LanguageModel, sentences: list[Sentence]) -> float:
    total_nll = 0.0
    total_tokens = 0
    for sent in sentences:
        loss, n = model.nll(sent)
        total_nll += float(loss.value)
        total_tokens += n
    if total_tokens == 0:
        raise LmError("perplexity over an empty corpus")
    return float(np.exp(total_nll / total_tokens))


def train_lm(config: LmConfig, sentences: list[Sentence], vocab: Vocabulary,
             seed: int, epochs: int, learning_rate: float = 1e-3,
             batch_size: int = 16, clip_norm: float = 5.0,
             log=None) -> tuple[LanguageModel, list[float]]:
    """Train one directional LM; returns (model, per-epoch train perplexity).

    Deterministic given the seed: initialization, shuffling and updates all
    derive from one RngStream.
    """
    from .train import AdamState, adam_step

    rng = RngStream(seed)
    model = LanguageModel(config, vocab, rng)
    params = model.parameters()
    adam = AdamState(alpha=learning_rate)
    shuffle_rng = rng.fork(1)
    history: list[float] = []
    for epoch in range(epochs):
        order = shuffle_rng.shuffled(range(len(sentences)))
        epoch_nll = 0.0
        epoch_tokens = 0
        for start in range(0, len(order), batch_size):
            batch = [sentences[i] for i in order[start : start + batch_size]]
            losses = []
            n_pred = 0
            for sent in batch:
                loss, n = model.nll(sent)
                losses.append(loss)
                n_pred += n
            total = losses[0]
            for extra in losses[1:]:
                total = T.add(total, extra)
            mean_loss = T.scale(total, 1.0 / n_pred)
            if not np.isfinite(mean_loss.value):
                raise LmError(f"non-finite LM loss at epoch {epoch}")
            for p in params.values():
                p.zero_grad()
            T.backward(mean_loss)
            T.clip_gradients(params.values(), clip_norm)
            adam_step(adam, params)
            epoch_nll += float(total.value)
            epoch_tokens += n_pred
        ppl = float(np.exp(epoch_nll / max(epoch_tokens, 1)))
        history.append(ppl)
        if log is not None:
            log(f"epoch {epoch + 1} train_ppl {ppl:.4f}")
    return model, history


@dataclass
class LmEmbeddingSet:
    """Frozen per-sentence LM context features."""

    forward: np.ndarray | None = None
    backward: np.ndarray | None = None
    combined: np.ndarray = field(default=None)

    @property
    def dim(self) -> int:
        return self.combined.shape[1]


def extract_embeddings(fwd: LanguageModel | None, bwd: LanguageModel | None,
                       sentence: Sentence) -> LmEmbeddingSet:
    """Concatenated [N, d_f + d_b] top-layer states; either direction may be
    omitted (forward-only / backward-only configurations)."""
    if fwd is None and bwd is None:
        raise LmError("extract_embeddings needs at least one language model")
    f = fwd.states(sentence) if fwd is not None else None
    b = bwd.states(sentence) if bwd is not None else None
    if f is not None and b is not None:
        combined = np.concatenate([f, b], axis=1)
    else:
        combined = (f if f is not None else b).copy()
    return LmEmbeddingSet(forward=f, backward=b, combined=combined)
