"""Neural building blocks for the tagger and language models.

Cell equations (one canonical formulation per kind):

GRU (gates r, z; candidate c):
    r = sigmoid(W_r x + U_r h + b_r)
    z = sigmoid(W_z x + U_z h + b_z)
    c = tanh(W_c x + U_c (r * h) + b_c)
    h' = (1 - z) * h + z * c

LSTM (gates i, f, o; candidate g):
    i, f, o = sigmoid(W x + U h + b)      g = tanh(...)
    c' = f * c + i * g
    h' = o * tanh(c')

LSTMP is an LSTM whose hidden output passes through a linear projection
h_p = h' P; the projection both feeds the recurrence and is the output.

Weight matrices are initialized uniform(+-sqrt(6/(fan_in+fan_out))), biases
zero except the LSTM forget gate bias which starts at +1.0.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .data import Vocabulary
from .tensor import Node, RngStream, ShapeError


def glorot(rng: RngStream, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape or (fan_in, fan_out))


class Module:
    """Anything with named parameters."""

    def parameters(self) -> dict[str, Node]:
        raise NotImplementedError

    def param_count(self) -> int:
        return sum(p.value.size for p in self.parameters().values())


class EmbeddingTable(Module):
    def __init__(self, table: np.ndarray, name: str, trainable: bool = True):
        self.trainable = trainable
        if trainable:
            self.table = T.parameter(table, name)
        else:
            self.table = T.constant(table, name)
        self.name = name

    @classmethod
    def random(cls, rng: RngStream, vocab_size: int, dim: int, name: str,
               trainable: bool = True) -> "EmbeddingTable":
        return cls(glorot(rng, vocab_size, dim), name, trainable)

    @property
    def dim(self) -> int:
        return self.table.value.shape[1]

    def lookup(self, ids) -> Node:
        return T.embedding_lookup(self.table, ids)

    def parameters(self) -> dict[str, Node]:
        return {self.name: self.table} if self.trainable else {}


class Dense(Module):
    def __init__(self, rng: RngStream, in_dim: int, out_dim: int, name: str):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.name = name
        self.W = T.parameter(glorot(rng, in_dim, out_dim), f"{name}.W")
        self.b = T.parameter(np.zeros(out_dim), f"{name}.b")

    def __call__(self, x: Node) -> Node:
        return T.add(T.matmul(x, self.W), self.b)

    def parameters(self) -> dict[str, Node]:
        return {p.name: p for p in (self.W, self.b)}


# ---------------------------------------------------------------------------
# Recurrent cells


class RecurrentCell(Module):
    """Common interface: input_proj over a whole sequence, then per-step scan."""

    kind: str
    input_dim: int
    output_dim: int

    def initial_state(self):
        raise NotImplementedError

    def input_proj(self, xs: Node) -> Node:
        """Project [N, input_dim] inputs through the input weights at once."""
        raise NotImplementedError

    def step_from_proj(self, px: Node, state):
        """One scan step; returns (new_state, output)."""
        raise NotImplementedError

    def step(self, x: Node, state):
        if x.value.shape != (self.input_dim,):
            raise ShapeError(
                f"{self.kind} step: expected input ({self.input_dim},), got {x.value.shape}"
            )
        proj = self.input_proj(T.reshape(x, (1, self.input_dim)))
        return self.step_from_proj(T.reshape(proj, (-1,)), state)

    def scan(self, xs: Node, reverse: bool = False) -> list[Node]:
        """Run over a [N, input_dim] sequence; returns per-position outputs."""
        n = xs.value.shape[0]
        proj = self.input_proj(xs)
        state = self.initial_state()
        outputs: list[Node] = [None] * n
        positions = range(n - 1, -1, -1) if reverse else range(n)
        for k in positions:
            row = T.reshape(T.narrow(proj, 0, k, 1), (-1,))
            state, out = self.step_from_proj(row, state)
            outputs[k] = out
        return outputs

    def final_state_output(self, xs: Node, reverse: bool = False) -> Node:
        outs = self.scan(xs, reverse=reverse)
        return outs[0] if reverse else outs[-1]


class GRUCell(RecurrentCell):
    kind = "GRU"

    def __init__(self, rng: RngStream, input_dim: int, hidden_dim: int, name: str):
        d, h = input_dim, hidden_dim
        self.input_dim, self.hidden_dim = d, h
        self.output_dim = h
        self.name = name
        self.Wx = T.parameter(glorot(rng, d, 3 * h, (d, 3 * h)), f"{name}.Wx")
        self.b = T.parameter(np.zeros(3 * h), f"{name}.b")
        self.Urz = T.parameter(glorot(rng, h, 2 * h, (h, 2 * h)), f"{name}.Urz")
        self.Uc = T.parameter(glorot(rng, h, h), f"{name}.Uc")

    def parameters(self) -> dict[str, Node]:
        return {p.name: p for p in (self.Wx, self.b, self.Urz, self.Uc)}

    @staticmethod
    def count(d: int, h: int) -> int:
        return 3 * (d * h + h * h + h)

    def initial_state(self):
        return T.constant(np.zeros(self.hidden_dim))

    def input_proj(self, xs: Node) -> Node:
        return T.add(T.matmul(xs, self.Wx), self.b)

    def step_from_proj(self, px: Node, h):
        hd = self.hidden_dim
        rz = T.sigmoid(T.add(T.narrow(px, 0, 0, 2 * hd), T.matmul(h, self.Urz)))
        r = T.narrow(rz, 0, 0, hd)
        z = T.narrow(rz, 0, hd, hd)
        c = T.tanh(T.add(T.narrow(px, 0, 2 * hd, hd), T.matmul(T.mul(r, h), self.Uc)))
        h_new = T.add(h, T.mul(z, T.sub(c, h)))  # (1-z)h + zc
        return h_new, h_new


class LSTMCell(RecurrentCell):
    kind = "LSTM"

    def __init__(self, rng: RngStream, input_dim: int, hidden_dim: int, name: str):
        d, h = input_dim, hidden_dim
        self.input_dim, self.hidden_dim = d, h
        self.output_dim = h
        self.name = name
        self.Wx = T.parameter(glorot(rng, d, 4 * h, (d, 4 * h)), f"{name}.Wx")
        self.U = T.parameter(glorot(rng, h, 4 * h, (h, 4 * h)), f"{name}.U")
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0  # forget gate bias
        self.b = T.parameter(b, f"{name}.b")

    def parameters(self) -> dict[str, Node]:
        return {p.name: p for p in (self.Wx, self.U, self.b)}

    @staticmethod
    def count(d: int, h: int) -> int:
        return 4 * (d * h + h * h + h)

    def initial_state(self):
        z = np.zeros(self.hidden_dim)
        return (T.constant(z), T.constant(z.copy()))

    def input_proj(self, xs: Node) -> Node:
        return T.add(T.matmul(xs, self.Wx), self.b)

    def _gates(self, px: Node, h_prev: Node, c_prev: Node, U: Node, hd: int):
        gates = T.add(px, T.matmul(h_prev, U))
        i = T.sigmoid(T.narrow(gates, 0, 0, hd))
        f = T.sigmoid(T.narrow(gates, 0, hd, hd))
        o = T.sigmoid(T.narrow(gates, 0, 2 * hd, hd))
        g = T.tanh(T.narrow(gates, 0, 3 * hd, hd))
        c_new = T.add(T.mul(f, c_prev), T.mul(i, g))
        h_new = T.mul(o, T.tanh(c_new))
        return h_new, c_new

    def step_from_proj(self, px: Node, state):
        h_prev, c_prev = state
        h_new, c_new = self._gates(px, h_prev, c_prev, self.U, self.hidden_dim)
        return (h_new, c_new), h_new


class LSTMPCell(LSTMCell):
    """LSTM with a linear output projection that also feeds the recurrence."""

    kind = "LSTMP"

    def __init__(self, rng: RngStream, input_dim: int, hidden_dim: int,
                 projection_dim: int, name: str):
        d, h, p = input_dim, hidden_dim, projection_dim
        self.input_dim, self.hidden_dim, self.projection_dim = d, h, p
        self.output_dim = p
        self.name = name
        self.Wx = T.parameter(glorot(rng, d, 4 * h, (d, 4 * h)), f"{name}.Wx")
        self.U = T.parameter(glorot(rng, p, 4 * h, (p, 4 * h)), f"{name}.U")
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        self.b = T.parameter(b, f"{name}.b")
        self.P = T.parameter(glorot(rng, h, p), f"{name}.P")

    def parameters(self) -> dict[str, Node]:
        return {p.name: p for p in (self.Wx, self.U, self.b, self.P)}

    @staticmethod
    def count(d: int, h: int, p: int) -> int:
        return 4 * (d * h + p * h + h) + h * p

    def initial_state(self):
        return (T.constant(np.zeros(self.projection_dim)),
                T.constant(np.zeros(self.hidden_dim)))

    def step_from_proj(self, px: Node, state):
        hp_prev, c_prev = state
        h_new, c_new = self._gates(px, hp_prev, c_prev, self.U, self.hidden_dim)
        hp = T.matmul(h_new, self.P)
        return (hp, c_new), hp


def make_cell(rng: RngStream, kind: str, input_dim: int, hidden_dim: int,
              name: str, projection_dim: int | None = None) -> RecurrentCell:
    kind = kind.upper()
    if kind == "GRU":
        return GRUCell(rng, input_dim, hidden_dim, name)
    if kind == "LSTM":
        return LSTMCell(rng, input_dim, hidden_dim, name)
    if kind == "LSTMP":
        if not projection_dim:
            raise ValueError("LSTMP requires a projection dimension")
        return LSTMPCell(rng, input_dim, hidden_dim, projection_dim, name)
    raise ValueError(f"unknown cell kind {kind!r}")


class BiLayer(Module):
    """Forward and backward cells over a sequence, outputs concatenated.

    Dropout (inverted scaling) is applied to the layer input only, never to
    the recurrent connections.
    """

    def __init__(self, fwd: RecurrentCell, bwd: RecurrentCell, input_keep_prob: float = 1.0):
        if fwd.input_dim != bwd.input_dim:
            raise ShapeError("bi-layer cells disagree on input dim")
        self.fwd, self.bwd = fwd, bwd
        self.input_keep_prob = input_keep_prob
        self.output_dim = fwd.output_dim + bwd.output_dim

    def parameters(self) -> dict[str, Node]:
        return {**self.fwd.parameters(), **self.bwd.parameters()}

    def run(self, xs: Node, rng: RngStream | None = None, train: bool = False) -> Node:
        """[N, d] -> [N, fwd_out + bwd_out]."""
        if train and self.input_keep_prob < 1.0:
            xs = T.dropout(xs, self.input_keep_prob, rng, train)
        f_out = self.fwd.scan(xs)
        b_out = self.bwd.scan(xs, reverse=True)
        rows = [
            T.reshape(T.concat([f, b], axis=0), (1, -1))
            for f, b in zip(f_out, b_out)
        ]
        return T.concat(rows, axis=0)


# ---------------------------------------------------------------------------
# Character encoders


class CharEncoder(Module):
    output_dim: int

    def encode(self, char_ids, rng=None, train=False) -> Node:
        raise NotImplementedError


class CharCNN(CharEncoder):
    """Char embeddings -> width-w convolution -> tanh -> max over time.

    The embedded sequence is zero-padded with (width-1)/2 columns on each
    side, so a 1-char token still yields one window. Width must be odd.
    """

    def __init__(self, rng: RngStream, char_vocab: int, char_dim: int,
                 filters: int, width: int, name: str = "char_cnn",
                 dropout_keep: float = 1.0):
        if width % 2 == 0:
            raise ValueError("char CNN width must be odd")
        self.char_dim, self.filters, self.width = char_dim, filters, width
        self.dropout_keep = dropout_keep
        self.embed = EmbeddingTable.random(rng, char_vocab, char_dim, f"{name}.embed")
        self.W = T.parameter(glorot(rng, width * char_dim, filters), f"{name}.W")
        self.b = T.parameter(np.zeros(filters), f"{name}.b")
        self.output_dim = filters

    def parameters(self) -> dict[str, Node]:
        return {**self.embed.parameters(), self.W.name: self.W, self.b.name: self.b}

    def encode(self, char_ids, rng=None, train=False) -> Node:
        emb = self.embed.lookup(char_ids)
        if train and self.dropout_keep < 1.0:
            emb = T.dropout(emb, self.dropout_keep, rng, train)
        t = len(char_ids)
        pad = (self.width - 1) // 2
        if pad:
            zeros = T.constant(np.zeros((pad, self.char_dim)))
            emb = T.concat([zeros, emb, zeros], axis=0)
        windows = [
            T.reshape(T.narrow(emb, 0, k, self.width), (1, -1)) for k in range(t)
        ]
        stacked = T.concat(windows, axis=0)  # [t, width*char_dim]
        conv = T.tanh(T.add(T.matmul(stacked, self.W), self.b))
        return T.max_over_axis(conv, axis=0)


class CharBiRNN(CharEncoder):
    """Stacked bidirectional GRU over characters; output is the concatenated
    final forward and backward states of the top layer."""

    def __init__(self, rng: RngStream, char_vocab: int, char_dim: int,
                 hidden: int, layers: int = 1, name: str = "char_rnn",
                 dropout_keep: float = 1.0):
        self.hidden = hidden
        self.dropout_keep = dropout_keep
        self.embed = EmbeddingTable.random(rng, char_vocab, char_dim, f"{name}.embed")
        self.layers: list[BiLayer] = []
        in_dim = char_dim
        for i in range(layers):
            fwd = GRUCell(rng, in_dim, hidden, f"{name}.l{i}.fwd")
            bwd = GRUCell(rng, in_dim, hidden, f"{name}.l{i}.bwd")
            self.layers.append(BiLayer(fwd, bwd))
            in_dim = 2 * hidden
        self.output_dim = 2 * hidden

    def parameters(self) -> dict[str, Node]:
        out = dict(self.embed.parameters())
        for layer in self.layers:
            out.update(layer.parameters())
        return out

    def encode(self, char_ids, rng=None, train=False) -> Node:
        x = self.embed.lookup(char_ids)
        if train and self.dropout_keep < 1.0:
            x = T.dropout(x, self.dropout_keep, rng, train)
        for i, layer in enumerate(self.layers):
            last = i == len(self.layers) - 1
            if not last:
                x = layer.run(x)
                continue
            f_final = layer.fwd.final_state_output(x)
            b_final = layer.bwd.final_state_output(x, reverse=True)
            return T.concat([f_final, b_final], axis=0)
        raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# Pre-trained embedding files


def load_embeddings(path, vocab: Vocabulary, rng: RngStream,
                    trainable: bool = True, name: str = "word_embed"):
    """Load 'word v1 ... vd' lines into a table aligned with ``vocab``.

    Words absent from the file get rows drawn uniform(+-sqrt(3/d)).
    Returns (EmbeddingTable, coverage fraction over non-reserved symbols).
    """
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            word, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
            elif len(vals) != dim:
                raise ValueError(
                    f"{path}:{lineno}: expected {dim} values, got {len(vals)}"
                )
            vectors[word] = np.array([float(v) for v in vals])
    if dim is None:
        raise ValueError(f"{path}: empty embedding file")
    bound = math.sqrt(3.0 / dim)
    table = rng.uniform(-bound, bound, (len(vocab), dim))
    hits = 0
    from .data import RESERVED

    n_real = 0
    for i, sym in enumerate(vocab.symbols):
        if sym in RESERVED:
            continue
        n_real += 1
        if sym in vectors:
            table[i] = vectors[sym]
            hits += 1
    coverage = hits / n_real if n_real else 0.0
    return EmbeddingTable(table, name, trainable), coverage
