"""Corpus ingestion, token normalization, tag schemes and span conversion.

CoNLL column files: whitespace-separated fields, blank line between
sentences, optional ``-DOCSTART-`` document markers (dropped). Unlabeled LM
corpora are plain text, one whitespace-tokenized sentence per line.

Tag schemes: IOB1 (CoNLL-2003 source encoding), BIO and BIOES. IOB1 input
is repaired to BIO first (an I-X not preceded by I-X/B-X of the same type
opens a span), then converted. Ill-formed model output is repaired by
treating each maximal same-type run as one span.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .tensor import RngStream

PAD = "<pad>"
UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"
RESERVED = (PAD, UNK, BOS, EOS)

SCHEMES = ("IOB1", "BIO", "BIOES")


class DataError(ValueError):
    """Malformed corpus input or tag sequence."""


def normalize(raw: str) -> str:
    """Lowercase and replace every decimal digit with '0'."""
    return "".join("0" if ch.isdigit() else ch for ch in raw.lower())


@dataclass
class Token:
    raw: str
    norm: str = ""

    def __post_init__(self):
        if not self.norm:
            self.norm = normalize(self.raw)


@dataclass
class Sentence:
    tokens: list[Token]
    tags: list[str] | None = None

    def __post_init__(self):
        if not self.tokens:
            raise DataError("empty sentence")
        if self.tags is not None and len(self.tags) != len(self.tokens):
            raise DataError(
                f"{len(self.tags)} tags for {len(self.tokens)} tokens"
            )

    def __len__(self):
        return len(self.tokens)

    def words(self) -> list[str]:
        return [t.norm for t in self.tokens]


@dataclass(frozen=True, order=True)
class Span:
    start: int
    end: int  # inclusive
    type: str


def parse_conll(lines, column_count: int = 2, tag_column: int = -1) -> list[Sentence]:
    """Parse CoNLL column data into sentences (token = column 0).

    ``lines`` is any iterable of text lines or a whole string.
    """
    if isinstance(lines, str):
        lines = lines.splitlines()
    sentences: list[Sentence] = []
    tokens: list[Token] = []
    tags: list[str] = []

    def flush():
        if tokens:
            sentences.append(Sentence(list(tokens), list(tags)))
            tokens.clear()
            tags.clear()

    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            flush()
            continue
        fields = line.split()
        if fields[0] == "-DOCSTART-":
            flush()
            continue
        if len(fields) < column_count:
            raise DataError(
                f"line {lineno}: expected >= {column_count} columns, got "
                f"{len(fields)}: {line!r}"
            )
        tokens.append(Token(fields[0]))
        tags.append(fields[tag_column])
    flush()
    return sentences


def parse_text_corpus(lines) -> list[Sentence]:
    """One whitespace-tokenized sentence per line; blank lines skipped."""
    if isinstance(lines, str):
        lines = lines.splitlines()
    sentences = []
    for line in lines:
        words = line.split()
        if words:
            sentences.append(Sentence([Token(w) for w in words]))
    return sentences


# ---------------------------------------------------------------------------
# Tag schemes


@dataclass(frozen=True)
class LabelScheme:
    """A tag inventory over entity/chunk types for one scheme kind."""

    kind: str  # "IOB1" | "BIO" | "BIOES"
    types: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise DataError(f"unknown scheme kind {self.kind!r}")
        object.__setattr__(self, "types", tuple(sorted(self.types)))

    @property
    def tags(self) -> list[str]:
        prefixes = {"IOB1": "BI", "BIO": "BI", "BIOES": "BIES"}[self.kind]
        out = ["O"]
        for t in self.types:
            out.extend(f"{p}-{t}" for p in prefixes)
        return out

    def tag_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tags)}

    def validate(self, tags: list[str]) -> None:
        inventory = set(self.tags)
        for pos, tag in enumerate(tags):
            if tag not in inventory:
                raise DataError(f"tag {tag!r} at position {pos} not in {self.kind} inventory")

    def is_legal_transition(self, prev: str | None, cur: str | None) -> bool:
        """BIOES bigram legality, including START (prev None) / STOP (cur None)."""
        if self.kind != "BIOES":
            raise DataError("transition legality defined for BIOES only")
        if cur is None:  # prev -> STOP
            if prev is None:
                return True
            p, t = _split(prev)
            return p in ("O", "E", "S")
        c, ct = _split(cur)
        if prev is None:  # START -> cur
            return c in ("O", "B", "S")
        p, pt = _split(prev)
        if c in ("O", "B", "S"):
            return p in ("O", "E", "S")
        # cur is I-x or E-x: previous must be B-x or I-x of the same type
        return p in ("B", "I") and pt == ct


def _split(tag: str) -> tuple[str, str]:
    if tag == "O":
        return "O", ""
    prefix, _, typ = tag.partition("-")
    return prefix, typ


def scheme_from_tags(tags_seen, kind: str) -> LabelScheme:
    types = {_split(t)[1] for t in tags_seen if t != "O"}
    return LabelScheme(kind, tuple(types))


def to_spans(tags: list[str], kind: str = "BIOES") -> list[Span]:
    """Decode tags to typed spans; ill-formed sequences are repaired.

    Repair rule: a maximal run of same-type non-O tags becomes one span,
    except that B and S always open a new span (so e.g. [B-X, B-X] is two
    spans while [I-X, E-X] is one).
    """
    if kind not in SCHEMES:
        raise DataError(f"unknown scheme kind {kind!r}")
    spans: list[Span] = []
    start = None
    cur_type = None

    def close(end):
        nonlocal start, cur_type
        if start is not None:
            spans.append(Span(start, end, cur_type))
        start, cur_type = None, None

    for i, tag in enumerate(tags):
        prefix, typ = _split(tag)
        if prefix == "O":
            close(i - 1)
            continue
        opens = prefix in ("B", "S") or start is None or typ != cur_type
        if opens:
            close(i - 1)
            start, cur_type = i, typ
        if kind == "BIOES" and prefix in ("E", "S"):
            close(i)
    close(len(tags) - 1)
    return spans


def from_spans(spans: list[Span], length: int, kind: str = "BIOES") -> list[str]:
    """Encode non-overlapping spans as a tag sequence."""
    tags = ["O"] * length
    occupied = [False] * length
    for s in spans:
        if not (0 <= s.start <= s.end < length):
            raise DataError(f"span {s} out of range for length {length}")
        if any(occupied[s.start : s.end + 1]):
            raise DataError(f"span {s} overlaps another span")
        for i in range(s.start, s.end + 1):
            occupied[i] = True
        if kind == "BIOES":
            if s.start == s.end:
                tags[s.start] = f"S-{s.type}"
            else:
                tags[s.start] = f"B-{s.type}"
                for i in range(s.start + 1, s.end):
                    tags[i] = f"I-{s.type}"
                tags[s.end] = f"E-{s.type}"
        else:  # BIO and IOB1 share the B/I encoding on output
            tags[s.start] = f"B-{s.type}"
            for i in range(s.start + 1, s.end + 1):
                tags[i] = f"I-{s.type}"
    return tags


def _iob1_to_bio(tags: list[str]) -> list[str]:
    """IOB1 repair: leading I-X (no same-type span open) becomes B-X."""
    out = []
    prev_type = None
    for tag in tags:
        prefix, typ = _split(tag)
        if prefix == "I" and typ != prev_type:
            out.append(f"B-{typ}")
        else:
            out.append(tag)
        prev_type = typ if prefix != "O" else None
    return out


def convert_scheme(tags: list[str], src: str, dst: str) -> list[str]:
    """Re-encode a tag sequence between IOB1/BIO/BIOES, preserving spans."""
    for kind in (src, dst):
        if kind not in SCHEMES:
            raise DataError(f"unknown scheme kind {kind!r}")
    for pos, tag in enumerate(tags):
        prefix, _ = _split(tag)
        allowed = {"IOB1": "OBI", "BIO": "OBI", "BIOES": "OBIES"}[src]
        if prefix not in allowed:
            raise DataError(f"tag {tag!r} at position {pos} invalid under {src}")
    work = _iob1_to_bio(tags) if src == "IOB1" else list(tags)
    spans = to_spans(work, "BIO" if src == "IOB1" else src)
    return from_spans(spans, len(tags), dst)


# ---------------------------------------------------------------------------
# Vocabularies


@dataclass
class Vocabulary:
    """Symbol table with reserved pad/unk/bos/eos ids at the front."""

    symbols: list[str] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.symbols:
            self.symbols = list(RESERVED)
        if not self.index:
            self.index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self):
        return len(self.symbols)

    @property
    def pad_id(self):
        return self.index[PAD]

    @property
    def unk_id(self):
        return self.index[UNK]

    @property
    def bos_id(self):
        return self.index[BOS]

    @property
    def eos_id(self):
        return self.index[EOS]

    def add(self, symbol: str) -> int:
        if symbol not in self.index:
            self.index[symbol] = len(self.symbols)
            self.symbols.append(symbol)
        return self.index[symbol]

    def lookup(self, symbol: str) -> int:
        return self.index.get(symbol, self.unk_id)

    def encode(self, symbols) -> list[int]:
        return [self.lookup(s) for s in symbols]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for s in self.symbols:
                f.write(s + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            symbols = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        if symbols[: len(RESERVED)] != list(RESERVED):
            raise DataError(f"vocabulary file {path} missing reserved block")
        return cls(symbols=symbols)


def build_vocab(sentences, min_count: int = 1, chars: bool = False) -> Vocabulary:
    """Count symbols (normalized words, or characters of the raw form) and
    keep those with count >= min_count, ordered count desc then lexicographic."""
    counts: dict[str, int] = {}
    for sent in sentences:
        for tok in sent.tokens:
            syms = list(tok.raw) if chars else [tok.norm]
            for s in syms:
                counts[s] = counts.get(s, 0) + 1
    vocab = Vocabulary()
    for sym in sorted(counts, key=lambda s: (-counts[s], s)):
        if counts[sym] >= min_count:
            vocab.add(sym)
    return vocab


def subsample(sentences: list[Sentence], fraction: float, rng: RngStream) -> list[Sentence]:
    """floor(fraction*N) sentences drawn without replacement, order kept."""
    if not 0.0 < fraction <= 1.0:
        raise DataError(f"fraction {fraction} outside (0, 1]")
    if fraction == 1.0:
        return list(sentences)
    k = int(fraction * len(sentences))
    keep = rng.sample_indices(len(sentences), k)
    return [sentences[i] for i in keep]
