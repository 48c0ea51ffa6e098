import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmtag.data import (
    DataError,
    LabelScheme,
    Sentence,
    Span,
    Token,
    Vocabulary,
    build_vocab,
    convert_scheme,
    from_spans,
    normalize,
    parse_conll,
    parse_text_corpus,
    subsample,
    to_spans,
)
from lmtag.tensor import RngStream


class TestNormalize:
    def test_lowercase_and_digits(self):
        assert normalize("Sept. 27, 1991") == "sept. 00, 0000"

    def test_idempotent(self):
        s = "U.N. 123 ABCdef"
        assert normalize(normalize(s)) == normalize(s)

    @given(st.text(max_size=40))
    @settings(max_examples=100, deadline=None)
    def test_idempotent_property(self, s):
        once = normalize(s)
        assert normalize(once) == once


class TestParsing:
    CONLL = """\
-DOCSTART- -X- O O

U.N. NNP I-NP I-ORG
official NN I-NP O

Ekeus NNP I-NP I-PER
heads VBZ I-VP O
"""

    def test_parse_conll(self):
        sents = parse_conll(self.CONLL, column_count=4)
        assert len(sents) == 2
        assert [t.raw for t in sents[0].tokens] == ["U.N.", "official"]
        assert sents[0].tags == ["I-ORG", "O"]
        assert sents[0].tokens[0].norm == "u.n."

    def test_docstart_dropped(self):
        sents = parse_conll(self.CONLL, column_count=4)
        assert all(t.raw != "-DOCSTART-" for s in sents for t in s.tokens)

    def test_ragged_line_reports_lineno(self):
        with pytest.raises(DataError, match="line 2"):
            parse_conll("a B-X\nb\n", column_count=2)

    def test_tag_column(self):
        sents = parse_conll("word NN B-NP\n", column_count=3, tag_column=1)
        assert sents[0].tags == ["NN"]

    def test_text_corpus(self):
        sents = parse_text_corpus("the Cat sat\n\non mat\n")
        assert len(sents) == 2
        assert sents[0].words() == ["the", "cat", "sat"]

    def test_empty_sentence_rejected(self):
        with pytest.raises(DataError):
            Sentence([])

    def test_tag_length_mismatch_rejected(self):
        with pytest.raises(DataError):
            Sentence([Token("a")], ["O", "O"])


class TestSchemes:
    def test_tag_inventories(self):
        assert LabelScheme("BIO", ("PER",)).tags == ["O", "B-PER", "I-PER"]
        assert LabelScheme("BIOES", ("A",)).tags == ["O", "B-A", "I-A", "E-A", "S-A"]

    def test_types_sorted(self):
        assert LabelScheme("BIO", ("Z", "A")).types == ("A", "Z")

    def test_unknown_kind(self):
        with pytest.raises(DataError):
            LabelScheme("IOB2", ("A",))

    def test_round_trip_simple(self):
        tags = ["B-PER", "I-PER", "O", "B-LOC"]
        spans = to_spans(tags, "BIO")
        assert spans == [Span(0, 1, "PER"), Span(3, 3, "LOC")]
        assert from_spans(spans, 4, "BIO") == tags

    def test_repair_adjacent_runs(self):
        # maximal same-type run is one span unless B/S reopens
        assert to_spans(["I-X", "E-X"], "BIOES") == [Span(0, 1, "X")]
        assert to_spans(["B-X", "B-X"], "BIOES") == [Span(0, 0, "X"), Span(1, 1, "X")]
        assert to_spans(["I-X", "I-Y"], "BIO") == [Span(0, 0, "X"), Span(1, 1, "Y")]

    def test_iob1_conversion(self):
        # leading I-X opens a span under IOB1
        assert convert_scheme(["I-A", "I-A", "O"], "IOB1", "BIO") == ["B-A", "I-A", "O"]
        # adjacent spans of the same type are marked with B in IOB1
        assert convert_scheme(["I-A", "B-A"], "IOB1", "BIOES") == ["S-A", "S-A"]

    def test_bio_to_bioes(self):
        assert convert_scheme(["B-A", "I-A", "I-A", "O", "B-A"], "BIO", "BIOES") == \
            ["B-A", "I-A", "E-A", "O", "S-A"]

    def test_invalid_tag_under_scheme(self):
        with pytest.raises(DataError):
            convert_scheme(["E-A"], "BIO", "BIOES")

    def test_overlapping_spans_rejected(self):
        with pytest.raises(DataError):
            from_spans([Span(0, 2, "A"), Span(2, 3, "B")], 4, "BIO")

    def test_span_out_of_range_rejected(self):
        with pytest.raises(DataError):
            from_spans([Span(2, 5, "A")], 4, "BIO")


def _legal_bioes(tags):
    """Independent well-formedness predicate for a full BIOES sequence."""
    open_type = None
    for tag in tags:
        if tag == "O" or tag.startswith(("B-", "S-")):
            if open_type is not None:
                return False
        else:  # I-x or E-x
            if open_type != tag[2:]:
                return False
        if tag.startswith("B-"):
            open_type = tag[2:]
        elif tag.startswith("I-"):
            pass
        else:
            open_type = None
    return open_type is None


class TestExhaustiveBioes:
    scheme = LabelScheme("BIOES", ("A", "B"))

    def test_round_trip_all_legal_sequences(self):
        for n in range(1, 6):
            for tags in itertools.product(self.scheme.tags, repeat=n):
                tags = list(tags)
                if not _legal_bioes(tags):
                    continue
                spans = to_spans(tags, "BIOES")
                assert from_spans(spans, n, "BIOES") == tags
                # BIOES <-> BIO round trip preserves spans
                bio = convert_scheme(tags, "BIOES", "BIO")
                assert convert_scheme(bio, "BIO", "BIOES") == tags

    def test_transition_predicate_matches_pairwise_legality(self):
        tags = self.scheme.tags
        for prev in tags + [None]:
            for cur in tags + [None]:
                expected = _bigram_legal(prev, cur)
                assert self.scheme.is_legal_transition(prev, cur) == expected, (prev, cur)


def _bigram_legal(prev, cur):
    """Bigram legality derived from the sequence predicate: does some legal
    full sequence contain this adjacent pair (with None as boundary)?"""
    closers = lambda t: t == "O" or t.startswith(("E-", "S-"))
    if prev is None and cur is None:
        return True
    if cur is None:
        return closers(prev)
    if prev is None:
        return cur == "O" or cur.startswith(("B-", "S-"))
    if cur == "O" or cur.startswith(("B-", "S-")):
        return closers(prev)
    # cur is I-x / E-x: needs same-type open span
    return prev.startswith(("B-", "I-")) and prev[2:] == cur[2:]


class TestVocabulary:
    def test_reserved_block(self):
        v = Vocabulary()
        assert v.symbols[:4] == ["<pad>", "<unk>", "<s>", "</s>"]
        assert v.pad_id == 0 and v.unk_id == 1

    def test_unknown_maps_to_unk(self):
        v = Vocabulary()
        v.add("cat")
        assert v.lookup("dog") == v.unk_id
        assert v.lookup("cat") == v.index["cat"]

    def test_build_order_count_then_lex(self):
        sents = parse_text_corpus("b a\nb c\nc\n")
        v = build_vocab(sents)
        assert v.symbols[4:] == ["b", "c", "a"]

    def test_min_count(self):
        sents = parse_text_corpus("b a\nb c\nc\n")
        v = build_vocab(sents, min_count=2)
        assert v.symbols[4:] == ["b", "c"]

    def test_char_vocab_uses_raw(self):
        sents = parse_text_corpus("Ab\n")
        v = build_vocab(sents, chars=True)
        assert "A" in v.index and "b" in v.index

    def test_save_load_round_trip(self, tmp_path):
        sents = parse_text_corpus("the cat sat\n")
        v = build_vocab(sents)
        path = tmp_path / "vocab.txt"
        v.save(path)
        v2 = Vocabulary.load(path)
        assert v2.symbols == v.symbols
        assert v2.index == v.index

    def test_load_missing_reserved_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("a\nb\n")
        with pytest.raises(DataError):
            Vocabulary.load(path)


class TestSubsample:
    def test_floor_and_order(self):
        sents = parse_text_corpus("\n".join(f"w{chr(97+i)}" for i in range(10)))
        out = subsample(sents, 0.35, RngStream(0))
        assert len(out) == 3
        idx = [sents.index(s) for s in out]
        assert idx == sorted(idx)

    def test_full_fraction_is_copy(self):
        sents = parse_text_corpus("a\nb\n")
        out = subsample(sents, 1.0, RngStream(0))
        assert out == sents and out is not sents

    def test_bad_fraction(self):
        sents = parse_text_corpus("a\n")
        with pytest.raises(DataError):
            subsample(sents, 0.0, RngStream(0))


@given(st.lists(st.sampled_from(["O", "B-A", "I-A", "B-B", "I-B"]), min_size=1, max_size=12))
@settings(max_examples=150, deadline=None)
def test_spans_round_trip_after_repair_property(tags):
    # decode (with repair), re-encode, decode again: fixed point
    spans = to_spans(tags, "BIO")
    encoded = from_spans(spans, len(tags), "BIO")
    assert to_spans(encoded, "BIO") == spans


@given(st.lists(st.sampled_from(["O", "B-A", "I-A", "E-A", "S-A"]), min_size=1, max_size=10))
@settings(max_examples=150, deadline=None)
def test_bioes_repair_idempotent_property(tags):
    spans = to_spans(tags, "BIOES")
    encoded = from_spans(spans, len(tags), "BIOES")
    assert _legal_bioes(encoded)
    assert to_spans(encoded, "BIOES") == spans
