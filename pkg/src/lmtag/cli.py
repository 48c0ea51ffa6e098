"""Command line entry point.

Commands:
    lm-train   train a forward or backward language model on plain text
    lm-eval    report perplexity of a saved LM on a corpus
    lm-embed   write a cache of frozen LM embeddings for a dataset
    tag-train  run a (multi-seed) tagger experiment from a config file
    tag-eval   score a saved tagger on a CoNLL file
    tag        tag whitespace-tokenized text, CoNLL output
    ablate     run an analysis sweep (insertion / lm-combo / no-rnn /
               param-match / subsample)

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .crf import CrfError
from .data import (
    DataError,
    Sentence,
    Token,
    build_vocab,
    parse_conll,
    parse_text_corpus,
)
from .evaluation import format_score_table, score
from .experiment import (
    ConfigError,
    ExperimentConfig,
    LmProvider,
    ablate,
    load_lm,
    load_tagger,
    save_lm,
)
from .lm import LmConfig, LmError, perplexity, train_lm
from .persist import ContainerError
from .tagger import TaggerError


def _read_corpus(path):
    with open(path, encoding="utf-8") as f:
        return parse_text_corpus(f.read())


def cmd_lm_train(args) -> int:
    sentences = _read_corpus(args.corpus)
    if not sentences:
        raise DataError(f"{args.corpus}: empty corpus")
    vocab = build_vocab(sentences, min_count=args.min_count)
    config = LmConfig(
        direction=args.direction,
        embed_dim=args.embed_dim,
        cell=args.cell,
        hidden=args.hidden,
        projection=args.projection,
    )
    model, history = train_lm(
        config, sentences, vocab, seed=args.seed, epochs=args.epochs,
        learning_rate=args.lr, batch_size=args.batch_size,
        log=lambda msg: print(msg))
    save_lm(model, args.out)
    print(f"saved {args.direction} LM to {args.out} "
          f"(vocab {len(vocab)}, final train ppl {history[-1]:.4f})")
    return 0


def cmd_lm_eval(args) -> int:
    model = load_lm(args.model)
    sentences = _read_corpus(args.corpus)
    ppl = perplexity(model, sentences)
    print(f"{ppl:.4f}")
    return 0


def cmd_lm_embed(args) -> int:
    fwd = load_lm(args.forward) if args.forward else None
    bwd = load_lm(args.backward) if args.backward else None
    provider = LmProvider(fwd, bwd)
    sentences = _read_corpus(args.data)
    provider.save_cache(args.out, sentences)
    print(f"wrote {len(sentences)} sentence embeddings (dim {provider.dim}) to {args.out}")
    return 0


def cmd_tag_train(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    from .experiment import run_experiment

    agg = run_experiment(cfg)
    print(f"mean F1 {agg.mean:.2f} +- {agg.std:.2f} over seeds "
          f"{' '.join(str(s) for s in cfg.seeds)}")
    return 0


def cmd_tag_eval(args) -> int:
    model = load_tagger(args.model)
    with open(args.data, encoding="utf-8") as f:
        sentences = parse_conll(f, args.column_count, args.tag_column)
    from .data import convert_scheme

    for s in sentences:
        s.tags = convert_scheme(s.tags, args.source_scheme, model.config.scheme_kind)
    provider = _provider_from_args(args)
    preds = [model.predict(s, provider.embeddings(s) if provider else None)
             for s in sentences]
    counts = score(sentences, preds, model.config.scheme_kind)
    print(format_score_table(counts))
    return 0


def cmd_tag(args) -> int:
    model = load_tagger(args.model)
    provider = _provider_from_args(args)
    if args.text:
        lines = [args.text]
    else:
        lines = sys.stdin.read().splitlines()
    for line in lines:
        words = line.split()
        if not words:
            continue
        sent = Sentence([Token(w) for w in words])
        tags = model.predict(sent, provider.embeddings(sent) if provider else None)
        for w, t in zip(words, tags):
            print(f"{w} {t}")
        print()
    return 0


def cmd_ablate(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    if args.fraction is not None:
        cfg.subsample_fraction = args.fraction
    table = ablate(args.kind, cfg)
    print(table)
    return 0


def _provider_from_args(args):
    fwd = load_lm(args.forward) if getattr(args, "forward", None) else None
    bwd = load_lm(args.backward) if getattr(args, "backward", None) else None
    if fwd is None and bwd is None:
        return None
    return LmProvider(fwd, bwd)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lmtag", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    lt = sub.add_parser("lm-train", help="train a language model")
    lt.add_argument("--corpus", required=True)
    lt.add_argument("--out", required=True)
    lt.add_argument("--direction", choices=["forward", "backward"], default="forward")
    lt.add_argument("--cell", choices=["LSTM", "LSTMP"], default="LSTM")
    lt.add_argument("--embed-dim", type=int, default=16)
    lt.add_argument("--hidden", type=int, default=32)
    lt.add_argument("--projection", type=int, default=None)
    lt.add_argument("--epochs", type=int, default=10)
    lt.add_argument("--lr", type=float, default=1e-3)
    lt.add_argument("--batch-size", type=int, default=16)
    lt.add_argument("--min-count", type=int, default=1)
    lt.add_argument("--seed", type=int, default=0)
    lt.set_defaults(func=cmd_lm_train)

    le = sub.add_parser("lm-eval", help="perplexity of a saved LM")
    le.add_argument("--model", required=True)
    le.add_argument("--corpus", required=True)
    le.set_defaults(func=cmd_lm_eval)

    lm = sub.add_parser("lm-embed", help="cache LM embeddings for a dataset")
    lm.add_argument("--forward", default=None)
    lm.add_argument("--backward", default=None)
    lm.add_argument("--data", required=True)
    lm.add_argument("--out", required=True)
    lm.set_defaults(func=cmd_lm_embed)

    tt = sub.add_parser("tag-train", help="train tagger(s) from a config file")
    tt.add_argument("config")
    tt.set_defaults(func=cmd_tag_train)

    te = sub.add_parser("tag-eval", help="score a saved tagger on CoNLL data")
    te.add_argument("--model", required=True)
    te.add_argument("--data", required=True)
    te.add_argument("--column-count", type=int, default=2)
    te.add_argument("--tag-column", type=int, default=-1)
    te.add_argument("--source-scheme", default="BIO")
    te.add_argument("--forward", default=None)
    te.add_argument("--backward", default=None)
    te.set_defaults(func=cmd_tag_eval)

    tg = sub.add_parser("tag", help="tag tokenized text (stdin or --text)")
    tg.add_argument("--model", required=True)
    tg.add_argument("--text", default=None)
    tg.add_argument("--forward", default=None)
    tg.add_argument("--backward", default=None)
    tg.set_defaults(func=cmd_tag)

    ab = sub.add_parser("ablate", help="run an analysis sweep")
    ab.add_argument("kind", choices=["insertion", "lm-combo", "no-rnn",
                                     "param-match", "subsample"])
    ab.add_argument("config")
    ab.add_argument("--fraction", type=float, default=None,
                    help="training subsample fraction (subsample ablation)")
    ab.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except (DataError, ConfigError, ContainerError, TaggerError, LmError,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FloatingPointError, CrfError, ArithmeticError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
