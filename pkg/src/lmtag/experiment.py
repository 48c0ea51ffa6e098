"""Experiment orchestration: config files, training runs, model IO.

Experiment configs are line-oriented ``key = value`` files with
``[section]`` headers (sections: data, model, lm, schedule, run). Values
are plain strings; lists are whitespace-separated. ``#`` starts a comment.

A persisted model container embeds its full config and vocabularies, so a
saved tagger or LM can be reloaded without the original experiment file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import crf, tensor as T
from .data import (
    Sentence,
    Vocabulary,
    build_vocab,
    convert_scheme,
    parse_conll,
    parse_text_corpus,
    scheme_from_tags,
    subsample,
)
from .evaluation import ConfigResult, report, score
from .layers import load_embeddings
from .lm import LanguageModel, LmConfig, extract_embeddings, perplexity, train_lm
from .persist import load_container, save_container, sentence_hash
from .tagger import CharEncoderConfig, TaggerConfig, TaggerModel, preset
from .train import AdamState, RunResult, adam_step, multi_seed, run_schedule
from .tensor import RngStream


class ConfigError(ValueError):
    pass


def parse_config_file(path) -> dict[str, dict[str, str]]:
    sections: dict[str, dict[str, str]] = {}
    current = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                sections.setdefault(current, {})
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            if current is None:
                raise ConfigError(f"{path}:{lineno}: key outside any [section]")
            key, _, value = line.partition("=")
            sections[current][key.strip()] = value.strip()
    return sections


def _get(sec: dict, key: str, default=None, cast=str):
    if key not in sec:
        if default is None and cast is not bool:
            raise ConfigError(f"missing config key {key!r}")
        return default
    raw = sec[key]
    if cast is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    return cast(raw)


@dataclass
class ExperimentConfig:
    train_path: str
    dev_path: str
    test_path: str | None
    column_count: int
    tag_column: int
    source_scheme: str
    tagger: TaggerConfig
    embeddings_path: str | None
    lm_forward: str | None
    lm_backward: str | None
    alpha: float
    patience: int
    anneal_epochs: int
    max_epochs: int
    batch_size: int
    clip_norm: float
    seeds: list[int]
    outdir: str
    subsample_fraction: float = 1.0

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        sec = parse_config_file(path)
        data = sec.get("data", {})
        model = sec.get("model", {})
        lm = sec.get("lm", {})
        sched = sec.get("schedule", {})
        run = sec.get("run", {})

        if "preset" in model:
            tagger = preset(model["preset"])
        else:
            tagger = TaggerConfig()
        char = tagger.char
        char = CharEncoderConfig(
            kind=_get(model, "char_kind", char.kind),
            char_dim=_get(model, "char_dim", char.char_dim, int),
            filters=_get(model, "char_filters", char.filters, int),
            width=_get(model, "char_width", char.width, int),
            hidden=_get(model, "char_hidden", char.hidden, int),
            layers=_get(model, "char_layers", char.layers, int),
            source=_get(model, "char_source", char.source),
        )
        tagger = TaggerConfig(
            char=char,
            word_dim=_get(model, "word_dim", tagger.word_dim, int),
            rnn_kind=_get(model, "rnn_kind", tagger.rnn_kind),
            hidden1=_get(model, "hidden1", tagger.hidden1, int),
            hidden2=_get(model, "hidden2", tagger.hidden2, int),
            insertion=_get(model, "insertion", "none"),
            lm_dim=_get(model, "lm_dim", 0, int),
            scheme_kind=_get(data, "scheme", "BIOES"),
            types=tuple(tagger.types),
            constrain=_get(model, "constrain", tagger.constrain, bool),
            input_keep_prob=_get(model, "input_keep_prob", tagger.input_keep_prob, float),
            char_keep_prob=_get(model, "char_keep_prob", tagger.char_keep_prob, float),
            output_keep_prob=_get(model, "output_keep_prob", tagger.output_keep_prob, float),
        )
        lm_fwd = _get(lm, "forward", "none")
        lm_bwd = _get(lm, "backward", "none")
        return cls(
            train_path=_get(data, "train"),
            dev_path=_get(data, "dev"),
            test_path=_get(data, "test", "") or None,
            column_count=_get(data, "column_count", 2, int),
            tag_column=_get(data, "tag_column", -1, int),
            source_scheme=_get(data, "source_scheme", "BIO"),
            tagger=tagger,
            embeddings_path=_get(model, "embeddings", "") or None,
            lm_forward=None if lm_fwd == "none" else lm_fwd,
            lm_backward=None if lm_bwd == "none" else lm_bwd,
            alpha=_get(sched, "alpha", 1e-3, float),
            patience=_get(sched, "patience", 5, int),
            anneal_epochs=_get(sched, "anneal_epochs", 5, int),
            max_epochs=_get(sched, "max_epochs", 50, int),
            batch_size=_get(sched, "batch_size", 16, int),
            clip_norm=_get(sched, "clip_norm", 5.0, float),
            seeds=[int(s) for s in _get(run, "seeds", "0").split()],
            outdir=_get(run, "outdir", "runs"),
            subsample_fraction=_get(run, "subsample_fraction", 1.0, float),
        )


# ---------------------------------------------------------------------------
# Language model IO


def save_lm(model: LanguageModel, path) -> None:
    config = {
        "kind": "language_model",
        "lm": model.config.to_dict(),
        "vocab": model.vocab.symbols,
    }
    save_container(path, config, {k: p.value for k, p in model.parameters().items()})


def load_lm(path, freeze: bool = True) -> LanguageModel:
    config, tensors = load_container(path)
    if config.get("kind") != "language_model":
        raise ConfigError(f"{path} is not a language model container")
    vocab = Vocabulary(symbols=list(config["vocab"]))
    model = LanguageModel(LmConfig.from_dict(config["lm"]), vocab, RngStream(0))
    for name, p in model.parameters().items():
        p.value[...] = tensors[name]
    if freeze:
        model.freeze()
    return model


# ---------------------------------------------------------------------------
# Tagger IO


def save_tagger(model: TaggerModel, path) -> None:
    config = {
        "kind": "tagger",
        "tagger": model.config.to_dict(),
        "word_vocab": model.word_vocab.symbols,
        "char_vocab": model.char_vocab.symbols,
    }
    save_container(path, config, {k: p.value for k, p in model.parameters().items()})


def load_tagger(path) -> TaggerModel:
    config, tensors = load_container(path)
    if config.get("kind") != "tagger":
        raise ConfigError(f"{path} is not a tagger container")
    model = TaggerModel(
        TaggerConfig.from_dict(config["tagger"]),
        Vocabulary(symbols=list(config["word_vocab"])),
        Vocabulary(symbols=list(config["char_vocab"])),
        RngStream(0),
    )
    for name, p in model.parameters().items():
        p.value[...] = tensors[name]
    return model


# ---------------------------------------------------------------------------
# LM embedding preparation


class LmProvider:
    """Computes (and memoizes) frozen LM embeddings per sentence."""

    def __init__(self, fwd: LanguageModel | None, bwd: LanguageModel | None):
        if fwd is None and bwd is None:
            raise ConfigError("LmProvider needs at least one direction")
        self.fwd, self.bwd = fwd, bwd
        self._cache: dict[str, np.ndarray] = {}

    @property
    def dim(self) -> int:
        d = 0
        if self.fwd is not None:
            d += self.fwd.config.state_dim
        if self.bwd is not None:
            d += self.bwd.config.state_dim
        return d

    def embeddings(self, sentence: Sentence) -> np.ndarray:
        key = sentence_hash([t.norm for t in sentence.tokens])
        if key not in self._cache:
            self._cache[key] = extract_embeddings(self.fwd, self.bwd, sentence).combined
        return self._cache[key]

    def save_cache(self, path, sentences: list[Sentence]) -> None:
        tensors = {}
        for sent in sentences:
            key = sentence_hash([t.norm for t in sent.tokens])
            tensors[key] = self.embeddings(sent)
        save_container(path, {"kind": "lm_cache", "dim": self.dim}, tensors)


# ---------------------------------------------------------------------------
# Tagger training


@dataclass
class Datasets:
    train: list[Sentence]
    dev: list[Sentence]
    test: list[Sentence] | None
    word_vocab: Vocabulary
    char_vocab: Vocabulary
    types: tuple[str, ...]


def load_datasets(cfg: ExperimentConfig, rng: RngStream | None = None) -> Datasets:
    def load(path):
        with open(path, encoding="utf-8") as f:
            sents = parse_conll(f, cfg.column_count, cfg.tag_column)
        for s in sents:
            s.tags = convert_scheme(s.tags, cfg.source_scheme, cfg.tagger.scheme_kind)
        return sents

    train = load(cfg.train_path)
    dev = load(cfg.dev_path)
    test = load(cfg.test_path) if cfg.test_path else None
    if cfg.subsample_fraction < 1.0:
        train = subsample(train, cfg.subsample_fraction, rng or RngStream(0))
    tags_seen = [t for s in train + dev for t in s.tags]
    types = scheme_from_tags(tags_seen, cfg.tagger.scheme_kind).types
    word_vocab = build_vocab(train + dev)
    char_vocab = build_vocab(train + dev, chars=True)
    return Datasets(train, dev, test, word_vocab, char_vocab, types)


def train_tagger_run(tag_cfg: TaggerConfig, data: Datasets, seed: int,
                     provider: LmProvider | None = None,
                     word_table: np.ndarray | None = None,
                     alpha: float = 1e-3, patience: int = 5,
                     anneal_epochs: int = 5, max_epochs: int = 30,
                     batch_size: int = 16, clip_norm: float = 5.0,
                     log=None) -> tuple[TaggerModel, RunResult]:
    """One seeded training run under the annealing schedule.

    Returns the model restored to its best-dev checkpoint and the RunResult
    (with test_score filled in when the datasets include a test split).
    """
    rng = RngStream(seed)
    model = TaggerModel(tag_cfg, data.word_vocab, data.char_vocab, rng,
                        word_table=word_table.copy() if word_table is not None else None)
    params = model.parameters()
    adam = AdamState(alpha=alpha)
    shuffle_rng = rng.fork(1)
    dropout_rng = rng.fork(2)

    def lm_of(sent):
        if provider is None:
            return None
        return provider.embeddings(sent)

    def train_epoch(epoch, cur_alpha):
        adam.alpha = cur_alpha
        order = shuffle_rng.shuffled(range(len(data.train)))
        total_loss = 0.0
        total_tokens = 0
        for start in range(0, len(order), batch_size):
            batch = [data.train[i] for i in order[start : start + batch_size]]
            losses = []
            n_tok = 0
            for sent in batch:
                losses.append(model.loss(sent, lm_of(sent), rng=dropout_rng, train=True))
                n_tok += len(sent)
            total = losses[0]
            for extra in losses[1:]:
                total = T.add(total, extra)
            mean_loss = T.scale(total, 1.0 / n_tok)
            for p in params.values():
                p.zero_grad()
            T.backward(mean_loss)
            T.clip_gradients(params.values(), clip_norm)
            adam_step(adam, params)
            total_loss += float(total.value)
            total_tokens += n_tok
        return total_loss / max(total_tokens, 1)

    def dev_eval():
        preds = [model.predict(s, lm_of(s)) for s in data.dev]
        return score(data.dev, preds, tag_cfg.scheme_kind).f1

    result = run_schedule(
        train_epoch, dev_eval, seed=seed, patience=patience,
        base_alpha=alpha, anneal_epochs=anneal_epochs, max_epochs=max_epochs,
        checkpoint=model.snapshot, restore=model.restore, log=log)
    if result.best_checkpoint is not None:
        model.restore(result.best_checkpoint)
    if data.test:
        preds = [model.predict(s, lm_of(s)) for s in data.test]
        result.test_score = score(data.test, preds, tag_cfg.scheme_kind).f1
    return model, result


def run_experiment(cfg: ExperimentConfig, log=print,
                   save_models: bool = True):
    """Full multi-seed experiment from an ExperimentConfig; returns the
    SeedAggregate. Writes per-seed model containers and a run log when an
    output directory is configured."""
    data = load_datasets(cfg, RngStream(cfg.seeds[0]))
    tag_cfg = _resolve_types(cfg.tagger, data)
    provider = _make_provider(cfg)
    if provider is not None and tag_cfg.lm_dim == 0:
        tag_cfg.lm_dim = provider.dim
    word_table = _load_word_table(cfg, data)
    os.makedirs(cfg.outdir, exist_ok=True)
    log_lines: list[str] = []

    def run_one(seed):
        def seed_log(msg):
            line = f"seed {seed} {msg}"
            log_lines.append(line)
            if log is not None:
                log(line)

        model, result = train_tagger_run(
            tag_cfg, data, seed, provider=provider, word_table=word_table,
            alpha=cfg.alpha, patience=cfg.patience,
            anneal_epochs=cfg.anneal_epochs, max_epochs=cfg.max_epochs,
            batch_size=cfg.batch_size, clip_norm=cfg.clip_norm, log=seed_log)
        seed_log(f"best_dev {result.best_dev:.4f} test "
                 f"{result.test_score if result.test_score is not None else 'n/a'}")
        if save_models:
            save_tagger(model, os.path.join(cfg.outdir, f"model_seed{seed}.lmtag"))
        return result

    agg = multi_seed(
        run_one, cfg.seeds,
        score_of=lambda r: r.test_score if r.test_score is not None else r.best_dev)
    log_lines.append(f"aggregate mean {agg.mean:.4f} std {agg.std:.4f}")
    if log is not None:
        log(log_lines[-1])
    with open(os.path.join(cfg.outdir, "run.log"), "w", encoding="utf-8") as f:
        f.write("\n".join(log_lines) + "\n")
    return agg


def _resolve_types(tag_cfg: TaggerConfig, data: Datasets) -> TaggerConfig:
    if not tag_cfg.types:
        tag_cfg = TaggerConfig.from_dict({**tag_cfg.to_dict(), "types": list(data.types)})
    return tag_cfg


def _make_provider(cfg: ExperimentConfig) -> LmProvider | None:
    if cfg.tagger.insertion == "none":
        return None
    if cfg.lm_forward is None and cfg.lm_backward is None:
        raise ConfigError(
            f"insertion mode {cfg.tagger.insertion!r} but no LM models configured")
    fwd = load_lm(cfg.lm_forward) if cfg.lm_forward else None
    bwd = load_lm(cfg.lm_backward) if cfg.lm_backward else None
    return LmProvider(fwd, bwd)


def _load_word_table(cfg: ExperimentConfig, data: Datasets):
    if not cfg.embeddings_path:
        return None
    table, coverage = load_embeddings(
        cfg.embeddings_path, data.word_vocab, RngStream(12345))
    if cfg.tagger.word_dim != table.dim:
        raise ConfigError(
            f"embedding file dim {table.dim} != configured word_dim {cfg.tagger.word_dim}")
    return table.table.value


# ---------------------------------------------------------------------------
# Ablations


def ablate(kind: str, cfg: ExperimentConfig, log=print) -> str:
    """Run one of the analysis sweeps and return a comparison table."""
    if kind == "insertion":
        variants = ["input_first", "output_first", "output_second"]
        results = []
        for mode in variants:
            sub = _with_insertion(cfg, mode)
            agg = run_experiment(sub, log=log, save_models=False)
            results.append(ConfigResult(mode, agg.mean, agg.std, len(sub.seeds)))
        return report(results)
    if kind == "lm-combo":
        rows = []
        for name, fwd, bwd in (
            ("no-lm", False, False),
            ("forward-only", True, False),
            ("forward+backward", True, True),
        ):
            sub = _with_lm_selection(cfg, fwd, bwd)
            agg = run_experiment(sub, log=log, save_models=False)
            rows.append(ConfigResult(name, agg.mean, agg.std, len(sub.seeds)))
        return report(rows, baseline="no-lm")
    if kind == "no-rnn":
        rows = []
        for name, mode in (("taglm", cfg.tagger.insertion), ("lm-only", "lm_only")):
            sub = _with_insertion(cfg, mode if mode != "none" else "output_first")
            agg = run_experiment(sub, log=log, save_models=False)
            rows.append(ConfigResult(name, agg.mean, agg.std, len(sub.seeds)))
        return report(rows, baseline="taglm")
    if kind == "param-match":
        from .tagger import match_parameters, parameter_count

        data = load_datasets(cfg)
        base = _resolve_types(cfg.tagger, data)
        taglm = TaggerConfig.from_dict({**base.to_dict(), "insertion": "output_first",
                                        "lm_dim": _make_provider_dim(cfg)})
        target = parameter_count(taglm, len(data.word_vocab), len(data.char_vocab))
        matched = match_parameters(base, target, len(data.word_vocab), len(data.char_vocab))
        rows = []
        for name, tc in (("baseline", base), ("baseline-matched", matched)):
            sub = _with_tagger(cfg, tc)
            agg = run_experiment(sub, log=log, save_models=False)
            rows.append(ConfigResult(name, agg.mean, agg.std, len(sub.seeds)))
        return report(rows, baseline="baseline")
    if kind == "subsample":
        rows = []
        for name, mode in (("baseline", "none"), ("taglm", cfg.tagger.insertion)):
            sub = _with_insertion(cfg, mode if mode != "none" else "output_first") \
                if name == "taglm" else _with_insertion(cfg, "none")
            agg = run_experiment(sub, log=log, save_models=False)
            rows.append(ConfigResult(name, agg.mean, agg.std, len(sub.seeds)))
        return report(rows, baseline="baseline")
    raise ConfigError(f"unknown ablation kind {kind!r}")


def _make_provider_dim(cfg: ExperimentConfig) -> int:
    fwd = load_lm(cfg.lm_forward) if cfg.lm_forward else None
    bwd = load_lm(cfg.lm_backward) if cfg.lm_backward else None
    return LmProvider(fwd, bwd).dim


def _with_tagger(cfg: ExperimentConfig, tag_cfg: TaggerConfig) -> ExperimentConfig:
    import copy

    out = copy.deepcopy(cfg)
    out.tagger = tag_cfg
    return out


def _with_insertion(cfg: ExperimentConfig, mode: str) -> ExperimentConfig:
    import copy

    out = copy.deepcopy(cfg)
    d = out.tagger.to_dict()
    d["insertion"] = mode
    d["lm_dim"] = 0 if mode == "none" else _make_provider_dim(cfg)
    out.tagger = TaggerConfig.from_dict(d)
    return out


def _with_lm_selection(cfg: ExperimentConfig, use_fwd: bool, use_bwd: bool) -> ExperimentConfig:
    import copy

    out = copy.deepcopy(cfg)
    d = out.tagger.to_dict()
    if not use_fwd and not use_bwd:
        d["insertion"] = "none"
        d["lm_dim"] = 0
        out.lm_forward = None
        out.lm_backward = None
    else:
        d["lm_dim"] = 0
        if d["insertion"] == "none":
            d["insertion"] = "output_first"
        out.lm_forward = cfg.lm_forward if use_fwd else None
        out.lm_backward = cfg.lm_backward if use_bwd else None
    out.tagger = TaggerConfig.from_dict(d)
    return out
