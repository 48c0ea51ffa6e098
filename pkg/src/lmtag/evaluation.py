"""Span-level micro-averaged precision/recall/F1 and report tables.

A predicted span counts as correct only on exact (start, end, type) match.
Overall scores are computed from counts pooled over all types and
sentences, never by averaging per-type F1s. Zero denominators give 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import Sentence, to_spans


class EvalError(ValueError):
    pass


@dataclass
class TypeCounts:
    gold: int = 0
    predicted: int = 0
    correct: int = 0

    def prf(self) -> tuple[float, float, float]:
        p = self.correct / self.predicted if self.predicted else 0.0
        r = self.correct / self.gold if self.gold else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return 100.0 * p, 100.0 * r, 100.0 * f


@dataclass
class EvalCounts:
    per_type: dict[str, TypeCounts] = field(default_factory=dict)
    exact_sentences: int = 0
    total_sentences: int = 0

    def overall(self) -> TypeCounts:
        total = TypeCounts()
        for c in self.per_type.values():
            total.gold += c.gold
            total.predicted += c.predicted
            total.correct += c.correct
        return total

    @property
    def f1(self) -> float:
        return self.overall().prf()[2]

    @property
    def exact_match(self) -> float:
        if not self.total_sentences:
            return 0.0
        return 100.0 * self.exact_sentences / self.total_sentences


def score(gold_sentences: list[Sentence], predicted_tags: list[list[str]],
          scheme_kind: str = "BIOES") -> EvalCounts:
    """Compare predicted tag sequences to gold; spans decoded per scheme."""
    if len(gold_sentences) != len(predicted_tags):
        raise EvalError(
            f"{len(gold_sentences)} gold sentences vs {len(predicted_tags)} predictions"
        )
    counts = EvalCounts()
    for idx, (sent, pred) in enumerate(zip(gold_sentences, predicted_tags)):
        if sent.tags is None:
            raise EvalError(f"sentence {idx} has no gold tags")
        if len(pred) != len(sent):
            raise EvalError(
                f"sentence {idx}: {len(pred)} predicted tags for {len(sent)} tokens"
            )
        gold_spans = set(to_spans(sent.tags, scheme_kind))
        pred_spans = set(to_spans(pred, scheme_kind))
        counts.total_sentences += 1
        if gold_spans == pred_spans:
            counts.exact_sentences += 1
        for s in gold_spans:
            counts.per_type.setdefault(s.type, TypeCounts()).gold += 1
        for s in pred_spans:
            tc = counts.per_type.setdefault(s.type, TypeCounts())
            tc.predicted += 1
            if s in gold_spans:
                tc.correct += 1
    return counts


def format_score_table(counts: EvalCounts) -> str:
    """Aligned per-type and overall P/R/F1 table."""
    rows = [("type", "P", "R", "F1", "gold", "pred")]
    for typ in sorted(counts.per_type):
        p, r, f = counts.per_type[typ].prf()
        c = counts.per_type[typ]
        rows.append((typ, f"{p:.2f}", f"{r:.2f}", f"{f:.2f}", str(c.gold), str(c.predicted)))
    o = counts.overall()
    p, r, f = o.prf()
    rows.append(("ALL", f"{p:.2f}", f"{r:.2f}", f"{f:.2f}", str(o.gold), str(o.predicted)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


@dataclass
class ConfigResult:
    """Aggregated score of one configuration across seeds."""

    name: str
    mean: float
    std: float
    n: int = 1


def report(results: list[ConfigResult], baseline: str | None = None) -> str:
    """mean +- std table with a delta column against a named baseline."""
    header = ("config", "F1 +- std", "delta")
    base = next((r for r in results if r.name == baseline), None)
    rows = [header]
    for r in results:
        f1 = f"{r.mean:.2f} +- {r.std:.2f}" if r.n > 1 else f"{r.mean:.2f}"
        if base is None or r.name == base.name:
            delta = ""
        else:
            delta = f"{r.mean - base.mean:+.2f}"
        rows.append((r.name, f1, delta))
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines)
