"""Phrase-level precision / recall / F1 over BIO label sequences.

Span rules follow the CoNLL ``conlleval`` script: ``B-T`` opens a span,
``I-T`` extends an open span of the same type, and an ``I-T`` after ``O``,
after the start, or after a different type opens a new span.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .errors import ContractViolation


@dataclass(frozen=True, order=True)
class Span:
    start: int
    end: int  # inclusive
    type: str


def _split(tag):
    if tag == "O" or "-" not in tag:
        return "O", ""
    prefix, _, kind = tag.partition("-")
    return prefix, kind


def extract_spans(labels):
    spans = []
    start, kind = None, None
    for i, tag in enumerate(labels):
        prefix, t = _split(tag)
        continues = prefix == "I" and kind == t and start is not None
        if start is not None and not continues:
            spans.append(Span(start, i - 1, kind))
            start, kind = None, None
        if prefix in ("B", "I") and not continues:
            start, kind = i, t
    if start is not None:
        spans.append(Span(start, len(labels) - 1, kind))
    return set(spans)


def _prf(correct, gold, predicted):
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class ScoreReport:
    gold: int
    predicted: int
    correct: int
    precision: float
    recall: float
    f1: float
    per_type: dict = field(default_factory=dict)

    def lines(self):
        """Line-oriented ``key=value`` records; overall first, then each type."""
        out = [f"scope=overall gold={self.gold} predicted={self.predicted} "
               f"correct={self.correct} precision={self.precision:.6f} "
               f"recall={self.recall:.6f} f1={self.f1:.6f}"]
        for t in sorted(self.per_type):
            g, p, c, prec, rec, f = self.per_type[t]
            out.append(f"scope={t} gold={g} predicted={p} correct={c} "
                       f"precision={prec:.6f} recall={rec:.6f} f1={f:.6f}")
        return out

    def table(self):
        rows = [f"{'type':<10}{'gold':>7}{'pred':>7}{'corr':>7}{'P':>9}{'R':>9}{'F1':>9}"]
        items = [("overall", (self.gold, self.predicted, self.correct, self.precision,
                              self.recall, self.f1))]
        items += sorted(self.per_type.items())
        for name, (g, p, c, prec, rec, f) in items:
            rows.append(f"{name:<10}{g:>7}{p:>7}{c:>7}{100 * prec:>9.2f}"
                        f"{100 * rec:>9.2f}{100 * f:>9.2f}")
        return "\n".join(rows)


def phrase_f1(gold, pred):
    """Micro-averaged exact-match span scores over a corpus of sentences."""
    if len(gold) != len(pred):
        raise ContractViolation(f"{len(gold)} gold sentences but {len(pred)} predicted")
    g_count, p_count, c_count = Counter(), Counter(), Counter()
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise ContractViolation(f"sentence {i}: {len(g)} gold labels but "
                                    f"{len(p)} predicted")
        gs, ps = extract_spans(g), extract_spans(p)
        g_count.update(s.type for s in gs)
        p_count.update(s.type for s in ps)
        c_count.update(s.type for s in gs & ps)
    per_type = {}
    for t in set(g_count) | set(p_count):
        per_type[t] = (g_count[t], p_count[t], c_count[t],
                       *_prf(c_count[t], g_count[t], p_count[t]))
    G, P, C = sum(g_count.values()), sum(p_count.values()), sum(c_count.values())
    return ScoreReport(G, P, C, *_prf(C, G, P), per_type=per_type)
