"""Token accuracy and span-level micro-F1 with conlleval segmentation rules.

Span extraction is deliberately tolerant of malformed BIOES output from a
model: any label that can open a span does, any label that can close one
does, so scores stay comparable with the standard CoNLL scorer.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .corpus import split_label


@dataclass(frozen=True)
class Span:
    start: int
    end: int  # inclusive
    type: str


@dataclass
class EvalReport:
    mode: str  # "span" or "token"
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    accuracy: float = 0.0
    per_type: dict = field(default_factory=dict)
    support: dict = field(default_factory=dict)

    def format_table(self) -> str:
        lines = []
        if self.mode == "span":
            lines.append(f"{'type':>12}  {'prec':>8}  {'recall':>8}  {'f1':>8}  {'gold':>6}")
            for typ in sorted(self.per_type):
                p, r, f = self.per_type[typ]
                lines.append(
                    f"{typ:>12}  {p:8.4f}  {r:8.4f}  {f:8.4f}  {self.support.get(typ, 0):6d}"
                )
            lines.append(
                f"{'ALL':>12}  {self.precision:8.4f}  {self.recall:8.4f}  {self.f1:8.4f}"
                f"  {self.support.get('ALL', 0):6d}"
            )
        else:
            lines.append(f"token accuracy: {self.accuracy:.4f}"
                         f" ({self.support.get('correct', 0)}/{self.support.get('ALL', 0)})")
        return "\n".join(lines)

    def format_kv(self) -> str:
        if self.mode == "span":
            parts = [
                f"mode=span precision={self.precision:.6f} recall={self.recall:.6f}"
                f" f1={self.f1:.6f} gold={self.support.get('ALL', 0)}"
            ]
            for typ in sorted(self.per_type):
                p, r, f = self.per_type[typ]
                parts.append(f"type={typ} precision={p:.6f} recall={r:.6f} f1={f:.6f}")
            return "\n".join(parts)
        return (
            f"mode=token accuracy={self.accuracy:.6f}"
            f" correct={self.support.get('correct', 0)} total={self.support.get('ALL', 0)}"
        )


def _starts(prev, cur):
    ppos, ptyp = prev
    cpos, ctyp = cur
    if cpos == "O":
        return False
    if ppos == "O":
        return True
    if ptyp != ctyp:
        return True
    return cpos in ("B", "S") or ppos in ("E", "S")


def _ends(prev, cur):
    ppos, ptyp = prev
    cpos, ctyp = cur
    if ppos == "O":
        return False
    if cpos == "O":
        return True
    if ptyp != ctyp:
        return True
    return cpos in ("B", "S") or ppos in ("E", "S")


def extract_spans(labels) -> set:
    """Extract (start, end, type) spans from a BIOES label sequence."""
    spans = set()
    open_start = None
    open_type = None
    prev = ("O", None)
    for i, lab in enumerate(labels):
        cur = split_label(lab)
        if open_start is not None and _ends(prev, cur):
            spans.add(Span(open_start, i - 1, open_type))
            open_start = None
        if _starts(prev, cur):
            open_start = i
            open_type = cur[1]
        prev = cur
    if open_start is not None:
        spans.add(Span(open_start, len(labels) - 1, open_type))
    return spans


def span_f1(gold_sentences, pred_labels) -> EvalReport:
    """Micro-averaged span F1 over exact (start, end, type) matches.

    ``gold_sentences`` carry raw label strings; ``pred_labels`` is a list of
    label-string lists of matching shape.
    """
    if len(gold_sentences) != len(pred_labels):
        raise ValueError("gold and predictions have different sentence counts")
    tp = defaultdict(int)
    npred = defaultdict(int)
    ngold = defaultdict(int)
    for sent, pred in zip(gold_sentences, pred_labels):
        gold = sent.raw_label_strings
        if len(gold) != len(pred):
            raise ValueError("gold and predicted label lengths differ")
        gspans = extract_spans(gold)
        pspans = extract_spans(pred)
        for s in gspans:
            ngold[s.type] += 1
        for s in pspans:
            npred[s.type] += 1
        for s in gspans & pspans:
            tp[s.type] += 1

    def prf(tp_, p_, g_):
        prec = tp_ / p_ if p_ else 0.0
        rec = tp_ / g_ if g_ else 0.0
        f = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        return prec, rec, f

    per_type = {}
    support = {}
    for typ in sorted(set(ngold) | set(npred)):
        per_type[typ] = prf(tp[typ], npred[typ], ngold[typ])
        support[typ] = ngold[typ]
    precision, recall, f1 = prf(sum(tp.values()), sum(npred.values()), sum(ngold.values()))
    support["ALL"] = sum(ngold.values())
    return EvalReport(
        mode="span",
        precision=precision,
        recall=recall,
        f1=f1,
        per_type=per_type,
        support=support,
    )


def token_accuracy(gold_sentences, pred_labels) -> EvalReport:
    """Fraction of positions whose predicted label equals gold."""
    if len(gold_sentences) != len(pred_labels):
        raise ValueError("gold and predictions have different sentence counts")
    total = 0
    correct = 0
    per_label = defaultdict(lambda: [0, 0])  # label -> [correct, total]
    for sent, pred in zip(gold_sentences, pred_labels):
        gold = sent.raw_label_strings
        if len(gold) != len(pred):
            raise ValueError("gold and predicted label lengths differ")
        for g, p in zip(gold, pred):
            total += 1
            per_label[g][1] += 1
            if g == p:
                correct += 1
                per_label[g][0] += 1
    if total == 0:
        raise ValueError("no tokens to evaluate")
    per_type = {lab: (c / t, c / t, c / t) for lab, (c, t) in per_label.items()}
    support = {lab: t for lab, (_, t) in per_label.items()}
    support["ALL"] = total
    support["correct"] = correct
    return EvalReport(
        mode="token",
        accuracy=correct / total,
        per_type=per_type,
        support=support,
    )
