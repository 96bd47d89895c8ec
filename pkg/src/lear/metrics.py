"""Exact-match span precision, recall and F1, micro-averaged.

A predicted span counts as correct only when start, end and category all
match a gold span of the same text.  Ratios with a zero denominator are 0.
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import ContractError


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        return _f1(self.precision, self.recall)

    def to_json(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    per_category: dict[str, Counts] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
                "recall": self.recall, "f1": self.f1,
                "per_category": {c: v.to_json() for c, v in sorted(self.per_category.items())}}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    def format(self) -> str:
        rows = [("category", "tp", "fp", "fn", "precision", "recall", "f1")]
        for name, c in sorted(self.per_category.items()):
            rows.append((name, str(c.tp), str(c.fp), str(c.fn),
                         f"{c.precision:.4f}", f"{c.recall:.4f}", f"{c.f1:.4f}"))
        rows.append(("micro", str(self.tp), str(self.fp), str(self.fn),
                     f"{self.precision:.4f}", f"{self.recall:.4f}", f"{self.f1:.4f}"))
        widths = [max(len(r[k]) for r in rows) for k in range(len(rows[0]))]
        return "\n".join("  ".join(v.ljust(w) if k == 0 else v.rjust(w)
                                   for k, (v, w) in enumerate(zip(r, widths))) for r in rows)


def span_key(span) -> tuple[int, int, str]:
    """(start, end, category) of a span object, mapping or tuple."""
    if isinstance(span, Mapping):
        return int(span["start"]), int(span["end"]), str(span["category"])
    if isinstance(span, tuple) and not hasattr(span, "start"):
        s, e, c = span[:3]
        return int(s), int(e), str(c)
    return int(span.start), int(span.end), str(span.category)


def evaluate(pred: Mapping[object, Iterable], gold: Mapping[object, Iterable]) -> EvalReport:
    """Micro-averaged exact-match scores; both mappings go from text id to its spans."""
    if set(pred) != set(gold):
        missing = sorted(map(str, set(gold) - set(pred)))[:5]
        extra = sorted(map(str, set(pred) - set(gold)))[:5]
        raise ContractError(f"prediction and gold text ids differ (missing {missing}, unexpected {extra})")
    per_cat: dict[str, Counts] = defaultdict(Counts)
    for text_id, gold_spans in gold.items():
        g = {span_key(s) for s in gold_spans}
        p = {span_key(s) for s in pred[text_id]}
        for key in p & g:
            per_cat[key[2]].tp += 1
        for key in p - g:
            per_cat[key[2]].fp += 1
        for key in g - p:
            per_cat[key[2]].fn += 1
    total = Counts(sum(c.tp for c in per_cat.values()), sum(c.fp for c in per_cat.values()),
                   sum(c.fn for c in per_cat.values()))
    return EvalReport(total.tp, total.fp, total.fn, total.precision, total.recall, total.f1, dict(per_cat))
