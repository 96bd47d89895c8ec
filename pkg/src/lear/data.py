"""Corpus and label-file ingestion, gold-label derivation, synthetic corpora.

Corpus files are JSON lines, one text per line::

    {"text_id": 0, "text": "john died .", "spans": [{"start": 1, "end": 1, "category": "Die"}]}

Span indices are token positions after :func:`lear.encoder.split_tokens`,
0-based with an inclusive end.  ``text_id`` is optional and defaults to the
0-based line number.  Label files are a JSON array of
``{"category": ..., "annotation": ...}`` objects.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .encoder import LabelAnnotationSet, Vocab, split_tokens
from .errors import ConfigError, InsufficientDataError, ValidationError
from .loss import GoldLabels
from .tensor import make_rng


@dataclass(frozen=True, order=True)
class Span:
    start: int
    end: int
    category: str


@dataclass
class Record:
    text_id: object
    text: str
    spans: list[Span]
    tokens: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.tokens:
            self.tokens = split_tokens(self.text)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class LabelFile:
    categories: list[str]
    annotations: list[str]

    def __post_init__(self):
        if not self.categories:
            raise ValidationError("label file has no categories")
        if len(set(self.categories)) != len(self.categories):
            raise ValidationError("label file has duplicate category names")
        for name, text in zip(self.categories, self.annotations):
            if not split_tokens(text):
                raise ValidationError(f"category {name!r} has an empty annotation")

    @classmethod
    def load(cls, path) -> "LabelFile":
        try:
            items = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: malformed label file: {exc}") from None
        if not isinstance(items, list):
            raise ValidationError(f"{path}: label file must be a JSON array")
        try:
            return cls([str(it["category"]) for it in items], [str(it["annotation"]) for it in items])
        except (KeyError, TypeError):
            raise ValidationError(f"{path}: every entry needs 'category' and 'annotation'") from None

    def save(self, path) -> None:
        items = [{"category": c, "annotation": a} for c, a in zip(self.categories, self.annotations)]
        Path(path).write_text(json.dumps(items, indent=1) + "\n", encoding="utf-8")

    def label_set(self, vocab: Vocab, source: str = "annotation") -> LabelAnnotationSet:
        """Tokenized annotations; ``source="name"`` uses the category names instead."""
        if source == "annotation":
            texts = self.annotations
        elif source == "name":
            texts = [c.replace("_", " ") for c in self.categories]
        else:
            raise ConfigError(f"unknown label source {source!r}")
        return LabelAnnotationSet.from_texts(self.categories, texts, vocab)


@dataclass
class Corpus:
    records: list[Record]
    split: str = "train"
    vocab: Vocab | None = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def texts(self) -> list[str]:
        return [r.text for r in self.records]


def validate_record(record: Record, categories: Iterable[str] | None, where: str = "") -> None:
    known = set(categories) if categories is not None else None
    n = len(record.tokens)
    if n == 0:
        raise ValidationError(f"{where}text {record.text_id!r} is empty")
    for sp in record.spans:
        if sp.end < sp.start:
            raise ValidationError(f"{where}span ({sp.start}, {sp.end}) ends before it starts")
        if sp.start < 0 or sp.end >= n:
            raise ValidationError(f"{where}span ({sp.start}, {sp.end}) is outside a text of {n} tokens")
        if known is not None and sp.category not in known:
            raise ValidationError(f"{where}unknown category {sp.category!r}")


def build_vocab(corpora: Iterable[Corpus], labels: LabelFile | None = None) -> Vocab:
    texts: list[str] = []
    for corpus in corpora:
        texts.extend(corpus.texts())
    if labels is not None:
        texts.extend(labels.annotations)
        texts.extend(c.replace("_", " ") for c in labels.categories)
    return Vocab.build(texts)


def parse_corpus(lines: Iterable[str], labels: LabelFile | None = None, split: str = "train",
                 source: str = "<corpus>") -> Corpus:
    records: list[Record] = []
    categories = labels.categories if labels is not None else None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            spans = [Span(int(s["start"]), int(s["end"]), str(s["category"])) for s in obj.get("spans", [])]
            record = Record(text_id=obj.get("text_id", lineno - 1), text=str(obj["text"]), spans=spans)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ValidationError(f"{source}:{lineno}: malformed record ({exc})") from None
        validate_record(record, categories, where=f"{source}:{lineno}: ")
        records.append(record)
    return Corpus(records, split)


def load_corpus(path, labels: LabelFile | None = None, vocab: Vocab | None = None,
                split: str = "train") -> Corpus:
    """Read and validate a JSON-lines corpus; builds a vocabulary if none is given."""
    with open(path, encoding="utf-8") as fh:
        corpus = parse_corpus(fh, labels, split, source=str(path))
    corpus.vocab = vocab if vocab is not None else build_vocab([corpus], labels)
    return corpus


def record_to_json(record: Record) -> dict:
    return {"text_id": record.text_id, "text": record.text,
            "spans": [{"start": s.start, "end": s.end, "category": s.category} for s in record.spans]}


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in corpus.records:
            fh.write(json.dumps(record_to_json(r), ensure_ascii=False) + "\n")


def derive_gold(record: Record, categories: list[str], mode: str = "flat") -> GoldLabels:
    n = len(record.tokens)
    index = {c: k for k, c in enumerate(categories)}
    start = np.zeros((n, len(categories)))
    end = np.zeros((n, len(categories)))
    match = np.zeros((len(categories), n, n)) if mode == "nested" else None
    for sp in record.spans:
        c = index[sp.category]
        start[sp.start, c] = 1.0
        end[sp.end, c] = 1.0
        if match is not None:
            match[c, sp.start, sp.end] = 1.0
    return GoldLabels(start, end, match)


# ---------------------------------------------------------------------------
# synthetic corpora


@dataclass
class SynthSpec:
    """Shape of a generated corpus.

    Each category owns a few entity words and a cue word.  A span is a run
    of 2-3 of its entity words, so spans are recoverable from token identity
    and local context; the category's annotation mentions its entity words
    and cue, which makes label knowledge informative.  Flat spans never
    share a boundary token.  With ``nesting`` a span may be extended to the
    left by the category's modifier word, giving a second, enclosing span of
    the same category with the same end.
    """

    num_categories: int = 3
    vocab_size: int = 40
    sentences: int = 30
    dev_sentences: int = 10
    test_sentences: int = 10
    span_rate: float = 1.5
    nesting: bool = False
    mode: str = "flat"
    min_len: int = 8
    max_len: int = 14
    entity_words: int = 4

    def __post_init__(self):
        if self.mode not in ("flat", "nested"):
            raise ConfigError(f"unknown synth mode {self.mode!r}")
        if self.nesting and self.mode == "flat":
            raise ConfigError("nested spans were requested for a flat corpus")
        if self.mode == "nested":
            self.nesting = True
        if self.num_categories < 1 or self.sentences < 1:
            raise ConfigError("need at least one category and one sentence")


_NAMES = ["Person", "Place", "Group", "Event", "Device", "Animal", "Food", "Title"]


def _category_names(k: int) -> list[str]:
    return [_NAMES[i] if i < len(_NAMES) else f"Type{i}" for i in range(k)]


def synth_labels(spec: SynthSpec) -> LabelFile:
    names = _category_names(spec.num_categories)
    annotations = []
    for c, name in enumerate(names):
        words = " ".join(f"e{c}w{k}" for k in range(spec.entity_words))
        text = f"a {name.lower()} span is made of words such as {words} and often follows cue{c}"
        if spec.nesting:
            text += f" ; mod{c} can extend it"
        annotations.append(text)
    return LabelFile(names, annotations)


def _synth_sentence(rng: np.random.Generator, spec: SynthSpec, names: list[str], force_nested: bool):
    fillers = [f"w{k}" for k in range(spec.vocab_size)]
    n_spans = max(1, int(rng.poisson(spec.span_rate)))
    n_spans = min(n_spans, 3)
    if spec.nesting:
        cats = rng.choice(spec.num_categories, size=min(n_spans, spec.num_categories), replace=False)
    else:
        cats = rng.integers(0, spec.num_categories, size=n_spans)
    chunks: list[tuple[list[str], list[tuple[int, int, int]]]] = []
    for k, c in enumerate(cats):
        c = int(c)
        run = [f"e{c}w{int(x)}" for x in rng.integers(0, spec.entity_words, size=int(rng.integers(2, 4)))]
        toks: list[str] = []
        spans: list[tuple[int, int, int]] = []
        if rng.random() < 0.5:
            toks.append(f"cue{c}")
        nested = spec.nesting and (force_nested and k == 0 or rng.random() < 0.4)
        if nested:
            toks.append(f"mod{c}")
            spans.append((len(toks) - 1, len(toks) + len(run) - 1, c))
        spans.append((len(toks), len(toks) + len(run) - 1, c))
        toks.extend(run)
        chunks.append((toks, spans))
    body = sum(len(t) for t, _ in chunks)
    target = int(rng.integers(spec.min_len, spec.max_len + 1))
    n_fill = max(target - body, len(chunks) + 1)
    # one filler between consecutive chunks, the rest spread at random
    gaps = np.ones(len(chunks) + 1, dtype=int)
    gaps[0] = gaps[-1] = 0
    for g in rng.integers(0, len(chunks) + 1, size=n_fill - int(gaps.sum())):
        gaps[g] += 1
    tokens: list[str] = []
    spans: list[Span] = []
    for k, (toks, local) in enumerate(chunks):
        tokens.extend(str(x) for x in rng.choice(fillers, size=gaps[k]))
        offset = len(tokens)
        spans.extend(Span(offset + s, offset + e, names[c]) for s, e, c in local)
        tokens.extend(toks)
    tokens.extend(str(x) for x in rng.choice(fillers, size=gaps[-1]))
    return " ".join(tokens), sorted(spans)


def synth_corpus(spec: SynthSpec, seed: int) -> tuple[dict[str, Corpus], LabelFile]:
    """Deterministic train/dev/test corpora plus their label file."""
    rng = make_rng(seed)
    labels = synth_labels(spec)
    names = labels.categories
    splits: dict[str, Corpus] = {}
    for split, count in (("train", spec.sentences), ("dev", spec.dev_sentences), ("test", spec.test_sentences)):
        records = []
        for i in range(count):
            text, spans = _synth_sentence(rng, spec, names, force_nested=(i == 0))
            records.append(Record(text_id=i, text=text, spans=spans))
        splits[split] = Corpus(records, split)
    vocab = build_vocab(splits.values(), labels)
    for corpus in splits.values():
        corpus.vocab = vocab
    return splits, labels


def few_shot_sample(corpus: Corpus, k: int, seed: int, categories: list[str] | None = None) -> Corpus:
    """Sample k sentences per category (without replacement within a category).

    A sentence picked for several categories appears once; output keeps the
    corpus order.
    """
    if categories is None:
        categories = sorted({s.category for r in corpus for s in r.spans})
    rng = make_rng(seed)
    chosen: set[int] = set()
    for cat in categories:
        pool = [i for i, r in enumerate(corpus.records) if any(s.category == cat for s in r.spans)]
        if len(pool) < k:
            raise InsufficientDataError(f"category {cat!r} has {len(pool)} sentences, {k} requested")
        chosen.update(int(i) for i in rng.choice(pool, size=k, replace=False))
    return Corpus([corpus.records[i] for i in sorted(chosen)], corpus.split, corpus.vocab)
