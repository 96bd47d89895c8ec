"""Cost comparison of three ways to feed categories to a span extractor.

* traditional  encoder(text) followed by 2|C| boundary classifiers; labels unused
* qa           one joint pass per category over annotation + <sep> + text
* lear         encoder(text) plus fusion with label encodings cached once

All three share the same encoder hyperparameters.  Cost is the number of
multiply-accumulates executed by the instrumented tensor ops
(:func:`lear.tensor.count_ops`), which is exact and deterministic; wall
time is recorded for information only.

Analytic cost model (per text, inference, MACs) for an encoder with L
layers, width d and feed-forward width 4d::

    enc(s)       = L (12 s d^2 + 2 s^2 d)
    traditional  = enc(n) + 2 n d |C|
    qa           = |C| (enc(n + m + 1) + 2 n d)
    lear         = enc(n) + 2 n d^2 + |C| (2 n m d + 2 n d)

The s^2 terms are the quadratic complexities usually quoted for these
paradigms (n^2, |C|(n+m)^2 and n^2 + |C| m n); the s d^2 terms are the
projections and feed-forward blocks that the quadratic model leaves out.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import LabelFile
from .decoding import decode_flat
from .encoder import EncoderConfig, TransformerEncoder, Vocab
from .errors import ConfigError
from .loss import GoldBatch, GoldLabels, boundary_loss
from .model import LearModel, ModelConfig
from .nn import Module, xavier_uniform, zeros
from .scoring import BoundaryScores
from .tensor import Tensor

PARADIGMS = ("traditional", "qa", "lear")
PHASES = ("inference", "train-epoch")
SEP = "<sep>"


@dataclass
class BenchConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 0
    n: int = 64
    m: int = 16
    vocab_words: int = 100
    texts: int = 2
    seed: int = 0

    @property
    def ff(self) -> int:
        return self.d_ff or 4 * self.d_model


@dataclass
class CostRecord:
    paradigm: str
    num_categories: int
    n: int
    m: int
    phase: str
    wall_seconds: float
    op_count: int


def bench_vocab(cfg: BenchConfig) -> Vocab:
    return Vocab([SEP, *(f"w{k}" for k in range(cfg.vocab_words))])


def bench_labels(rng: np.random.Generator, num_categories: int, m: int, cfg: BenchConfig) -> LabelFile:
    """Annotations of exactly m tokens each."""
    annotations = [" ".join(f"w{int(k)}" for k in rng.integers(0, cfg.vocab_words, size=m))
                   for _ in range(num_categories)]
    return LabelFile([f"c{k}" for k in range(num_categories)], annotations)


def bench_texts(rng: np.random.Generator, vocab: Vocab, cfg: BenchConfig) -> np.ndarray:
    first = vocab.id("w0")
    return rng.integers(first, first + cfg.vocab_words, size=(cfg.texts, cfg.n))


def _encoder_config(cfg: BenchConfig, vocab: Vocab) -> EncoderConfig:
    return EncoderConfig(vocab_size=len(vocab), d_model=cfg.d_model, n_layers=cfg.n_layers,
                         n_heads=cfg.n_heads, d_ff=cfg.ff, max_seq_len=cfg.n + cfg.m + 1)


def _sigmoid_heads(h: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.sigmoid(T.matmul(h, w) + b)


class TraditionalPipeline(Module):
    """Encoder plus two fully connected layers d -> |C| (start and end)."""

    paradigm = "traditional"

    def __init__(self, rng, cfg: BenchConfig, vocab: Vocab, labels: LabelFile):
        c = len(labels.categories)
        self.categories = list(labels.categories)
        self.encoder = TransformerEncoder(rng, _encoder_config(cfg, vocab))
        self.w_start = xavier_uniform(rng, cfg.d_model, c)
        self.b_start = zeros((c,))
        self.w_end = xavier_uniform(rng, cfg.d_model, c)
        self.b_end = zeros((c,))

    def prepare(self) -> None:
        pass

    def scores(self, ids: np.ndarray) -> BoundaryScores:
        h = self.encoder.encode_text(ids, np.ones(ids.shape, dtype=bool)).hidden
        return BoundaryScores(_sigmoid_heads(h, self.w_start, self.b_start), _sigmoid_heads(h, self.w_end, self.b_end))


class QAPipeline(Module):
    """For each category, encode annotation + <sep> + text jointly; classifiers d -> 1 read the text region."""

    paradigm = "qa"

    def __init__(self, rng, cfg: BenchConfig, vocab: Vocab, labels: LabelFile):
        self.categories = list(labels.categories)
        self.label_set = labels.label_set(vocab)
        self.sep_id = vocab.id(SEP)
        self.encoder = TransformerEncoder(rng, _encoder_config(cfg, vocab))
        self.w_start = xavier_uniform(rng, cfg.d_model, 1)
        self.b_start = zeros((1,))
        self.w_end = xavier_uniform(rng, cfg.d_model, 1)
        self.b_end = zeros((1,))

    def prepare(self) -> None:
        pass

    def _joint(self, text: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
        c, m = self.label_set.ids.shape
        n = len(text)
        ids = np.concatenate([self.label_set.ids, np.full((c, 1), self.sep_id), np.tile(text, (c, 1))], axis=1)
        mask = np.concatenate([self.label_set.mask, np.ones((c, 1 + n), dtype=bool)], axis=1)
        return ids, mask, m + 1

    def scores(self, ids: np.ndarray) -> BoundaryScores:
        starts, ends = [], []
        for text in ids:
            joint, mask, offset = self._joint(text)
            h = self.encoder.encode_text(joint, mask).hidden                  # (C, m+1+n, d)
            region = T.getitem(h, (slice(None), slice(offset, None)))          # (C, n, d)
            s = T.reshape(_sigmoid_heads(region, self.w_start, self.b_start), region.shape[:2])
            e = T.reshape(_sigmoid_heads(region, self.w_end, self.b_end), region.shape[:2])
            starts.append(T.transpose(s))                                      # (n, C)
            ends.append(T.transpose(e))
        n = ids.shape[1]
        c = len(self.categories)

        def stack(parts):
            return T.concat([T.reshape(p, (1, n, c)) for p in parts], axis=0)

        return BoundaryScores(stack(starts), stack(ends))


class LearPipeline:
    """The full model; label representations are cached once before inference."""

    paradigm = "lear"

    def __init__(self, rng, cfg: BenchConfig, vocab: Vocab, labels: LabelFile):
        mcfg = ModelConfig(d_model=cfg.d_model, n_layers=cfg.n_layers, n_heads=cfg.n_heads, d_ff=cfg.ff,
                           max_seq_len=cfg.n + cfg.m + 1)
        self.model = LearModel(mcfg, vocab, labels, rng)
        self.categories = self.model.categories
        self.cache = None
        self.training = False

    def prepare(self) -> None:
        self.cache = self.model.build_label_cache()

    def parameters(self):
        return self.model.parameters()

    def zero_grad(self):
        self.model.zero_grad()

    def scores(self, ids: np.ndarray) -> BoundaryScores:
        side = None if self.training or self.cache is None else self.cache.get(self.model)
        return self.model.forward(ids, np.ones(ids.shape, dtype=bool), side=side).boundary


_PIPELINES = {"traditional": TraditionalPipeline, "qa": QAPipeline, "lear": LearPipeline}


def build_pipeline(paradigm: str, num_categories: int = 3, cfg: BenchConfig | None = None,
                   labels: LabelFile | None = None):
    if paradigm not in _PIPELINES:
        raise ConfigError(f"unknown paradigm {paradigm!r}; expected one of {PARADIGMS}")
    cfg = cfg or BenchConfig()
    rng = T.make_rng(cfg.seed)
    vocab = bench_vocab(cfg)
    labels = labels or bench_labels(rng, num_categories, cfg.m, cfg)
    return _PIPELINES[paradigm](rng, cfg, vocab, labels)


def run_inference(pipeline, ids: np.ndarray) -> list:
    with T.no_grad():
        scores = pipeline.scores(ids)
    start, end = scores.start.data, scores.end.data
    return [decode_flat(start[b], end[b], pipeline.categories) for b in range(len(ids))]


def run_train_epoch(pipeline, ids: np.ndarray, rng: np.random.Generator) -> float:
    """Forward and backward over every text, one text per step (optimizer arithmetic is not counted)."""
    c = len(pipeline.categories)
    total = 0.0
    if isinstance(pipeline, LearPipeline):
        pipeline.training = True
    try:
        for text in ids:
            n = len(text)
            gold = GoldLabels((rng.random((n, c)) < 0.1).astype(float), (rng.random((n, c)) < 0.1).astype(float),
                              None)
            batch = GoldBatch.stack([gold])
            pipeline.zero_grad()
            l_s, l_e = boundary_loss(pipeline.scores(text[None]), batch)
            loss = l_s + l_e
            T.backward(loss)
            total += loss.item()
    finally:
        if isinstance(pipeline, LearPipeline):
            pipeline.training = False
    return total


def measure(paradigm: str, num_categories: int, phase: str, cfg: BenchConfig) -> tuple[CostRecord, dict]:
    """Build, warm up and run one configuration; returns the record and the event counts."""
    if phase not in PHASES:
        raise ConfigError(f"unknown phase {phase!r}")
    pipeline = build_pipeline(paradigm, num_categories, cfg)
    data_rng = T.make_rng(cfg.seed + 1)
    ids = bench_texts(data_rng, bench_vocab(cfg), cfg)
    if phase == "inference":
        pipeline.prepare()
    t0 = time.perf_counter()
    with T.count_ops() as counter:
        if phase == "inference":
            run_inference(pipeline, ids)
        else:
            run_train_epoch(pipeline, ids, data_rng)
    wall = time.perf_counter() - t0
    record = CostRecord(paradigm, num_categories, cfg.n, cfg.m, phase, wall, counter.macs)
    return record, dict(counter.events)


def encoder_macs(s: int, cfg: BenchConfig) -> int:
    d = cfg.d_model
    return cfg.n_layers * (4 * s * d * d + 2 * s * d * cfg.ff + 2 * s * s * d)


def analytic_op_count(paradigm: str, num_categories: int, n: int, m: int, cfg: BenchConfig | None = None) -> int:
    """Per-text inference MACs predicted by the cost model in the module docstring."""
    cfg = cfg or BenchConfig()
    d, c = cfg.d_model, num_categories
    if paradigm == "traditional":
        return encoder_macs(n, cfg) + 2 * n * d * c
    if paradigm == "qa":
        return c * (encoder_macs(n + m + 1, cfg) + 2 * n * d)
    if paradigm == "lear":
        return encoder_macs(n, cfg) + 2 * n * d * d + c * (2 * n * m * d + 2 * n * d)
    raise ConfigError(f"unknown paradigm {paradigm!r}")


def quadratic_ratio(num_categories: int, n: int, m: int) -> float:
    """The pure quadratic qa/traditional ratio |C|(n+m)^2 / n^2 (projection terms ignored)."""
    return num_categories * (n + m) ** 2 / n**2


def run_sweep(paradigms: Sequence[str] = PARADIGMS, categories: Sequence[int] = (3, 7, 33),
              phases: Sequence[str] = ("inference",), cfg: BenchConfig | None = None) -> list[CostRecord]:
    """Sequential runs over the grid; timings never overlap."""
    cfg = cfg or BenchConfig()
    for p in paradigms:
        if p not in _PIPELINES:
            raise ConfigError(f"unknown paradigm {p!r}; expected one of {PARADIGMS}")
    records = []
    for phase in phases:
        for c in categories:
            for p in paradigms:
                records.append(measure(p, c, phase, cfg)[0])
    return records


def relative_costs(records: Sequence[CostRecord]) -> dict[tuple[str, str, int], float]:
    """op_count / op_count(traditional) for matching (phase, |C|, n, m)."""
    base = {(r.phase, r.num_categories, r.n, r.m): r.op_count for r in records if r.paradigm == "traditional"}
    out = {}
    for r in records:
        key = (r.phase, r.num_categories, r.n, r.m)
        if key in base:
            out[(r.paradigm, r.phase, r.num_categories)] = r.op_count / base[key]
    return out


def _features(paradigm: str, c: int, n: int, m: int) -> list[float]:
    if paradigm == "traditional":
        return [n * n, n, c * n]
    if paradigm == "qa":
        s = n + m + 1
        return [c * s * s, c * s, c * n]
    return [n * n, n, c * m * n, c * n]


@dataclass
class FitResult:
    paradigm: str
    coefficients: list[float]
    max_relative_residual: float
    full_rank: bool  # False when the grid cannot separate the terms (e.g. only |C| varies)


def fit_complexity(records: Sequence[CostRecord], texts: int = 1, phase: str = "inference") -> list[FitResult]:
    """Least-squares fit of per-text op counts against each paradigm's complexity terms."""
    out = []
    for p in PARADIGMS:
        rows = [r for r in records if r.paradigm == p and r.phase == phase]
        if not rows:
            continue
        x = np.array([_features(p, r.num_categories, r.n, r.m) for r in rows], dtype=np.float64)
        y = np.array([r.op_count / texts for r in rows], dtype=np.float64)
        coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
        resid = np.abs(x @ coef - y) / y
        out.append(FitResult(p, [float(v) for v in coef], float(resid.max()), int(rank) == x.shape[1]))
    return out


def records_csv(records: Sequence[CostRecord]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([f.name for f in fields(CostRecord)])
    for r in records:
        writer.writerow(list(asdict(r).values()))
    return out.getvalue()


def format_report(records: Sequence[CostRecord], cfg: BenchConfig | None = None) -> str:
    cfg = cfg or BenchConfig()
    rel = relative_costs(records)
    lines = ["paradigm     phase        |C|   op_count        relative  analytic  wall_s"]
    for r in records:
        ratio = rel.get((r.paradigm, r.phase, r.num_categories))
        analytic = ""
        if r.phase == "inference":
            predicted = (analytic_op_count(r.paradigm, r.num_categories, r.n, r.m, cfg)
                         / analytic_op_count("traditional", r.num_categories, r.n, r.m, cfg))
            analytic = f"{predicted:8.2f}x"
        lines.append(f"{r.paradigm:<12} {r.phase:<12} {r.num_categories:>3}  {r.op_count:>14,d}  "
                     f"{(f'{ratio:8.2f}x' if ratio is not None else '        -'):>9}  {analytic:>9}  "
                     f"{r.wall_seconds:7.3f}")
    inference = [r for r in records if r.phase == "inference"]
    if inference:
        lines.append("")
        lines.append("qa/traditional against the pure quadratic model |C|(n+m)^2/n^2:")
        for r in inference:
            if r.paradigm == "qa" and rel.get(("qa", "inference", r.num_categories)) is not None:
                measured = rel[("qa", "inference", r.num_categories)]
                quad = quadratic_ratio(r.num_categories, r.n, r.m)
                lines.append(f"  |C|={r.num_categories:<3} measured {measured:7.2f}x  quadratic {quad:7.2f}x  "
                             f"residual {measured / quad - 1:+.1%}")
        fits = [f for f in fit_complexity(inference, texts=cfg.texts) if f.full_rank]
        if fits:
            lines.append("least-squares fit of per-text op counts on complexity terms:")
            for f in fits:
                coef = ", ".join(f"{c:.4g}" for c in f.coefficients)
                lines.append(f"  {f.paradigm:<12} coef [{coef}]  max residual {f.max_relative_residual:.2e}")
    return "\n".join(lines)
