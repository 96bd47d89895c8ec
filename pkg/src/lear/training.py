"""Adam with two learning-rate tiers, linear decay, the training loop and gradient checking."""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable, Mapping

import numpy as np

from . import tensor as T
from .data import Corpus, LabelFile, Record, derive_gold
from .errors import ConfigError, DivergenceError, ValidationError
from .loss import GoldBatch, GoldLabels, LossWeights, boundary_loss, match_loss, match_weights, total_loss
from .metrics import EvalReport, evaluate
from .model import LearModel, ModelConfig
from .tensor import Tensor

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    lr_encoder: float = 1e-3
    lr_task: float = 1e-3
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    alpha: float = 1.0
    beta: float = 1.0
    mode: str = "flat"
    decode: str = ""
    dropout: float = 0.1
    warmup_frac: float = 0.0
    threshold: float = 0.5
    target_f1: float | None = None  # stop early once the eval F1 reaches this value

    def __post_init__(self):
        if self.mode not in ("flat", "nested"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not self.decode:
            self.decode = "nested" if self.mode == "nested" else "heuristic"
        if self.mode == "nested" and self.decode != "nested":
            raise ConfigError("nested mode decodes with the pair classifier (decode = nested)")
        if self.mode == "flat" and self.decode not in ("heuristic", "nearest"):
            raise ConfigError(f"flat mode decodes with heuristic or nearest, not {self.decode!r}")
        if self.lr_encoder < 0 or self.lr_task < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError("warmup_frac must lie in [0, 1)")
        if self.alpha < 0 or self.beta < 0 or self.alpha == self.beta == 0:
            raise ConfigError("alpha and beta must be non-negative and not both zero")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta)


# ---------------------------------------------------------------------------
# config files


def _coerce(raw: str, kind):
    kind = str(kind)
    if "bool" in kind:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)
    if "float" in kind:
        return None if raw.lower() == "none" else float(raw)
    if "int" in kind:
        return int(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> tuple[ModelConfig, TrainConfig]:
    """Read ``key = value`` lines (``#`` starts a comment) into model and training configs.

    ``mode`` is shared by both.  Unknown or repeated keys are errors.
    """
    model_fields = {f.name: f.type for f in fields(ModelConfig)}
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    model_kw: dict = {}
    train_kw: dict = {}
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        if key not in model_fields and key not in train_fields:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            if key in train_fields:
                train_kw[key] = _coerce(raw, train_fields[key])
            if key in model_fields:
                model_kw[key] = _coerce(raw, model_fields[key])
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value {raw!r} for {key!r}") from None
    try:
        return ModelConfig(**model_kw), TrainConfig(**train_kw)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, p: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(p), np.zeros_like(p))


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter values and advances ``state``."""
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * grad
    state.v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = state.m / (1 - beta1**state.t)
    v_hat = state.v / (1 - beta2**state.t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over named parameters; names under ``encoder.`` use the encoder rate."""

    def __init__(self, named_params: Iterable[tuple[str, Tensor]]):
        self.params = list(named_params)
        self.state = {name: AdamState.zeros_like(p.data) for name, p in self.params}

    def step(self, lr_encoder: float, lr_task: float) -> None:
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient in {name}")
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            lr = lr_encoder if name.startswith("encoder.") else lr_task
            p.assign(adam_step(p.data, g, self.state[name], lr))


def lr_schedule(step: int, total_steps: int, base_lr: float) -> float:
    """Linear decay from ``base_lr`` at step 0 to 0 at ``total_steps``; clamped at 0 beyond."""
    if total_steps <= 0:
        return 0.0
    return base_lr * max(0.0, 1.0 - step / total_steps)


def scheduled_lr(step: int, total_steps: int, base_lr: float, warmup_frac: float = 0.0) -> float:
    warmup = int(warmup_frac * total_steps)
    if step < warmup:
        return base_lr * (step + 1) / warmup
    return lr_schedule(step - warmup, total_steps - warmup, base_lr)


# ---------------------------------------------------------------------------
# training loop


def seed_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent (init, shuffle, dropout) PCG64 streams derived from one seed."""
    children = np.random.SeedSequence(int(seed)).spawn(3)
    return tuple(np.random.Generator(np.random.PCG64(c)) for c in children)


def build_model(model_cfg: ModelConfig, corpus: Corpus, labels: LabelFile, seed: int) -> LearModel:
    if corpus.vocab is None:
        raise ValidationError("corpus has no vocabulary")
    return LearModel(model_cfg, corpus.vocab, labels, seed_streams(seed)[0])


@dataclass
class EpochMetrics:
    epoch: int
    precision: float
    recall: float
    f1: float
    loss: float


@dataclass
class TrainResult:
    model: LearModel
    history: list[EpochMetrics]
    best_epoch: int
    best_f1: float
    checkpoint: bytes
    step_log: list[str] = field(default_factory=list)

    def metrics_csv(self) -> str:
        out = io.StringIO()
        out.write("epoch,precision,recall,f1,loss\n")
        for h in self.history:
            out.write(f"{h.epoch},{h.precision!r},{h.recall!r},{h.f1!r},{h.loss!r}\n")
        return out.getvalue()


def _check_corpus(corpus: Corpus, categories: list[str], what: str) -> None:
    if len(corpus) == 0:
        raise ValidationError(f"{what} corpus is empty")
    known = set(categories)
    for r in corpus:
        for s in r.spans:
            if s.category not in known:
                raise ValidationError(f"{what} corpus uses category {s.category!r}, absent from the label file")


@dataclass
class _Example:
    ids: np.ndarray
    gold: GoldLabels


def _examples(model: LearModel, corpus: Corpus, mode: str) -> list[_Example]:
    limit = model.cfg.max_seq_len
    out = []
    for r in corpus:
        ids = np.array([model.vocab.id(t) for t in r.tokens[:limit]], dtype=np.int64)
        kept = Record(r.text_id, r.text, [s for s in r.spans if s.end < limit], r.tokens[:limit])
        if len(kept.spans) < len(r.spans):
            log.warning("text %r truncated to %d tokens; spans beyond were dropped", r.text_id, limit)
        out.append(_Example(ids, derive_gold(kept, model.categories, mode)))
    return out


def batch_loss(model: LearModel, batch: list[_Example], mode: str, weights: LossWeights,
               dropout: float = 0.0, rng=None, fixed_match_weights: np.ndarray | None = None):
    """Forward one batch; returns (total, L_s, L_e, L_match or None, pair probabilities or None, gold)."""
    from .encoder import pad_batch

    ids, mask = pad_batch([ex.ids for ex in batch])
    gold = GoldBatch.stack([ex.gold for ex in batch], ids.shape[1])
    out = model.forward(ids, mask, dropout, rng, with_pairs=(mode == "nested"))
    l_s, l_e = boundary_loss(out.boundary, gold)
    l_match = None
    if mode == "nested":
        l_match = match_loss(out.pairs, gold, model.cfg.max_span_len, fixed_match_weights)
    total = total_loss(mode, l_s, l_e, l_match, weights)
    return total, l_s, l_e, l_match, (out.pairs.data if out.pairs is not None else None), gold


def predict_corpus(model: LearModel, corpus: Corpus, decode: str, threshold: float = 0.5,
                   batch_size: int = 32) -> dict:
    cache = model.build_label_cache()
    preds = {}
    records = list(corpus)
    for i in range(0, len(records), batch_size):
        chunk = records[i:i + batch_size]
        ids = [np.array([model.vocab.id(t) for t in r.tokens], dtype=np.int64) for r in chunk]
        spans, _ = model.predict_tokens(ids, decode, threshold, cache)
        for r, s in zip(chunk, spans):
            preds[r.text_id] = s
    return preds


def evaluate_model(model: LearModel, corpus: Corpus, decode: str, threshold: float = 0.5) -> EvalReport:
    preds = predict_corpus(model, corpus, decode, threshold)
    return evaluate(preds, {r.text_id: r.spans for r in corpus})


def train(model: LearModel, corpus: Corpus, config: TrainConfig, dev: Corpus | None = None,
          on_epoch: Callable[[EpochMetrics], None] | None = None) -> TrainResult:
    """Train in place and return the per-epoch history plus the best-dev-F1 checkpoint bytes.

    Without a dev split the training corpus is evaluated each epoch.
    """
    if config.mode != model.cfg.mode:
        raise ConfigError(f"training mode {config.mode!r} does not match model mode {model.cfg.mode!r}")
    _check_corpus(corpus, model.categories, "training")
    dev = dev if dev is not None else corpus
    _check_corpus(dev, model.categories, "dev")
    _, shuffle_rng, dropout_rng = seed_streams(config.seed)
    examples = _examples(model, corpus, config.mode)
    weights = config.loss_weights
    optimizer = Adam(model.named_parameters())
    n_batches = -(-len(examples) // config.batch_size)
    total_steps = config.epochs * n_batches
    step = 0
    history: list[EpochMetrics] = []
    step_log: list[str] = []
    best_f1, best_epoch, best_bytes = -1.0, 0, b""
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(examples))
        loss_sum = 0.0
        for k in range(n_batches):
            batch = [examples[i] for i in order[k * config.batch_size:(k + 1) * config.batch_size]]
            lr_enc = scheduled_lr(step, total_steps, config.lr_encoder, config.warmup_frac)
            lr_task = scheduled_lr(step, total_steps, config.lr_task, config.warmup_frac)
            model.zero_grad()
            loss, l_s, l_e, l_match, _, _ = batch_loss(model, batch, config.mode, weights,
                                                       config.dropout, dropout_rng)
            if not np.isfinite(loss.item()):
                raise DivergenceError(f"loss became non-finite at step {step}")
            T.backward(loss)
            optimizer.step(lr_enc, lr_task)
            lm = l_match.item() if l_match is not None else 0.0
            step_log.append(f"{step}\t{lr_task!r}\t{l_s.item()!r}\t{l_e.item()!r}\t{lm!r}\t{loss.item()!r}")
            loss_sum += loss.item() * len(batch)
            step += 1
        report = evaluate_model(model, dev, config.decode, config.threshold)
        record = EpochMetrics(epoch, report.precision, report.recall, report.f1, loss_sum / len(examples))
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if report.f1 > best_f1:
            best_f1, best_epoch, best_bytes = report.f1, epoch, model.to_bytes()
        if config.target_f1 is not None and report.f1 >= config.target_f1:
            break
    return TrainResult(model, history, best_epoch, best_f1, best_bytes, step_log)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class TensorCheck:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradcheckReport:
    checks: list[TensorCheck]
    tol: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)

    def format(self) -> str:
        width = max((len(c.name) for c in self.checks), default=4)
        lines = [f"{c.name.ljust(width)}  {c.max_rel_error:.3e}  {'ok' if c.passed else 'FAIL'}" for c in self.checks]
        lines.append(f"{'overall'.ljust(width)}  {self.max_rel_error:.3e}  {'ok' if self.passed else 'FAIL'}"
                     f"  (tol {self.tol:g})")
        return "\n".join(lines)


# Relative error is |a - n| / max(|a|, |n|, REL_FLOOR).  At h=1e-5 one ulp of a
# loss near 2 already moves a central difference by about 4e-11, and entries
# with a true derivative of exactly 0 (a key bias under softmax) see only that
# noise.  Below the floor the comparison is therefore absolute.
REL_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradcheck(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor] | Iterable[tuple[str, Tensor]],
              h: float = 1e-5, tol: float = 1e-4, floor: float = REL_FLOOR) -> GradcheckReport:
    """Compare backprop gradients with central finite differences for every entry of every tensor."""
    named = list(params.items()) if isinstance(params, Mapping) else list(params)
    for _, p in named:
        p.grad = None
    loss = loss_fn()
    if not np.isfinite(loss.item()):
        raise DivergenceError("gradcheck loss is not finite")
    T.backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in named}
    checks = []
    with T.no_grad():
        for name, p in named:
            numeric = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            out = numeric.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = loss_fn().item()
                flat[k] = orig - h
                down = loss_fn().item()
                flat[k] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise DivergenceError(f"gradcheck loss is not finite while perturbing {name}")
                out[k] = (up - down) / (2 * h)
            err = float(relative_error(analytic[name], numeric, floor).max()) if numeric.size else 0.0
            checks.append(TensorCheck(name, err, err < tol))
    return GradcheckReport(checks, tol)


def tiny_nested_instance(seed: int, n: int = 6, num_categories: int = 3, m: int = 4, d: int = 8):
    """A small nested-mode model plus one text with nested gold spans.

    Returns (model, batch) where ``batch`` is a one-element example list.
    """
    from .data import Span

    rng = np.random.default_rng(seed)
    words = [f"t{k}" for k in range(12)]
    names = [f"cat{c}" for c in range(num_categories)]
    annotations = [" ".join(str(w) for w in rng.choice(words, size=m)) for _ in names]
    text = " ".join(str(w) for w in rng.choice(words, size=n))
    from .encoder import Vocab

    vocab = Vocab.build([text, *annotations])
    labels = LabelFile(names, annotations)
    cfg = ModelConfig(d_model=d, n_layers=2, n_heads=2, d_ff=2 * d, max_seq_len=n, mode="nested",
                      max_span_len=n)
    model = LearModel(cfg, vocab, labels, seed_streams(seed)[0])
    spans = [Span(0, 3, names[0]), Span(1, 2, names[0]), Span(2, 4, names[1 % num_categories]),
             Span(5, 5, names[-1])]
    record = Record(0, text, spans)
    return model, _examples(model, Corpus([record]), "nested")


def gradcheck_model(seed: int = 0, h: float = 1e-5, tol: float = 1e-4) -> GradcheckReport:
    """Finite-difference check of the full nested loss (boundary + match) on a tiny instance.

    The match-loss gate W is computed once at the unperturbed point and held
    fixed, matching its treatment as a constant during backprop.
    """
    model, batch = tiny_nested_instance(seed)
    weights = LossWeights()
    _, _, _, _, probs, gold = batch_loss(model, batch, "nested", weights)
    gate = match_weights(probs, gold, model.cfg.max_span_len)

    def loss_fn() -> Tensor:
        return batch_loss(model, batch, "nested", weights, fixed_match_weights=gate)[0]

    return gradcheck(loss_fn, model.named_parameters(), h, tol)
