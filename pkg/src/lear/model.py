"""The assembled span extractor: shared encoder, fusion, boundary and pair heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import serialization
from . import tensor as T
from .data import LabelFile
from .decoding import SpanPrediction, decode_flat, nested_decode
from .encoder import EncoderConfig, TokenizedText, TransformerEncoder, Vocab, pad_batch, tokenize
from .errors import ConfigError, StaleCacheError
from .fusion import FUSION_MODES, FusedRepresentation, FusionParams, LabelSide, fuse_with_labels, prepare_labels
from .nn import Module, normal
from .scoring import BoundaryScores, ScoringParams, pair_matrix, score_pairs
from .tensor import Tensor

LABEL_SOURCES = ("annotation", "name")
LABEL_ENCODERS = ("shared", "static-embedding")
MODES = ("flat", "nested")


@dataclass
class ModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 0
    max_seq_len: int = 128
    mode: str = "flat"
    max_span_len: int = 32
    fusion_mode: str = "token-attention"
    label_source: str = "annotation"
    label_encoder: str = "shared"
    pair_per_category: bool = False
    attention_scale: bool = False

    def __post_init__(self):
        for name, value, allowed in (("mode", self.mode, MODES),
                                     ("fusion_mode", self.fusion_mode, FUSION_MODES),
                                     ("label_source", self.label_source, LABEL_SOURCES),
                                     ("label_encoder", self.label_encoder, LABEL_ENCODERS)):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        if self.max_span_len < 1:
            raise ConfigError("max_span_len must be positive")


@dataclass
class ModelOutput:
    boundary: BoundaryScores
    fused: FusedRepresentation
    pairs: Tensor | None
    truncated: bool


@dataclass
class LabelCache:
    """Label-side representations computed once and reused for every text."""

    embeddings: Tensor  # h_Y (C, m, d)
    side: LabelSide
    version: int

    def get(self, model: "LearModel") -> LabelSide:
        if model.param_version() != self.version:
            raise StaleCacheError("label cache is stale: parameters changed after it was built")
        return self.side


class LearModel(Module):
    def __init__(self, cfg: ModelConfig, vocab: Vocab, labels: LabelFile, rng: np.random.Generator):
        self.cfg = cfg
        self.vocab = vocab
        self.labels = labels
        self.label_set = labels.label_set(vocab, cfg.label_source)
        enc_cfg = EncoderConfig(vocab_size=len(vocab), d_model=cfg.d_model, n_layers=cfg.n_layers,
                                n_heads=cfg.n_heads, d_ff=cfg.d_ff, max_seq_len=cfg.max_seq_len)
        self.encoder = TransformerEncoder(rng, enc_cfg)
        self.label_embedding = (normal(rng, (len(vocab), cfg.d_model))
                                if cfg.label_encoder == "static-embedding" else None)
        self.fusion = FusionParams(rng, cfg.d_model)
        self.scoring = ScoringParams(rng, self.label_set.num_categories, cfg.d_model, cfg.pair_per_category)

    @property
    def categories(self) -> list[str]:
        return self.label_set.names

    # -- forward ---------------------------------------------------------

    def label_embeddings(self, dropout: float = 0.0, rng=None) -> Tensor:
        if self.label_embedding is not None:
            T.record_event("label_table_lookup", self.label_set.num_categories)
            return T.embedding_lookup(self.label_embedding, self.label_set.ids)
        return self.encoder.encode_labels(self.label_set, dropout, rng).hidden

    def label_side(self, dropout: float = 0.0, rng=None, h_Y: Tensor | None = None) -> LabelSide:
        h_Y = self.label_embeddings(dropout, rng) if h_Y is None else h_Y
        return prepare_labels(h_Y, self.label_set.mask, self.fusion, self.cfg.fusion_mode)

    def build_label_cache(self) -> LabelCache:
        with T.no_grad():
            h_Y = self.label_embeddings()
            side = self.label_side(h_Y=h_Y)
        return LabelCache(embeddings=h_Y, side=side, version=self.param_version())

    def forward(self, ids: np.ndarray, mask: np.ndarray, dropout: float = 0.0, rng=None,
                side: LabelSide | None = None, with_pairs: bool = False,
                keep_attention: bool = False) -> ModelOutput:
        enc = self.encoder.encode_text(ids, mask, dropout, rng)
        if side is None:
            side = self.label_side(dropout, rng)
        fused = fuse_with_labels(enc.hidden, side, self.fusion, self.cfg.fusion_mode,
                                 self.cfg.attention_scale, keep_attention)
        boundary = self._boundary(fused.h_hat)
        pairs = pair_matrix(fused.h_hat, self.scoring) if with_pairs else None
        return ModelOutput(boundary, fused, pairs, enc.truncated)

    def _boundary(self, h_hat: Tensor) -> BoundaryScores:
        from .scoring import score_boundaries
        return score_boundaries(h_hat, self.scoring)

    # -- inference -------------------------------------------------------

    def tokenize(self, text: str) -> TokenizedText:
        return tokenize(text, self.vocab)

    def predict_tokens(self, token_ids: Sequence[np.ndarray], decode: str | None = None,
                       threshold: float = 0.5, cache: LabelCache | None = None,
                       keep_scores: bool = False, keep_attention: bool = False):
        """Decode a batch of id sequences.

        Returns ``(spans_per_text, extras)`` where ``extras`` holds boundary
        probabilities (and attention weights) per text when requested.
        """
        decode = decode or ("nested" if self.cfg.mode == "nested" else "heuristic")
        if decode == "nested" and self.cfg.mode != "nested":
            raise ConfigError("nested decoding needs a model trained in nested mode")
        seqs = [np.asarray(s)[:self.cfg.max_seq_len] for s in token_ids]
        ids, mask = pad_batch(seqs)
        with T.no_grad():
            side = cache.get(self) if cache is not None else self.label_side()
            out = self.forward(ids, mask, side=side, keep_attention=keep_attention)
            start = out.boundary.start.data
            end = out.boundary.end.data
            h_hat = out.fused.h_hat
            results: list[list[SpanPrediction]] = []
            extras: list[dict] = []
            for b, seq in enumerate(seqs):
                n = len(seq)
                s_b, e_b = start[b, :n], end[b, :n]
                if decode == "nested":
                    h_b = T.getitem(h_hat, b)

                    def scorer(c, pairs, h_b=h_b):
                        return score_pairs(T.getitem(h_b, (slice(None), c)), self.scoring, c, pairs,
                                           self.cfg.max_span_len).data

                    spans = nested_decode(s_b, e_b, scorer, self.categories, threshold, self.cfg.max_span_len)
                else:
                    spans = decode_flat(s_b, e_b, self.categories, decode, threshold)
                results.append(spans)
                extra: dict = {}
                if keep_scores:
                    extra["start"], extra["end"] = s_b, e_b
                if keep_attention:
                    extra["attention"] = out.fused.attention[b, :n]
                extras.append(extra)
        return results, extras

    def predict_texts(self, texts: Sequence[str], decode: str | None = None, threshold: float = 0.5,
                      cache: LabelCache | None = None, batch_size: int = 32) -> list[list[SpanPrediction]]:
        ids = [self.tokenize(t).ids for t in texts]
        out: list[list[SpanPrediction]] = []
        for i in range(0, len(ids), batch_size):
            out.extend(self.predict_tokens(ids[i:i + batch_size], decode, threshold, cache)[0])
        return out

    # -- persistence -----------------------------------------------------

    def metadata(self) -> dict:
        return {"model": asdict(self.cfg), "vocab": self.vocab.tokens[2:],
                "categories": self.labels.categories, "annotations": self.labels.annotations}

    def save(self, path) -> None:
        serialization.save(path, self.state_dict(), self.metadata())

    def to_bytes(self) -> bytes:
        return serialization.dumps(self.state_dict(), self.metadata())

    @classmethod
    def from_metadata(cls, meta: dict, seed: int = 0) -> "LearModel":
        known = {f.name for f in fields(ModelConfig)}
        cfg = ModelConfig(**{k: v for k, v in meta["model"].items() if k in known})
        labels = LabelFile(list(meta["categories"]), list(meta["annotations"]))
        return cls(cfg, Vocab(meta["vocab"]), labels, T.make_rng(seed))

    @classmethod
    def load(cls, path) -> "LearModel":
        params, meta = serialization.load(path)
        model = cls.from_metadata(meta)
        model.load_state_dict(params)
        return model
