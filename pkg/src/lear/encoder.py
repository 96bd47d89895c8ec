"""Tokenization and the shared transformer encoder.

One :class:`TransformerEncoder` instance encodes both texts and label
annotations; :meth:`TransformerEncoder.encode_text` and
:meth:`TransformerEncoder.encode_labels` are the same computation applied
to different inputs.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, DegenerateError, ValidationError
from .nn import LayerNorm, Linear, Module, normal
from .tensor import Tensor

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def split_tokens(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: list[str] = [PAD, UNK]
        self._stoi: dict[str, int] = {PAD: PAD_ID, UNK: UNK_ID}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self._stoi:
            self._stoi[token] = len(self._itos)
            self._itos.append(token)
        return self._stoi[token]

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def id(self, token: str) -> int:
        return self._stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self._itos[idx]

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        """Every token seen at least once, in first-occurrence order."""
        vocab = cls()
        for text in texts:
            for tok in split_tokens(text):
                vocab.add(tok)
        return vocab

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self._itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[:2] != [PAD, UNK]:
            raise ValidationError(f"vocab file must start with {PAD} and {UNK}")
        return cls(lines[2:])


@dataclass
class TokenizedText:
    ids: np.ndarray
    mask: np.ndarray
    tokens: list[str]

    def __len__(self) -> int:
        return len(self.tokens)


def tokenize(text: str, vocab: Vocab) -> TokenizedText:
    tokens = split_tokens(text)
    if not tokens:
        raise ContractError("cannot tokenize empty text")
    ids = np.array([vocab.id(t) for t in tokens], dtype=np.int64)
    return TokenizedText(ids=ids, mask=np.ones(len(ids), dtype=bool), tokens=tokens)


def pad_batch(seqs: Sequence[np.ndarray], length: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences with ``PAD_ID``; returns (ids, mask)."""
    length = max(len(s) for s in seqs) if length is None else length
    ids = np.full((len(seqs), length), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), length), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    return ids, mask


@dataclass
class LabelAnnotationSet:
    """Categories in a fixed order with their annotations padded to a common length m."""

    names: list[str]
    ids: np.ndarray
    mask: np.ndarray
    texts: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.names:
            raise ValidationError("a label set needs at least one category")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("category names must be unique")
        if self.ids.shape != self.mask.shape or self.ids.shape[0] != len(self.names):
            raise ValidationError("annotation ids/mask do not match the category list")

    @property
    def num_categories(self) -> int:
        return len(self.names)

    @classmethod
    def from_texts(cls, names: Sequence[str], texts: Sequence[str], vocab: Vocab) -> "LabelAnnotationSet":
        seqs = [tokenize(t, vocab).ids for t in texts]
        ids, mask = pad_batch(seqs)
        return cls(list(names), ids, mask, list(texts))

    def tokens(self, vocab: Vocab) -> list[list[str]]:
        return [[vocab.token(i) for i, ok in zip(row, m) if ok] for row, m in zip(self.ids, self.mask)]


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 0
    max_seq_len: int = 128

    def __post_init__(self):
        if self.d_ff <= 0:
            self.d_ff = 4 * self.d_model
        if self.d_model % self.n_heads:
            raise ContractError("d_model must be divisible by n_heads")


@dataclass
class EncoderOutput:
    hidden: Tensor
    mask: np.ndarray
    truncated: bool = False


class EncoderLayer(Module):
    def __init__(self, rng: np.random.Generator, cfg: EncoderConfig):
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.wq = Linear(rng, d, d)
        self.wk = Linear(rng, d, d)
        self.wv = Linear(rng, d, d)
        self.wo = Linear(rng, d, d)
        self.ln1 = LayerNorm(d)
        self.ff1 = Linear(rng, d, cfg.d_ff)
        self.ff2 = Linear(rng, cfg.d_ff, d)
        self.ln2 = LayerNorm(d)

    def __call__(self, x: Tensor, mask: np.ndarray, dropout: float, rng) -> Tensor:
        b, s, d = x.shape
        h = self.n_heads
        dh = d // h

        def heads(t: Tensor) -> Tensor:
            return T.transpose(T.reshape(t, (b, s, h, dh)), (0, 2, 1, 3))

        q = heads(self.wq(x))
        k = T.transpose(T.reshape(self.wk(x), (b, s, h, dh)), (0, 2, 3, 1))
        v = heads(self.wv(x))
        scores = T.matmul(q, k) * (1.0 / np.sqrt(dh))
        attn = T.softmax(scores, axis=-1, mask=mask[:, None, None, :])
        ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b, s, d))
        x = self.ln1(x + self.wo(ctx))
        ff = T.dropout(self.ff2(T.gelu(self.ff1(x))), dropout, rng)
        return self.ln2(x + ff)


class TransformerEncoder(Module):
    """Token + learned position embeddings followed by post-LN transformer layers."""

    def __init__(self, rng: np.random.Generator, cfg: EncoderConfig):
        self.cfg = cfg
        self.tok_emb = normal(rng, (cfg.vocab_size, cfg.d_model))
        self.pos_emb = normal(rng, (cfg.max_seq_len, cfg.d_model))
        self.emb_ln = LayerNorm(cfg.d_model)
        self.layers = [EncoderLayer(rng, cfg) for _ in range(cfg.n_layers)]

    def __call__(self, ids: np.ndarray, mask: np.ndarray, dropout: float = 0.0,
                 rng: np.random.Generator | None = None) -> EncoderOutput:
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        if ids.ndim != 2 or ids.shape != mask.shape:
            raise ContractError(f"expected (batch, length) ids and mask, got {ids.shape} / {mask.shape}")
        truncated = ids.shape[1] > self.cfg.max_seq_len
        if truncated:
            ids = ids[:, :self.cfg.max_seq_len]
            mask = mask[:, :self.cfg.max_seq_len]
        if not np.all(mask.any(axis=1)):
            raise DegenerateError("cannot encode a sequence with no unpadded token")
        s = ids.shape[1]
        x = T.embedding_lookup(self.tok_emb, ids) + T.getitem(self.pos_emb, slice(0, s))
        x = T.dropout(self.emb_ln(x), dropout, rng)
        for layer in self.layers:
            x = layer(x, mask, dropout, rng)
        return EncoderOutput(hidden=x, mask=mask, truncated=truncated)

    def encode_text(self, ids, mask, dropout: float = 0.0, rng=None) -> EncoderOutput:
        """h_X for a batch of texts: (B, n) ids -> (B, n, d)."""
        T.record_event("encode_text", len(ids))
        return self(ids, mask, dropout, rng)

    def encode_labels(self, labels: LabelAnnotationSet, dropout: float = 0.0, rng=None) -> EncoderOutput:
        """h_Y for every category's annotation: (|C|, m) ids -> (|C|, m, d), same weights as the text branch."""
        T.record_event("encode_labels", labels.num_categories)
        return self(labels.ids, labels.mask, dropout, rng)


def sentence_feature(h: Tensor, mask: np.ndarray) -> Tensor:
    """Masked mean over the sequence axis: (..., m, d) -> (..., d)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != h.shape[:-1]:
        raise ContractError(f"mask {mask.shape} does not match features {h.shape}")
    counts = mask.sum(axis=-1)
    if np.any(counts == 0):
        raise DegenerateError("sentence feature of a fully masked sequence")
    weights = (mask / counts[..., None])[..., None]
    return T.sum(T.mul(h, T.broadcast_to(Tensor(weights), h.shape)), axis=-2)
