"""Semantics-guided fusion of label annotations into token representations.

Shapes used throughout (B = batch of texts, C = categories)::

    h_X        (B, n, d)     text token embeddings
    h_Y        (C, m, d)     annotation token embeddings
    attention  (B, C, n, m)  per-token weights over each annotation
    h_hat      (B, n, C, d)  category-aware token embeddings

Projections follow the column-vector convention ``h' = U @ h``, i.e. rows
are multiplied by ``U.T``.  No bias enters the projections, and attention
logits are plain dot products unless ``attention_scale`` is set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import sentence_feature
from .errors import ConfigError, ShapeError
from .nn import Module, xavier_uniform, zeros
from .tensor import Tensor

FUSION_MODES = ("token-attention", "average-pooling-add", "sentence-similarity")


class FusionParams(Module):
    def __init__(self, rng: np.random.Generator, d: int):
        self.U1 = xavier_uniform(rng, d, d)
        self.U2 = xavier_uniform(rng, d, d)
        self.V = xavier_uniform(rng, d, d)
        self.b = zeros((d,))


@dataclass
class LabelSide:
    """Label-dependent half of fusion; depends only on annotations and parameters, so it is cacheable."""

    projected: Tensor  # h'_Y (C, m, d)
    values: Tensor     # h'_Y @ V.T (C, m, d)
    mask: np.ndarray   # (C, m)


@dataclass
class FusedRepresentation:
    h_hat: Tensor
    attention: np.ndarray | None = None  # (B, n, C, m) when retained


def _check_d(h: Tensor, params: FusionParams, what: str) -> None:
    d = params.U1.shape[0]
    if h.shape[-1] != d:
        raise ShapeError(f"{what} has feature size {h.shape[-1]}, fusion expects {d}")


def project(h_X: Tensor, h_Y: Tensor, params: FusionParams) -> tuple[Tensor, Tensor]:
    _check_d(h_X, params, "h_X")
    _check_d(h_Y, params, "h_Y")
    return T.matmul(h_X, T.transpose(params.U1)), T.matmul(h_Y, T.transpose(params.U2))


def attend(hpx: Tensor, hpy: Tensor, label_mask: np.ndarray, scale: bool = False) -> Tensor:
    """Softmax over each annotation's tokens of dot(h'_x, h'_y): (B, n, d), (C, m, d) -> (B, C, n, m)."""
    if hpx.ndim != 3 or hpy.ndim != 3 or hpx.shape[-1] != hpy.shape[-1]:
        raise ShapeError(f"attend: expected (B, n, d) and (C, m, d), got {hpx.shape} and {hpy.shape}")
    label_mask = np.asarray(label_mask, dtype=bool)
    if label_mask.shape != hpy.shape[:2]:
        raise ShapeError(f"label mask {label_mask.shape} does not match annotations {hpy.shape[:2]}")
    b, n, d = hpx.shape
    logits = T.matmul(T.reshape(hpx, (b, 1, n, d)), T.transpose(hpy, (0, 2, 1)))
    if scale:
        logits = logits * (1.0 / np.sqrt(d))
    return T.softmax(logits, axis=-1, mask=label_mask[None, :, None, :])


def uniform_attention(batch: int, n: int, label_mask: np.ndarray) -> Tensor:
    """Average pooling expressed as constant attention weights."""
    label_mask = np.asarray(label_mask, dtype=bool)
    w = label_mask / label_mask.sum(axis=-1, keepdims=True)
    return Tensor(np.broadcast_to(w[None, :, None, :], (batch, w.shape[0], n, w.shape[1])))


def fuse(hpx: Tensor, hpy: Tensor, attention: Tensor, params: FusionParams,
         label_values: Tensor | None = None) -> Tensor:
    """ĥ^c_i = tanh(V (h'_i + Σ_j a_ij h'_{y_j}) + b), returned as (B, n, C, d).

    With ``label_values = h'_Y @ V.T`` (precomputed once per label set) the
    product with V is split by linearity, so per-text cost no longer scales
    with |C|·m·d².
    """
    b, n, d = hpx.shape
    c, m, _ = hpy.shape
    if attention.shape != (b, c, n, m):
        raise ShapeError(f"attention shape {attention.shape} does not match ({b}, {c}, {n}, {m})")
    vt = T.transpose(params.V)
    if label_values is None:
        ctx = T.matmul(attention, hpy)
        hc = T.broadcast_to(T.reshape(hpx, (b, 1, n, d)), (b, c, n, d)) + ctx
        pre = T.matmul(hc, vt)
    else:
        vx = T.matmul(hpx, vt)
        pre = T.broadcast_to(T.reshape(vx, (b, 1, n, d)), (b, c, n, d)) + T.matmul(attention, label_values)
    return T.transpose(T.tanh(pre + params.b), (0, 2, 1, 3))


def prepare_labels(h_Y: Tensor, label_mask: np.ndarray, params: FusionParams,
                   mode: str = "token-attention") -> LabelSide:
    check_mode(mode)
    _check_d(h_Y, params, "h_Y")
    label_mask = np.asarray(label_mask, dtype=bool)
    if mode == "sentence-similarity":
        h_Y = T.reshape(sentence_feature(h_Y, label_mask), (h_Y.shape[0], 1, h_Y.shape[-1]))
        label_mask = np.ones((h_Y.shape[0], 1), dtype=bool)
    hpy = T.matmul(h_Y, T.transpose(params.U2))
    return LabelSide(projected=hpy, values=T.matmul(hpy, T.transpose(params.V)), mask=label_mask)


def fuse_with_labels(h_X: Tensor, side: LabelSide, params: FusionParams, mode: str = "token-attention",
                     attention_scale: bool = False, keep_attention: bool = False) -> FusedRepresentation:
    check_mode(mode)
    _check_d(h_X, params, "h_X")
    hpx = T.matmul(h_X, T.transpose(params.U1))
    if mode == "average-pooling-add":
        attention = uniform_attention(h_X.shape[0], h_X.shape[1], side.mask)
    else:
        attention = attend(hpx, side.projected, side.mask, scale=attention_scale)
    h_hat = fuse(hpx, side.projected, attention, params, label_values=side.values)
    kept = attention.data.transpose(0, 2, 1, 3).copy() if keep_attention else None
    return FusedRepresentation(h_hat=h_hat, attention=kept)


def fuse_variant(mode: str, h_X: Tensor, h_Y: Tensor, label_mask: np.ndarray, params: FusionParams,
                 attention_scale: bool = False, keep_attention: bool = False) -> FusedRepresentation:
    """Run the fusion strategy named by ``mode`` end to end; the parameter set is the same for every mode."""
    side = prepare_labels(h_Y, label_mask, params, mode)
    return fuse_with_labels(h_X, side, params, mode, attention_scale, keep_attention)


def check_mode(mode: str) -> None:
    if mode not in FUSION_MODES:
        raise ConfigError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")
