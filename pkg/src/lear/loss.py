"""Boundary and match losses.

Per text of true length n, with binary cross entropy CE:

    L_s     = (1/n)  Σ_c Σ_i  CE(start^c_i, S^c_i)
    L_e     = (1/n)  Σ_c Σ_i  CE(end^c_i,   E^c_i)
    L_match = (1/n²) Σ_c Σ_ij CE(P^c_ij, M^c_ij) · W^c_ij,
              W^c_ij = 1 iff (P^c_ij > 0.5 or M^c_ij = 1) and (i, j) is a candidate cell

Batched losses are the mean of the per-text values.  W is computed from
forward values and carries no gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .scoring import BoundaryScores, candidate_region
from .tensor import Tensor

EPS = 1e-12


@dataclass
class GoldLabels:
    start: np.ndarray         # (n, C) in {0, 1}
    end: np.ndarray           # (n, C)
    match: np.ndarray | None  # (C, n, n), nested mode only

    def __post_init__(self):
        if self.match is not None and np.any(np.tril(self.match, k=-1)):
            raise ContractError("gold pair matrix has a cell with start after end")


@dataclass
class GoldBatch:
    start: np.ndarray          # (B, n, C)
    end: np.ndarray
    match: np.ndarray | None   # (B, C, n, n)
    mask: np.ndarray           # (B, n)

    @classmethod
    def stack(cls, golds: list[GoldLabels], length: int | None = None) -> "GoldBatch":
        n = max(g.start.shape[0] for g in golds) if length is None else length
        c = golds[0].start.shape[1]
        b = len(golds)
        start = np.zeros((b, n, c))
        end = np.zeros((b, n, c))
        mask = np.zeros((b, n), dtype=bool)
        nested = all(g.match is not None for g in golds)
        match = np.zeros((b, c, n, n)) if nested else None
        for k, g in enumerate(golds):
            m = g.start.shape[0]
            start[k, :m] = g.start
            end[k, :m] = g.end
            mask[k, :m] = True
            if nested:
                match[k, :, :m, :m] = g.match
        return cls(start, end, match, mask)

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ContractError("loss weights must be non-negative")
        if self.alpha == 0 and self.beta == 0:
            raise ContractError("alpha and beta cannot both be zero")


def binary_cross_entropy(p: Tensor, y: np.ndarray) -> Tensor:
    """Elementwise -[y log p + (1-y) log(1-p)] with p clamped to [1e-12, 1-1e-12]."""
    if np.any(p.data < 0) or np.any(p.data > 1):
        raise ContractError("probabilities must lie in [0, 1]")
    y = np.asarray(y, dtype=np.float64)
    pc = T.clip(p, EPS, 1.0 - EPS)
    return -(T.mul(T.log(pc), Tensor(y)) + T.mul(T.log(1.0 - pc), Tensor(1.0 - y)))


def _per_token_weights(mask: np.ndarray) -> np.ndarray:
    lengths = mask.sum(axis=1, keepdims=True)
    return mask / (lengths * mask.shape[0])


def boundary_loss(scores: BoundaryScores, gold: GoldBatch) -> tuple[Tensor, Tensor]:
    if scores.start.shape != gold.start.shape:
        raise ContractError(f"scores {scores.start.shape} vs gold {gold.start.shape}")
    w = Tensor(np.broadcast_to(_per_token_weights(gold.mask)[:, :, None], gold.start.shape))
    l_s = T.sum(T.mul(binary_cross_entropy(scores.start, gold.start), w))
    l_e = T.sum(T.mul(binary_cross_entropy(scores.end, gold.end), w))
    return l_s, l_e


def match_region(gold: GoldBatch, max_span_len: int) -> np.ndarray:
    """(B, 1, n, n) cells that take part in pair scoring."""
    n = gold.mask.shape[1]
    valid = gold.mask[:, :, None] & gold.mask[:, None, :]
    return (valid & candidate_region(n, max_span_len)[None])[:, None]


def match_weights(pair_probs: np.ndarray, gold: GoldBatch, max_span_len: int) -> np.ndarray:
    if gold.match is None:
        raise ContractError("match loss needs the gold pair matrix (nested mode)")
    region = match_region(gold, max_span_len)
    return region & ((pair_probs > 0.5) | (gold.match == 1))


def match_loss(pair_probs: Tensor, gold: GoldBatch, max_span_len: int = 32,
               weights: np.ndarray | None = None) -> Tensor:
    if gold.match is None:
        raise ContractError("match loss needs the gold pair matrix (nested mode)")
    if pair_probs.shape != gold.match.shape:
        raise ContractError(f"pair scores {pair_probs.shape} vs gold {gold.match.shape}")
    if weights is None:
        weights = match_weights(pair_probs.data, gold, max_span_len)
    lengths = gold.lengths.astype(np.float64)
    scale = (1.0 / (lengths**2 * len(lengths)))[:, None, None, None]
    return T.sum(T.mul(binary_cross_entropy(pair_probs, gold.match), Tensor(weights * scale)))


def total_loss(mode: str, l_s, l_e, l_match=None, weights: LossWeights | None = None):
    if mode == "flat":
        return l_s + l_e
    if mode == "nested":
        if l_match is None:
            raise ContractError("nested mode needs the match loss")
        weights = weights or LossWeights()
        return weights.alpha * (l_s + l_e) + weights.beta * l_match
    raise ContractError(f"unknown loss mode {mode!r}")
