"""Start/end boundary heads and the start-end pair classifier."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .nn import Module, xavier_uniform, zeros
from .tensor import Tensor


class ScoringParams(Module):
    """M_s, b_s / M_e, b_e for the boundary heads; M_pair of shape (1, 2d), or (|C|, 2d) per category."""

    def __init__(self, rng: np.random.Generator, num_categories: int, d: int, pair_per_category: bool = False):
        self.M_s = xavier_uniform(rng, num_categories, d)
        self.b_s = zeros((d,))
        self.M_e = xavier_uniform(rng, num_categories, d)
        self.b_e = zeros((d,))
        rows = num_categories if pair_per_category else 1
        self.M_pair = xavier_uniform(rng, 2 * d, 1, shape=(rows, 2 * d))

    @property
    def pair_per_category(self) -> bool:
        return self.M_pair.shape[0] > 1


@dataclass
class BoundaryScores:
    start: Tensor  # (B, n, C)
    end: Tensor    # (B, n, C)


def _boundary(h_hat: Tensor, M: Tensor, bias: Tensor) -> Tensor:
    if h_hat.ndim < 2 or h_hat.shape[-2:] != M.shape:
        raise ShapeError(f"h_hat {h_hat.shape} does not end in the head's shape {M.shape}")
    return T.sigmoid(T.row_sum(T.mul(h_hat, M) + bias))


def score_boundaries(h_hat: Tensor, params: ScoringParams) -> BoundaryScores:
    """start_i = sigmoid(row_sum(M_s ∘ ĥ_i + b_s)); b_s broadcasts over categories."""
    return BoundaryScores(start=_boundary(h_hat, params.M_s, params.b_s),
                          end=_boundary(h_hat, params.M_e, params.b_e))


def _pair_row(params: ScoringParams, category: int) -> Tensor:
    row = category if params.pair_per_category else 0
    return T.getitem(params.M_pair, (slice(row, row + 1), slice(None)))


def score_pairs(h_hat_c: Tensor, params: ScoringParams, category: int,
                candidates: list[tuple[int, int]], max_span_len: int | None = None) -> Tensor:
    """P^c_ij = sigmoid(M_pair · concat(ĥ^c_i, ĥ^c_j)) for the requested (i, j) pairs of one text.

    ``h_hat_c`` is (n, d).  Returns a (K,) tensor aligned with ``candidates``.
    """
    if h_hat_c.ndim != 2:
        raise ShapeError(f"expected (n, d) category slice, got {h_hat_c.shape}")
    for i, j in candidates:
        if i > j:
            raise ContractError(f"pair ({i}, {j}) has start after end")
        if max_span_len is not None and j - i >= max_span_len:
            raise ContractError(f"pair ({i}, {j}) exceeds max_span_len={max_span_len}")
    if not candidates:
        return Tensor(np.zeros(0))
    starts = np.array([i for i, _ in candidates])
    ends = np.array([j for _, j in candidates])
    pairs = T.concat([T.getitem(h_hat_c, starts), T.getitem(h_hat_c, ends)], axis=-1)
    return T.sigmoid(T.reshape(T.matmul(pairs, T.transpose(_pair_row(params, category))), (len(candidates),)))


def pair_matrix(h_hat: Tensor, params: ScoringParams) -> Tensor:
    """All-pairs P of shape (B, C, n, n), using M·concat(a, b) = M[:d]·a + M[d:]·b."""
    b, n, c, d = h_hat.shape
    if params.M_pair.shape[1] != 2 * d:
        raise ShapeError(f"M_pair {params.M_pair.shape} does not match feature size {d}")
    left_w = T.getitem(params.M_pair, (slice(None), slice(0, d)))
    right_w = T.getitem(params.M_pair, (slice(None), slice(d, 2 * d)))
    if not params.pair_per_category:
        left_w = T.reshape(left_w, (d,))
        right_w = T.reshape(right_w, (d,))
    left = T.transpose(T.row_sum(T.mul(h_hat, left_w)), (0, 2, 1))    # (B, C, n)
    right = T.transpose(T.row_sum(T.mul(h_hat, right_w)), (0, 2, 1))
    logits = (T.broadcast_to(T.reshape(left, (b, c, n, 1)), (b, c, n, n))
              + T.broadcast_to(T.reshape(right, (b, c, 1, n)), (b, c, n, n)))
    return T.sigmoid(logits)


def candidate_region(n: int, max_span_len: int) -> np.ndarray:
    """Boolean (n, n) mask of i <= j < i + max_span_len."""
    i, j = np.indices((n, n))
    return (i <= j) & (j - i < max_span_len)
