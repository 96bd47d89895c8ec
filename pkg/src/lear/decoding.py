"""Turning boundary and pair probabilities into spans.

All indices are 0-based and ``end`` is inclusive.

The heuristic matcher is a three-state machine:

* IDLE    nothing pending
* OPEN    a start is pending; a later, more probable start replaces it
* CLOSED  a start and an end are pending; a more probable end replaces the
          end, and a new start emits the pending span and reopens

Each token is offered to the IDLE, OPEN and CLOSED handlers in that order,
so a token can advance the machine more than once (a token that is both an
above-threshold start and end closes a single-token span immediately).
Two behaviours differ from the usual published pseudocode: on CLOSED->OPEN
the new token becomes the pending start (the pseudocode clears the start
and stores the token as end), and a span still pending in CLOSED at the end
of the sequence is emitted.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError

DECODERS = ("heuristic", "nearest", "nested")


@dataclass(frozen=True, order=True)
class SpanPrediction:
    start: int
    end: int
    category: str
    score: float = 1.0

    @property
    def key(self) -> tuple[int, int, str]:
        return (self.start, self.end, self.category)

    def to_json(self) -> dict:
        return {"start": self.start, "end": self.end, "category": self.category, "score": self.score}


def _vectors(start, end) -> tuple[np.ndarray, np.ndarray]:
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    if start.ndim != 1 or start.shape != end.shape:
        raise ShapeError(f"start/end must be equal-length vectors, got {start.shape} and {end.shape}")
    return start, end


class _State(enum.Enum):
    IDLE = 1
    OPEN = 2
    CLOSED = 3


class _HeuristicMachine:
    def __init__(self, start: np.ndarray, end: np.ndarray, threshold: float):
        self.start, self.end, self.threshold = start, end, threshold
        self.state = _State.IDLE
        self.pending_start = -1
        self.pending_end = -1
        self.found: list[tuple[int, int]] = []

    def is_start(self, i: int) -> bool:
        return self.start[i] > self.threshold

    def is_end(self, i: int) -> bool:
        return self.end[i] > self.threshold

    def feed(self, i: int) -> None:
        if self.state is _State.IDLE and self.is_start(i):
            self.pending_start = i
            self.state = _State.OPEN
        if self.state is _State.OPEN:
            if self.is_start(i) and self.start[i] > self.start[self.pending_start]:
                self.pending_start = i
            if self.is_end(i):
                self.pending_end = i
                self.state = _State.CLOSED
        if self.state is _State.CLOSED:
            if self.is_end(i) and self.end[i] > self.end[self.pending_end]:
                self.pending_end = i
            if self.is_start(i):
                self.found.append((self.pending_start, self.pending_end))
                self.pending_start, self.pending_end = i, -1
                self.state = _State.OPEN

    def finish(self) -> list[tuple[int, int]]:
        if self.state is _State.CLOSED:
            self.found.append((self.pending_start, self.pending_end))
            self.state = _State.IDLE
        return self.found


def heuristic_pairs(start, end, threshold: float = 0.5) -> list[tuple[int, int]]:
    start, end = _vectors(start, end)
    machine = _HeuristicMachine(start, end, threshold)
    for i in range(len(start)):
        machine.feed(i)
    return machine.finish()


def heuristic_match(start, end, threshold: float = 0.5, category: str = "") -> list[SpanPrediction]:
    """Flat spans of one category by the heuristic (probability-preferring) principle."""
    start, end = _vectors(start, end)
    return [SpanPrediction(s, e, category, float(start[s] * end[e]))
            for s, e in heuristic_pairs(start, end, threshold)]


def nearest_pairs(start, end, threshold: float = 0.5) -> list[tuple[int, int]]:
    start, end = _vectors(start, end)
    ends = np.flatnonzero(end > threshold)
    out: list[tuple[int, int]] = []
    last_end = -1
    for i in np.flatnonzero(start > threshold):
        if i <= last_end:
            continue
        k = np.searchsorted(ends, i)
        if k == len(ends):
            break
        out.append((int(i), int(ends[k])))
        last_end = int(ends[k])
    return out


def nearest_match(start, end, threshold: float = 0.5, category: str = "") -> list[SpanPrediction]:
    """Pair each start with the closest end at or after it; spans never overlap."""
    start, end = _vectors(start, end)
    return [SpanPrediction(s, e, category, float(start[s] * end[e]))
            for s, e in nearest_pairs(start, end, threshold)]


PairScorer = Callable[[int, list[tuple[int, int]]], np.ndarray]


def nested_decode(start, end, pair_scorer: PairScorer, categories: Sequence[str],
                  threshold: float = 0.5, max_span_len: int = 32) -> list[SpanPrediction]:
    """Emit every candidate (i, j) whose pair probability exceeds ``threshold``.

    ``start``/``end`` are (n, C).  Candidates are the cross product of
    above-threshold starts and ends with i <= j and j - i < max_span_len.
    ``pair_scorer(c, pairs)`` returns one probability per pair.
    """
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    if start.ndim != 2 or start.shape != end.shape or start.shape[1] != len(categories):
        raise ShapeError(f"start/end must both be (n, {len(categories)}), got {start.shape} and {end.shape}")
    spans: list[SpanPrediction] = []
    for c, name in enumerate(categories):
        starts = np.flatnonzero(start[:, c] > threshold)
        ends = np.flatnonzero(end[:, c] > threshold)
        pairs = [(int(i), int(j)) for i in starts for j in ends if i <= j and j - i < max_span_len]
        if not pairs:
            continue
        probs = np.asarray(pair_scorer(c, pairs), dtype=np.float64)
        spans.extend(SpanPrediction(i, j, name, float(p)) for (i, j), p in zip(pairs, probs) if p > threshold)
    return sorted(spans)


def decode_flat(start, end, categories: Sequence[str], method: str = "heuristic",
                threshold: float = 0.5) -> list[SpanPrediction]:
    """Apply a flat matcher per category to (n, C) probabilities."""
    matcher = {"heuristic": heuristic_match, "nearest": nearest_match}.get(method)
    if matcher is None:
        raise ConfigError(f"unknown flat decoder {method!r}")
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    if start.ndim != 2 or start.shape != end.shape or start.shape[1] != len(categories):
        raise ShapeError(f"start/end must both be (n, {len(categories)}), got {start.shape} and {end.shape}")
    spans: list[SpanPrediction] = []
    for c, name in enumerate(categories):
        spans.extend(matcher(start[:, c], end[:, c], threshold, name))
    return sorted(spans)
