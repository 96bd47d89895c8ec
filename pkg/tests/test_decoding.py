import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from lear.decoding import (SpanPrediction, decode_flat, heuristic_match, heuristic_pairs, nearest_match,
                           nearest_pairs, nested_decode)
from lear.errors import ConfigError, ShapeError

probs = st.lists(st.sampled_from([0.0, 0.2, 0.4, 0.5, 0.6, 0.7, 0.9, 1.0]), min_size=1, max_size=12)


def spans(result):
    return [(s.start, s.end) for s in result]


def test_heuristic_all_below_threshold():
    assert heuristic_match([0.1, 0.4, 0.3], [0.2, 0.49, 0.0]) == []


def test_heuristic_flushes_trailing_span():
    assert spans(heuristic_match([0.9, 0.1, 0.1], [0.1, 0.1, 0.8])) == [(0, 2)]


def test_heuristic_prefers_more_probable_start():
    assert spans(heuristic_match([0.6, 0.9, 0.1, 0.1], [0.1, 0.1, 0.7, 0.1])) == [(1, 2)]


def test_heuristic_new_start_emits_and_reopens():
    assert spans(heuristic_match([0.9, 0.1, 0.8, 0.1], [0.1, 0.9, 0.1, 0.7])) == [(0, 1), (2, 3)]


def test_heuristic_prefers_more_probable_end():
    assert spans(heuristic_match([0.9, 0.1, 0.1, 0.1], [0.1, 0.6, 0.8, 0.7])) == [(0, 2)]


def test_heuristic_scores_and_category():
    out = heuristic_match([0.9, 0.1], [0.1, 0.8], category="Die")
    assert out == [SpanPrediction(0, 1, "Die", pytest.approx(0.72))]


def test_nearest_examples():
    assert spans(nearest_match([0.9, 0, 0], [0, 0, 0.8])) == [(0, 2)]
    assert spans(nearest_match([0.9, 0.6, 0], [0, 0, 0.8])) == [(0, 2)]
    assert nearest_match([0.0, 0.9, 0.0], [0.8, 0.0, 0.0]) == []


def test_length_mismatch_is_shape_error():
    with pytest.raises(ShapeError):
        heuristic_match([0.9, 0.1], [0.1])
    with pytest.raises(ShapeError):
        nearest_match([0.9], [0.1, 0.2])


@settings(max_examples=400, deadline=None)
@given(st.data())
def test_heuristic_properties(data):
    start = data.draw(probs)
    end = data.draw(st.lists(st.sampled_from([0.0, 0.4, 0.6, 0.9]), min_size=len(start), max_size=len(start)))
    out = heuristic_pairs(start, end)
    assert out == oracles.span_determination(start, end)
    for s, e in out:
        assert s <= e
        assert start[s] > 0.5 and end[e] > 0.5
    # spans come out in order and never cross; a token that is both an end and
    # the next start can be shared by two consecutive spans
    assert len(set(out)) == len(out)
    for (s1, e1), (s2, e2) in zip(out, out[1:]):
        assert s1 <= s2 and e1 <= s2 and (s1, e1) < (s2, e2)


def test_heuristic_can_share_a_boundary_token():
    # token 1 closes the first span and opens the second in the same step
    assert heuristic_pairs([0.9, 0.8, 0.1], [0.1, 0.9, 0.7]) == [(0, 1), (1, 2)]
    assert oracles.span_determination([0.9, 0.8, 0.1], [0.1, 0.9, 0.7]) == [(0, 1), (1, 2)]


@settings(max_examples=400, deadline=None)
@given(st.data())
def test_nearest_properties(data):
    start = data.draw(probs)
    end = data.draw(st.lists(st.sampled_from([0.0, 0.4, 0.6, 0.9]), min_size=len(start), max_size=len(start)))
    out = nearest_pairs(start, end)
    assert out == oracles.nearest_pairs(start, end)
    for (s1, e1), (s2, e2) in zip(out, out[1:]):
        assert e1 < s2
    for s, e in out:
        assert all(not end[k] > 0.5 for k in range(s, e))


def test_nested_examples():
    scorer = lambda c, pairs: np.full(len(pairs), 0.9)
    assert nested_decode(np.zeros((3, 1)), np.zeros((3, 1)), scorer, ["A"]) == []
    start = np.array([[0.1], [0.8], [0.1]])
    end = np.array([[0.1], [0.1], [0.7]])
    assert [s.key for s in nested_decode(start, end, scorer, ["A"])] == [(1, 2, "A")]


def test_nested_two_by_two_grid():
    start = np.array([[0.9], [0.8], [0.1], [0.1]])
    end = np.array([[0.1], [0.1], [0.9], [0.6]])
    P = np.array([[0, 0, 0.7, 0.2], [0, 0, 0.4, 0.95], [0, 0, 0, 0], [0, 0, 0, 0]])
    out = nested_decode(start, end, lambda c, pairs: [P[i, j] for i, j in pairs], ["A"])
    assert [(s.start, s.end) for s in out] == [(0, 2), (1, 3)]
    assert [s.score for s in out] == [0.7, 0.95]


def test_nested_never_queries_inverted_or_long_pairs():
    seen = []

    def scorer(c, pairs):
        seen.extend(pairs)
        return np.ones(len(pairs))

    nested_decode(np.full((6, 1), 0.9), np.full((6, 1), 0.9), scorer, ["A"], max_span_len=2)
    assert seen and all(i <= j and j - i < 2 for i, j in seen)


def test_perfect_probabilities_recover_gold():
    gold = [(0, 3, 0), (1, 2, 0), (2, 2, 1), (4, 5, 1)]
    n, c = 6, 2
    start, end, M = np.zeros((n, c)), np.zeros((n, c)), np.zeros((c, n, n))
    for i, j, k in gold:
        start[i, k] = end[j, k] = M[k, i, j] = 1.0
    out = nested_decode(start, end, lambda k, pairs: [M[k, i, j] for i, j in pairs], ["A", "B"])
    assert sorted((s.start, s.end, ["A", "B"].index(s.category)) for s in out) == sorted(gold)


def test_decode_flat_per_category_and_unknown_method():
    start = np.array([[0.9, 0.1], [0.1, 0.9], [0.1, 0.1]])
    end = np.array([[0.1, 0.1], [0.8, 0.1], [0.1, 0.9]])
    out = decode_flat(start, end, ["A", "B"])
    assert [s.key for s in out] == [(0, 1, "A"), (1, 2, "B")]
    assert [s.key for s in decode_flat(start, end, ["A", "B"], "nearest")] == [(0, 1, "A"), (1, 2, "B")]
    with pytest.raises(ConfigError):
        decode_flat(start, end, ["A", "B"], "viterbi")


def test_decoding_is_independent_of_category_order():
    rng = np.random.default_rng(0)
    start, end = rng.random((7, 3)), rng.random((7, 3))
    names = ["A", "B", "C"]
    perm = [2, 0, 1]
    a = decode_flat(start, end, names)
    b = decode_flat(start[:, perm], end[:, perm], [names[k] for k in perm])
    assert a == b
