import numpy as np
import pytest

import oracles
from lear import tensor as T
from lear.errors import ContractError, ShapeError
from lear.scoring import ScoringParams, candidate_region, pair_matrix, score_boundaries, score_pairs
from lear.tensor import Tensor


def params_for(c, d, per_category=False, seed=0):
    return ScoringParams(np.random.default_rng(seed), c, d, per_category)


def test_zero_head_gives_half():
    p = params_for(2, 3)
    p.M_s.assign(np.zeros((2, 3)))
    out = score_boundaries(Tensor(np.random.default_rng(1).normal(size=(1, 4, 2, 3))), p).start.data
    assert np.all(out == 0.5)


def test_closed_form_example():
    p = params_for(1, 2)
    p.M_s.assign([[1.0, 1.0]])
    p.b_s.assign([0.0, 0.0])
    out = score_boundaries(Tensor([[[[0.5, 0.5]]]]), p).start.item()
    assert out == pytest.approx(1 / (1 + np.exp(-1.0)), rel=1e-15)
    assert out == pytest.approx(0.73106, abs=1e-5)


def test_boundaries_match_loop_oracle():
    rng = np.random.default_rng(2)
    p = params_for(3, 4, seed=3)
    p.b_s.assign(rng.normal(size=4))
    p.b_e.assign(rng.normal(size=4))
    h = rng.uniform(-1, 1, size=(1, 5, 3, 4))
    got = score_boundaries(Tensor(h), p)
    np.testing.assert_allclose(got.start.data[0], oracles.boundary_probs(h[0], p.M_s.data, p.b_s.data), rtol=1e-13)
    np.testing.assert_allclose(got.end.data[0], oracles.boundary_probs(h[0], p.M_e.data, p.b_e.data), rtol=1e-13)


def test_categories_are_scored_independently():
    rng = np.random.default_rng(4)
    p = params_for(3, 4)
    h = Tensor(rng.normal(size=(2, 5, 3, 4)))
    before = score_boundaries(h, p).start.data
    m = p.M_s.data.copy()
    m[1] = 0
    p.M_s.assign(m)
    after = score_boundaries(h, p).start.data
    assert np.array_equal(before[..., [0, 2]], after[..., [0, 2]])
    assert not np.array_equal(before[..., 1], after[..., 1])


def test_boundary_shape_mismatch():
    with pytest.raises(ShapeError):
        score_boundaries(Tensor(np.ones((1, 4, 2, 5))), params_for(2, 3))


def test_pair_zero_and_antisymmetric_cases():
    p = params_for(1, 3)
    p.M_pair.assign(np.zeros((1, 6)))
    h = Tensor(np.random.default_rng(5).normal(size=(4, 3)))
    assert np.all(score_pairs(h, p, 0, [(0, 1), (2, 3)]).data == 0.5)
    half = np.array([0.3, -1.0, 2.0])
    p.M_pair.assign(np.concatenate([half, -half])[None])
    same = Tensor(np.tile([0.7, 0.1, -0.4], (4, 1)))
    np.testing.assert_allclose(score_pairs(same, p, 0, [(0, 2), (1, 3)]).data, 0.5, atol=1e-15)


def test_pairs_match_concat_dot_oracle():
    rng = np.random.default_rng(6)
    p = params_for(2, 3, seed=7)
    h = rng.normal(size=(5, 3))
    pairs = [(0, 0), (1, 4), (2, 3)]
    got = score_pairs(Tensor(h), p, 1, pairs).data
    ref = [oracles.sigmoid(float(np.dot(p.M_pair.data[0], np.concatenate([h[i], h[j]])))) for i, j in pairs]
    np.testing.assert_allclose(got, ref, rtol=1e-13)


def test_inverted_pair_is_contract_error():
    with pytest.raises(ContractError):
        score_pairs(Tensor(np.ones((3, 2))), params_for(1, 2), 0, [(2, 1)])
    with pytest.raises(ContractError):
        score_pairs(Tensor(np.ones((5, 2))), params_for(1, 2), 0, [(0, 4)], max_span_len=3)


@pytest.mark.parametrize("per_category", [False, True])
def test_pair_matrix_agrees_with_pair_scorer(per_category):
    rng = np.random.default_rng(8)
    p = params_for(3, 4, per_category, seed=9)
    h = rng.normal(size=(2, 5, 3, 4))
    full = pair_matrix(Tensor(h), p).data
    cells = [(i, j) for i in range(5) for j in range(i, 5)]
    for b in range(2):
        for c in range(3):
            direct = score_pairs(Tensor(h[b, :, c]), p, c, cells).data
            np.testing.assert_allclose([full[b, c, i, j] for i, j in cells], direct, rtol=1e-12)


def test_per_category_rows_differ():
    p = params_for(3, 2, per_category=True)
    assert p.M_pair.shape == (3, 4) and p.pair_per_category
    assert params_for(3, 2).M_pair.shape == (1, 4)


def test_head_gradients_match_finite_differences():
    from lear.training import gradcheck

    rng = np.random.default_rng(10)
    p = params_for(2, 3, seed=11)
    p.b_s.assign(rng.normal(size=3) * 0.1)
    h = Tensor(rng.uniform(-1, 1, size=(1, 4, 2, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(1, 2, 4, 4)))

    def loss():
        s = score_boundaries(h, p)
        return T.sum(s.start) + T.sum(T.mul(s.end, s.end)) + T.sum(T.mul(pair_matrix(h, p), w))

    assert gradcheck(loss, [*p.named_parameters(), ("h_hat", h)]).max_rel_error < 1e-6


def test_candidate_region():
    region = candidate_region(4, 2)
    expected = np.array([[1, 1, 0, 0], [0, 1, 1, 0], [0, 0, 1, 1], [0, 0, 0, 1]], dtype=bool)
    assert np.array_equal(region, expected)
