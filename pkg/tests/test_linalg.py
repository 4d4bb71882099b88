import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from protoalign.errors import DegenerateInputError, InvalidArgumentError
from protoalign.linalg import (SeededRng, as_matrix, category_order, category_order_rows, entropy,
                               entropy_rows, l2_normalize, l2_normalize_rows, percentile, softmax,
                               softmax_rows)

finite = st.floats(-50, 50, allow_nan=False)
logit_vectors = arrays(np.float64, st.integers(1, 8), elements=finite)


def _simplex(draw_vec):
    v = np.abs(draw_vec) + 1e-3
    return v / v.sum()


probability_vectors = logit_vectors.map(_simplex)


# softmax -------------------------------------------------------------------

def test_softmax_equal_logits_uniform():
    assert np.allclose(softmax([0.0, 0.0, 0.0], 1.0), [1 / 3] * 3, atol=1e-15)


def test_softmax_closed_form_two_classes():
    e = math.e
    assert np.allclose(softmax([1.0, 0.0], 1.0), [e / (e + 1), 1 / (e + 1)], atol=1e-15)
    assert softmax([1.0, 0.0])[0] == pytest.approx(0.73106, abs=1e-5)


@pytest.mark.parametrize("c", [-1000.0, -3.5, 0.0, 7.25, 1e4])
def test_softmax_shift_invariance(c):
    base = softmax([5.0, 3.0, 1.0], 1.0)
    assert np.allclose(softmax([5 + c, 3 + c, 1 + c], 1.0), base, atol=1e-12)


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_softmax_rejects_nonpositive_temperature(tau):
    with pytest.raises(InvalidArgumentError):
        softmax([1.0, 2.0], tau)
    with pytest.raises(InvalidArgumentError):
        softmax_rows(np.ones((2, 2)), tau)


def test_softmax_large_logits_stable():
    p = softmax([1000.0, 0.0], 0.01)
    assert np.all(np.isfinite(p)) and p[0] == 1.0


@given(logit_vectors, st.floats(0.01, 10))
def test_softmax_is_distribution(v, tau):
    p = softmax(v, tau)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12


@given(logit_vectors, finite)
def test_softmax_shift_invariance_property(v, c):
    assert np.allclose(softmax(v + c), softmax(v), atol=1e-10)


def test_softmax_rows_matches_vector_version():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(5, 4))
    rows = softmax_rows(m, 0.3)
    for i in range(5):
        assert np.allclose(rows[i], softmax(m[i], 0.3), atol=1e-15)


# normalization --------------------------------------------------------------

def test_l2_normalize_345():
    assert np.allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)


def test_l2_normalize_idempotent_on_unit():
    u = np.array([0.6, 0.8])
    assert np.allclose(l2_normalize(u), u, atol=1e-15)


def test_l2_normalize_zero_vector_errors():
    with pytest.raises(DegenerateInputError):
        l2_normalize([0.0, 0.0])
    with pytest.raises(DegenerateInputError):
        l2_normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


@given(arrays(np.float64, st.integers(1, 10), elements=st.floats(-1e3, 1e3)))
def test_l2_normalize_unit_length(v):
    if np.linalg.norm(v) < 1e-6:
        return
    u = l2_normalize(v)
    assert abs(np.linalg.norm(u) - 1) < 1e-12
    assert np.dot(u, v) > 0


def test_l2_normalize_rows_returns_norms():
    m = np.array([[3.0, 4.0], [0.0, 2.0]])
    unit, norms = l2_normalize_rows(m)
    assert np.allclose(norms, [5.0, 2.0])
    assert np.allclose(unit, [[0.6, 0.8], [0.0, 1.0]])


# entropy --------------------------------------------------------------------

def test_entropy_uniform_is_log_c():
    assert entropy([0.25] * 4) == pytest.approx(math.log(4), abs=1e-12)
    assert entropy([0.25] * 4) == pytest.approx(1.38629, abs=1e-5)


def test_entropy_one_hot_is_zero():
    assert entropy([0.0, 1.0, 0.0]) == 0.0


def test_entropy_direct_evaluation():
    p = [0.7, 0.2, 0.1]
    expected = -(0.7 * math.log(0.7) + 0.2 * math.log(0.2) + 0.1 * math.log(0.1))
    assert entropy(p) == pytest.approx(expected, abs=1e-14)


def test_entropy_rejects_unnormalized():
    with pytest.raises(InvalidArgumentError):
        entropy([0.5, 0.6])
    with pytest.raises(InvalidArgumentError):
        entropy([1.2, -0.2])


@given(probability_vectors)
def test_entropy_bounds(p):
    h = entropy(p)
    assert -1e-12 <= h <= math.log(p.size) + 1e-12


@settings(max_examples=50)
@given(arrays(np.float64, st.integers(2, 6), elements=st.floats(-5, 5)))
def test_entropy_nondecreasing_in_temperature(v):
    taus = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0]
    hs = [entropy(softmax(v, t)) for t in taus]
    assert all(b >= a - 1e-12 for a, b in zip(hs, hs[1:]))


def test_entropy_rows_matches_scalar():
    rng = np.random.default_rng(1)
    probs = softmax_rows(rng.normal(size=(6, 3)))
    assert np.allclose(entropy_rows(probs), [entropy(p) for p in probs], atol=1e-15)


# category order ---------------------------------------------------------------

def test_category_order_direct_sort():
    assert category_order([0.1, 0.7, 0.2]).tolist() == [3, 1, 2]


def test_category_order_one_hot_ties_by_index():
    assert category_order([1.0, 0.0, 0.0, 0.0]).tolist() == [1, 2, 3, 4]


def test_category_order_tie_broken_by_index():
    assert category_order([0.25, 0.25, 0.5]).tolist() == [2, 3, 1]


@given(probability_vectors)
def test_category_order_is_permutation(p):
    r = category_order(p)
    assert sorted(r.tolist()) == list(range(1, p.size + 1))
    assert r[int(np.argmax(p))] == 1


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)),
              elements=st.sampled_from([0.0, 0.1, 0.2, 0.5])))
def test_category_order_rows_matches_vector(raw):
    probs = (raw + 1e-3) / (raw + 1e-3).sum(axis=1, keepdims=True)
    rows = category_order_rows(probs)
    for i in range(probs.shape[0]):
        assert rows[i].tolist() == category_order(probs[i]).tolist()


# percentile -------------------------------------------------------------------

def test_percentile_nearest_rank_integers():
    assert percentile(list(range(1, 11)), 80) == 8


@pytest.mark.parametrize("q", [0.1, 37.0, 100.0])
def test_percentile_singleton(q):
    assert percentile([4.5], q) == 4.5


def test_percentile_ceil_rank():
    assert percentile([3, 1, 2], 50) == 2


def test_percentile_errors():
    with pytest.raises(DegenerateInputError):
        percentile([], 50)
    for q in (0, -1, 100.5):
        with pytest.raises(InvalidArgumentError):
            percentile([1, 2], q)


@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e6, 1e6)),
       st.floats(0.01, 100))
def test_percentile_matches_sort_oracle(values, q):
    s = sorted(values.tolist())
    k = max(1, math.ceil(q * len(s) / 100))
    assert percentile(values, q) == s[k - 1]
    assert percentile(values, 100) == max(s)


# rng and matrices ------------------------------------------------------------

def test_seeded_rng_reproducible_10k():
    a, b = SeededRng(123), SeededRng(123)
    assert np.array_equal(a.random(10_000), b.random(10_000))
    assert not np.array_equal(SeededRng(124).random(10), SeededRng(123).random(10))


def test_seeded_rng_spawn_independent_and_stable():
    r = SeededRng(5)
    x = r.spawn(1).random(5)
    assert np.array_equal(x, SeededRng(5).spawn(1).random(5))
    assert not np.array_equal(x, SeededRng(5).spawn(2).random(5))


def test_as_matrix_validation():
    assert as_matrix([[1, 2]]).dtype == np.float64
    with pytest.raises(InvalidArgumentError):
        as_matrix([1.0, 2.0])
    with pytest.raises(InvalidArgumentError):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(InvalidArgumentError):
        as_matrix([[1.0, 2.0]], cols=3)
