import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dfrd.errors import InvalidInputError
from dfrd.rrf import (RrfVector, onehot_from_rrf, rank_of, rrf_encode, rrf_matrix, rrf_to_dense,
                      sample_random_rrf, sample_random_rrf_batch)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
score_vectors = arrays(np.float64, st.integers(1, 40), elements=finite)


def test_rank_of_examples():
    assert rank_of([0.5, 0.2, 0.9]).tolist() == [2, 3, 1]
    assert rank_of([0.7, 0.7]).tolist() == [1, 2]
    assert rank_of([3.0]).tolist() == [1]


@pytest.mark.parametrize("bad", [[1.0, np.nan], [np.inf], [], [[1.0]]])
def test_rank_of_rejects_bad_input(bad):
    with pytest.raises(InvalidInputError):
        rank_of(bad)


def test_rrf_encode_examples():
    v = rrf_encode([2, 3, 1], k=2)
    assert v.entries == (2, 0)
    assert v.values.tolist() == [1.0, 0.5]
    assert rrf_encode([2, 3, 1], k=7).entries == (2, 0, 1)


def test_rrf_encode_100_dim_is_10_hot():
    s = np.random.default_rng(3).normal(size=100)
    v = rrf_encode(rank_of(s), 10)
    assert len(v) == 10
    assert sorted(v.values.tolist()) == sorted(1.0 / p for p in range(1, 11))


def test_rrf_encode_rejects_bad_k():
    with pytest.raises(InvalidInputError):
        rrf_encode([1, 2], 0)


def test_onehot_from_rrf():
    assert onehot_from_rrf(RrfVector(10, 3, (7, 3, 0))) == 7
    assert onehot_from_rrf(RrfVector(1, 1, (0,))) == 0


@pytest.mark.parametrize("entries", [(), (1, 1), (5,), (-1,)])
def test_rrf_vector_invariants(entries):
    with pytest.raises(InvalidInputError):
        RrfVector(4, max(len(entries), 1), entries)


def test_rrf_to_dense_example():
    assert rrf_to_dense(RrfVector(4, 2, (2, 0))).tolist() == [0.5, 0.0, 1.0, 0.0]


def test_rrf_matrix_matches_rows():
    rng = np.random.default_rng(0)
    vs = [sample_random_rrf(12, 4, rng) for _ in range(5)] + [RrfVector(12, 2, (3, 1))]
    m = rrf_matrix(vs)
    for row, v in zip(m, vs):
        assert np.array_equal(row, rrf_to_dense(v))
    with pytest.raises(InvalidInputError):
        rrf_matrix([RrfVector(3, 1, (0,)), RrfVector(4, 1, (0,))])


@given(score_vectors)
def test_rank_of_is_a_permutation(s):
    assert sorted(rank_of(s).tolist()) == list(range(1, len(s) + 1))


@given(score_vectors, st.integers(1, 50))
def test_argmax_preserved(s, k):
    assert onehot_from_rrf(rrf_encode(rank_of(s), k)) == int(np.flatnonzero(s == s.max())[0])


@given(score_vectors, st.integers(1, 50))
def test_encode_length_and_values(s, k):
    v = rrf_encode(rank_of(s), k)
    n = min(k, len(s))
    assert len(v) == n
    assert v.values.tolist() == [1.0 / p for p in range(1, n + 1)]


@given(score_vectors, st.integers(1, 50))
def test_dense_roundtrip_and_idempotence(s, k):
    v = rrf_encode(rank_of(s), k)
    dense = rrf_to_dense(v)
    again = rrf_encode(rank_of(dense), len(v))
    assert again.entries == v.entries
    assert np.array_equal(rrf_to_dense(again), dense)


def test_random_rrf_examples():
    rng = np.random.default_rng(0)
    v = sample_random_rrf(100, 10, rng)
    assert len(set(v.entries)) == 10
    assert sorted(v.values.tolist()) == sorted(1.0 / p for p in range(1, 11))
    assert all(sample_random_rrf(1, 1, rng).entries == (0,) for _ in range(20))
    with pytest.raises(InvalidInputError):
        sample_random_rrf(3, 4, rng)


def test_random_rrf_reproducible_and_batch_equivalent():
    a = [sample_random_rrf(30, 5, np.random.default_rng(9)) for _ in range(2)]
    assert a[0] == a[1]
    rng = np.random.default_rng(11)
    singles = [sample_random_rrf(30, 5, rng) for _ in range(50)]
    assert sample_random_rrf_batch(30, 5, 50, np.random.default_rng(11)) == singles


def test_random_rrf_first_index_uniform():
    # Symmetry oracle: every index is equally likely to carry the largest noise value.
    rng = np.random.default_rng(2024)
    draws = sample_random_rrf_batch(10, 1, 100_000, rng)
    freq = np.bincount([v.entries[0] for v in draws], minlength=10) / len(draws)
    assert np.all(np.abs(freq - 0.1) <= 0.01)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_rrf_positions_exchangeable(seed):
    # Position-2 index must also be uniform; chi-square against the flat law.
    draws = sample_random_rrf_batch(10, 3, 4000, np.random.default_rng(seed))
    counts = np.bincount([v.entries[1] for v in draws], minlength=10)
    chi2 = ((counts - 400.0) ** 2 / 400.0).sum()
    assert chi2 < 35.0  # p < 1e-4 under the null at 9 dof
