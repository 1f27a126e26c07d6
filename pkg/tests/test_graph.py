import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from m3s.exceptions import DegenerateGraphError, DimensionError, ValidationError
from m3s.graph import (
    RowNormalizer,
    add_self_loops,
    normalized_adjacency,
    row_normalize,
    smooth,
    spmm,
    sym_normalize,
)


def dense_normalized(A):
    """Straight-line dense oracle for D^-1/2 (A + I) D^-1/2."""
    At = A + np.eye(A.shape[0])
    d = At.sum(axis=1)
    return np.diag(d**-0.5) @ At @ np.diag(d**-0.5)


def test_self_loops_examples():
    assert add_self_loops(sp.csr_matrix((1, 1))).toarray().tolist() == [[1.0]]
    assert add_self_loops([[0, 1], [1, 0]]).toarray().tolist() == [[1, 1], [1, 1]]
    path = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    out = add_self_loops(path).toarray()
    assert np.array_equal(np.diag(out), np.ones(3))
    assert np.array_equal(out - np.eye(3), path)


def test_self_loops_rejects_bad_input():
    with pytest.raises(DimensionError):
        add_self_loops(np.zeros((2, 3)))
    with pytest.raises(ValidationError):
        add_self_loops([[0, 1], [0, 0]])


def test_sym_normalize_examples():
    assert sym_normalize([[1.0]]).toarray().tolist() == [[1.0]]
    assert np.allclose(sym_normalize([[1, 1], [1, 1]]).toarray(), 0.5)
    star = np.array([[1, 1, 1], [1, 1, 0], [1, 0, 1]], dtype=float)
    out = sym_normalize(star).toarray()
    assert out[0, 1] == pytest.approx(1 / np.sqrt(6), abs=1e-12)
    assert out[0, 1] == pytest.approx(0.40825, abs=1e-5)


def test_sym_normalize_isolated_node():
    with pytest.raises(DegenerateGraphError):
        sym_normalize(np.zeros((2, 2)))


def test_spmm_examples():
    S = sp.csr_matrix([[0.5, 0.5], [0.5, 0.5]])
    assert spmm(S, [[2.0], [4.0]]).tolist() == [[3.0], [3.0]]
    D = np.random.default_rng(0).random((4, 3))
    assert np.array_equal(spmm(sp.identity(4, format="csr"), D), D)
    assert not spmm(sp.csr_matrix((4, 4)), D).any()
    with pytest.raises(DimensionError):
        spmm(sp.identity(3, format="csr"), D)


def test_smooth_examples():
    X = np.array([[2.0], [4.0]])
    A_hat = normalized_adjacency([[0, 1], [1, 0]])
    assert np.array_equal(smooth(X, A_hat, 0), X)
    assert np.allclose(smooth(X, A_hat, 1), [[3.0], [3.0]])


def test_smooth_converges_to_sqrt_degree():
    A = random_graph(15, 0.25, seed=4)
    A_hat = normalized_adjacency(A)
    d = np.asarray(A.sum(axis=1)).ravel() + 1
    target = np.sqrt(d) / np.linalg.norm(np.sqrt(d))
    Z = smooth(np.random.default_rng(1).random((15, 3)), A_hat, 50)
    for col in Z.T:
        assert abs(col @ target) / np.linalg.norm(col) > 1 - 1e-4


def test_row_normalize_examples():
    assert row_normalize(np.array([[2.0, 2.0]])).tolist() == [[0.5, 0.5]]
    assert row_normalize(np.array([[0.0, 0.0]])).tolist() == [[0.0, 0.0]]
    assert row_normalize(np.array([[1.0]])).tolist() == [[1.0]]
    S = row_normalize(sp.csr_matrix([[2.0, 2.0], [0.0, 0.0]]))
    assert sp.issparse(S) and S.toarray().tolist() == [[0.5, 0.5], [0.0, 0.0]]
    assert RowNormalizer().fit_transform(np.array([[1.0, 3.0]])).tolist() == [[0.25, 0.75]]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 12), p=st.floats(0.0, 1.0), seed=st.integers(0, 10_000))
def test_normalized_adjacency_properties(n, p, seed):
    A = random_graph(n, p, seed, connected=False)
    A_hat = normalized_adjacency(A)
    dense = A_hat.toarray()
    assert np.array_equal(dense, dense.T)
    assert np.allclose(dense, dense_normalized(A.toarray()), atol=1e-14)
    eig = np.linalg.eigvalsh(dense)
    assert eig.max() <= 1 + 1e-10 and eig.min() >= -1 - 1e-10
    assert np.all(dense >= 0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 10), m=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_spmm_matches_dense(n, m, seed):
    rng = np.random.default_rng(seed)
    S = sp.random(n, n, density=0.4, random_state=seed, format="csr")
    D = rng.standard_normal((n, m))
    assert np.allclose(spmm(S, D), S.toarray() @ D, atol=1e-12)
    assert np.array_equal(spmm(S, D), spmm(S, D))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 8), f=st.integers(1, 6))
def test_row_normalize_properties(seed, n, f):
    rng = np.random.default_rng(seed)
    X = rng.random((n, f)) * (rng.random((n, f)) < 0.6)
    out = row_normalize(X)
    sums = out.sum(axis=1)
    nonzero = X.sum(axis=1) > 0
    assert np.allclose(sums[nonzero], 1.0)
    assert not out[~nonzero].any()
    assert np.allclose(row_normalize(sp.csr_matrix(X)).toarray(), out)
