"""Sparse graph operators used by the GCN and the propagation baseline.

Sparse matrices are ``scipy.sparse.csr_matrix`` in canonical form (sorted
column indices, no duplicates) and dense matrices are C-ordered float64
``numpy`` arrays.
"""
import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DegenerateGraphError, DimensionError, ValidationError

__all__ = [
    "as_csr",
    "check_symmetric",
    "add_self_loops",
    "sym_normalize",
    "normalized_adjacency",
    "spmm",
    "smooth",
    "row_normalize",
    "RowNormalizer",
]


def as_csr(A):
    """Return ``A`` as a canonical float64 CSR matrix (copying if needed)."""
    if sp.issparse(A):
        A = sp.csr_matrix(A, dtype=np.float64, copy=True)
    else:
        A = sp.csr_matrix(np.asarray(A, dtype=np.float64))
    A.sum_duplicates()
    A.sort_indices()
    return A


def _check_square(A):
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")


def check_symmetric(A):
    diff = A - A.T
    diff.eliminate_zeros()
    if diff.nnz:
        raise ValidationError("adjacency matrix is not symmetric")


def add_self_loops(A):
    """Return ``A + I`` in canonical CSR form."""
    A = as_csr(A)
    _check_square(A)
    check_symmetric(A)
    out = A + sp.identity(A.shape[0], dtype=np.float64, format="csr")
    return as_csr(out)


def sym_normalize(A_tilde):
    """Symmetric normalization ``D^-1/2 A D^-1/2`` with ``D`` the row sums.

    The sparsity pattern of the input is kept. Entry ``(i, j)`` is computed as
    ``a_ij / (s_i * s_j)``, so the result is exactly symmetric whenever the
    input is.
    """
    A = as_csr(A_tilde)
    _check_square(A)
    check_symmetric(A)
    deg = np.asarray(A.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        bad = int(np.flatnonzero(deg <= 0)[0])
        raise DegenerateGraphError(f"node {bad} has non-positive degree {deg[bad]}")
    s = np.sqrt(deg)
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    values = A.data / (s[rows] * s[A.indices])
    return sp.csr_matrix((values, A.indices.copy(), A.indptr.copy()), shape=A.shape)


def normalized_adjacency(A):
    """Renormalized propagation operator used by every GCN layer."""
    return sym_normalize(add_self_loops(A))


def spmm(S, D):
    """Sparse-dense product ``S @ D``.

    scipy's CSR kernel walks each row's stored entries in index order, so the
    accumulation order is fixed and repeated calls are bitwise identical.
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2:
        raise DimensionError(f"dense operand must be 2-D, got ndim={D.ndim}")
    if S.shape[1] != D.shape[0]:
        raise DimensionError(f"cannot multiply {S.shape} by {D.shape}")
    return np.ascontiguousarray(S @ D)


def smooth(X, A_hat, times):
    """Apply the smoothing operator ``times`` times: ``A_hat**times @ X``."""
    if times < 0:
        raise ValueError("times must be non-negative")
    Z = np.array(X, dtype=np.float64)
    if A_hat.shape[1] != Z.shape[0]:
        raise DimensionError(f"cannot multiply {A_hat.shape} by {Z.shape}")
    for _ in range(times):
        Z = spmm(A_hat, Z)
    return Z


def row_normalize(X):
    """Divide each row by its L1 norm; all-zero rows pass through.

    Accepts dense arrays and scipy sparse matrices, returning the same kind.
    """
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=np.float64, copy=True)
        norms = np.asarray(abs(X).sum(axis=1)).ravel()
        scale = np.divide(1.0, norms, out=np.ones_like(norms), where=norms > 0)
        return sp.csr_matrix(sp.diags(scale) @ X)
    X = np.array(X, dtype=np.float64)
    norms = np.abs(X).sum(axis=1, keepdims=True)
    np.divide(X, norms, out=X, where=norms > 0)
    return X


class RowNormalizer(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`row_normalize`."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return row_normalize(X)
