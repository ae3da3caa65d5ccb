"""Sparse Cholesky (LDL^T) factorization with a reusable fill-reducing ordering.

SuperLU is run in symmetric mode with diagonal pivoting disabled, which for
an SPD matrix yields ``P Q P^T = L U`` with ``U = D L^T``.  The ordering is
computed once (multiple minimum degree on ``Q + Q^T``) and can be handed
to later factorizations of matrices sharing the sparsity pattern.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidInputError, NotPositiveDefiniteError

_SUPERLU_OPTIONS = dict(SymmetricMode=True)


def fill_reducing_ordering(Q) -> np.ndarray:
    """Minimum-degree ordering ``p`` such that ``Q[p][:, p]`` has little fill."""
    Q = sp.csc_matrix(Q)
    try:
        lu = spla.splu(
            Q, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options=_SUPERLU_OPTIONS
        )
    except RuntimeError as exc:
        raise NotPositiveDefiniteError(f"factorization failed: {exc}") from exc
    return np.argsort(lu.perm_c)


class SparseCholesky:
    """Factorization of a symmetric positive-definite sparse matrix.

    Parameters
    ----------
    Q : sparse matrix
        Symmetric positive definite.
    ordering : array, optional
        Permutation from :func:`fill_reducing_ordering`; computed when omitted.
    """

    def __init__(self, Q, ordering=None):
        Q = sp.csc_matrix(Q, dtype=float)
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise InvalidInputError("matrix must be square")
        ordering = fill_reducing_ordering(Q) if ordering is None else np.asarray(ordering)
        self._factor_permuted(Q[ordering][:, ordering].tocsc(), ordering)

    @classmethod
    def from_permuted(cls, Qp, ordering) -> "SparseCholesky":
        """Factor ``Qp = Q[p][:, p]`` that the caller has already permuted by ``p = ordering``."""
        self = cls.__new__(cls)
        self._factor_permuted(sp.csc_matrix(Qp), np.asarray(ordering))
        return self

    def _factor_permuted(self, Qp, ordering):
        n = Qp.shape[0]
        self.n = n
        self.ordering = ordering
        try:
            lu = spla.splu(
                Qp, permc_spec="NATURAL", diag_pivot_thresh=0.0, options=_SUPERLU_OPTIONS
            )
        except RuntimeError as exc:
            raise NotPositiveDefiniteError(f"factorization failed: {exc}") from exc
        d = lu.U.diagonal()
        if not np.all(lu.perm_r == np.arange(n)) or not np.all(d > 0) or not np.all(np.isfinite(d)):
            raise NotPositiveDefiniteError("matrix is not positive definite")
        self._lu = lu
        self._sqrt_d = np.sqrt(d)
        self._L = None
        self._logdet = float(np.sum(np.log(d)))

    def logdet(self) -> float:
        return self._logdet

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        p = self.ordering
        y = self._lu.solve(np.ascontiguousarray(b[p]))
        x = np.empty_like(y)
        x[p] = y
        return x

    def solve_lt(self, z) -> np.ndarray:
        """Return ``x`` with ``Cov(x) = Q^{-1}`` when ``z`` is standard normal.

        Computes ``x = P^T L^{-T} D^{-1/2} z`` via ``(L D L^T)^{-1} L D^{1/2} z``.
        """
        z = np.asarray(z, dtype=float)
        if z.shape[0] != self.n:
            raise InvalidInputError("dimension mismatch")
        if self._L is None:
            self._L = self._lu.L.tocsr()
        w = self._L @ (self._sqrt_d[:, None] * z if z.ndim == 2 else self._sqrt_d * z)
        y = self._lu.solve(np.ascontiguousarray(w))
        x = np.empty_like(y)
        x[self.ordering] = y
        return x


class LinearPattern:
    """Matrices ``sum_k c_k B_k`` over fixed components sharing one sparsity pattern.

    The union pattern and its fill-reducing permutation are computed once,
    so each new set of coefficients costs a dot product over the nonzeros
    followed by the numeric factorization.
    """

    def __init__(self, components, ordering=None):
        comps = [sp.csc_matrix(B, dtype=float) for B in components]
        n = comps[0].shape[0]
        if any(B.shape != (n, n) for B in comps):
            raise InvalidInputError("components must be square and of equal size")
        union = sp.identity(n, format="csc")
        for B in comps:
            union = union + abs(B)
        union.sum_duplicates()
        union.sort_indices()
        self.n = n
        self._indices = union.indices.copy()
        self._indptr = union.indptr.copy()
        cols = np.repeat(np.arange(n), np.diff(union.indptr))
        keys = cols.astype(np.int64) * n + union.indices
        data = np.zeros((len(comps), keys.size))
        for k, B in enumerate(comps):
            B = B.copy()
            B.sum_duplicates()
            bcols = np.repeat(np.arange(n), np.diff(B.indptr))
            data[k, np.searchsorted(keys, bcols.astype(np.int64) * n + B.indices)] = B.data
        self._data = data
        self._keys_size = keys.size
        self._ordering = None if ordering is None else np.asarray(ordering)
        self._perm_src = None

    @property
    def ordering(self) -> np.ndarray:
        if self._ordering is None:
            # any diagonally dominant matrix on the pattern yields the same ordering
            n = self.n
            dom = sp.csc_matrix((-np.ones(self._keys_size), self._indices, self._indptr), shape=(n, n))
            dom = dom + sp.diags(np.diff(self._indptr) + 2.0)
            self._ordering = fill_reducing_ordering(dom)
        return self._ordering

    def _permuted_layout(self):
        if self._perm_src is None:
            n, p = self.n, self.ordering
            # tag each stored entry with its position, then permute the tags
            tag = sp.csc_matrix(
                (np.arange(1, self._keys_size + 1, dtype=float), self._indices, self._indptr), shape=(n, n)
            )
            tp = tag[p][:, p].tocsc()
            tp.sort_indices()
            self._perm_src = tp.data.astype(np.int64) - 1
            self._perm_indices = tp.indices.copy()
            self._perm_indptr = tp.indptr.copy()

    def matrix(self, coefs) -> sp.csc_matrix:
        values = np.asarray(coefs, dtype=float) @ self._data
        return sp.csc_matrix((values, self._indices, self._indptr), shape=(self.n, self.n))

    def factor(self, coefs) -> SparseCholesky:
        self._permuted_layout()
        values = np.asarray(coefs, dtype=float) @ self._data
        Qp = sp.csc_matrix(
            (values[self._perm_src], self._perm_indices, self._perm_indptr), shape=(self.n, self.n)
        )
        return SparseCholesky.from_permuted(Qp, self.ordering)
