"""Weighted kernel matrices.

A kernel ``K`` on the grid acts by ``(K f)_i = sum_j K[i, j] w_j f_j``, so
composition inserts the weights: ``(A B)[i, j] = sum_l A[i, l] w_l B[l, j]``.
Matrices are kept as CSR arrays pruned to their support; products are
formed densely while the grid is small enough for that to be faster.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

DENSE_LIMIT = 4096


def as_csr(A) -> sp.csr_array:
    if sp.issparse(A):
        out = sp.csr_array(A)
    else:
        out = sp.csr_array(np.asarray(A))
    out.eliminate_zeros()
    return out


def dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A)


def apply(A, w, f) -> np.ndarray:
    return A @ (w * np.asarray(f, dtype=float))


def compose(A, w, B):
    """Kernel of the composition ``A o B`` on the weighted grid."""
    n = A.shape[0]
    if n <= DENSE_LIMIT:
        return as_csr(dense(A) @ (w[:, None] * dense(B)))
    return as_csr(A @ sp.diags_array(w) @ B)


def symmetrize(A):
    return as_csr((A + A.T) * 0.5)


def transpose(A):
    return as_csr(A.T)
