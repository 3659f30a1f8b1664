"""Small linear-algebra helpers shared by the variational and exit-time modules."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

DENSE_LIMIT = 3000


def symmetric_inertia(A, rtol=1e-12):
    """Return ``(n_pos, n_neg, n_zero)`` of a real symmetric matrix.

    Sylvester's law applied to an ``LDL^T`` factorization: a sparse LU in
    natural order without pivoting when that succeeds, otherwise a dense
    Bunch-Kaufman ``ldl``.
    """
    n = A.shape[0]
    pivots = None
    if sp.issparse(A) and n > DENSE_LIMIT:
        try:
            lu = splu(
                sp.csc_matrix(A),
                permc_spec="NATURAL",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
            if np.array_equal(lu.perm_r, np.arange(n)) and np.array_equal(lu.perm_c, np.arange(n)):
                pivots = lu.U.diagonal()
        except RuntimeError:
            pivots = None
    if pivots is None:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        _, D, _ = sla.ldl(dense, lower=True)
        pivots = np.linalg.eigvalsh(D)
    scale = np.max(np.abs(pivots)) if pivots.size else 1.0
    zero = np.abs(pivots) <= rtol * scale
    return int(np.sum((pivots > 0) & ~zero)), int(np.sum((pivots < 0) & ~zero)), int(np.sum(zero))


def solve_sparse(K, rhs):
    """Direct sparse solve; raises ``RuntimeError`` on exact singularity."""
    lu = splu(sp.csc_matrix(K))
    return lu.solve(np.asarray(rhs, dtype=float))
