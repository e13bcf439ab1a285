"""Sparse linear algebra substrate.

Triplet assembly into compressed-row storage and a direct LU solver
(SuperLU through scipy) with forward and transpose solves. Every discrete
Jacobian in the package lives in a :class:`SparseMatrix`; adjoint systems
are solved with :func:`solve_transpose` on the very same factorization the
primal Newton step used, which keeps the transposes exact.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class AssemblyError(ValueError):
    pass


class SolverError(RuntimeError):
    """Raised on a singular or numerically unusable factorization."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SparseMatrix:
    """Immutable CSR matrix with explicit dimensions.

    Entries are sorted by row then column and duplicates are summed at
    build time, so two assemblies of the same triplets are bit-identical.
    """

    __slots__ = ("_csr",)

    def __init__(self, csr):
        csr = sp.csr_matrix(csr)
        csr.sum_duplicates()
        csr.sort_indices()
        csr.data.flags.writeable = False
        self._csr = csr

    @property
    def rows(self):
        return self._csr.shape[0]

    @property
    def cols(self):
        return self._csr.shape[1]

    @property
    def shape(self):
        return self._csr.shape

    @property
    def nnz(self):
        return self._csr.nnz

    @property
    def csr(self):
        return self._csr

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.cols:
            raise ValueError(f"vector of length {v.shape[0]} does not match {self.cols} columns")
        return self._csr @ v

    def apply_transpose(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.rows:
            raise ValueError(f"vector of length {v.shape[0]} does not match {self.rows} rows")
        return self._csr.T @ v

    def transpose(self):
        return SparseMatrix(self._csr.T.tocsr())

    def toarray(self):
        return self._csr.toarray()

    def entries(self):
        """Yield ``(row, col, value)`` in storage order."""
        coo = self._csr.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def __matmul__(self, v):
        return self.apply(v)

    def __repr__(self):
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


def assemble(triplets, rows, cols):
    """Build a :class:`SparseMatrix` from ``(row, col, value)`` triplets.

    ``triplets`` is either a sequence of 3-tuples or a tuple of three
    equally long arrays ``(I, J, V)``. Duplicate positions are summed.
    """
    if isinstance(triplets, tuple) and len(triplets) == 3 and np.ndim(triplets[0]) == 1:
        I, J, V = (np.asarray(a) for a in triplets)
    else:
        arr = list(triplets)
        if arr:
            I, J, V = (np.asarray(c) for c in zip(*arr))
        else:
            I = J = np.zeros(0, dtype=np.int64)
            V = np.zeros(0)
    I = I.astype(np.int64, copy=False)
    J = J.astype(np.int64, copy=False)
    V = V.astype(float, copy=False)
    if not (I.shape == J.shape == V.shape):
        raise AssemblyError("row, column and value arrays differ in length")
    bad = (I < 0) | (I >= rows) | (J < 0) | (J >= cols)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise AssemblyError(
            f"triplet {k} at ({int(I[k])}, {int(J[k])}) outside a {rows}x{cols} matrix"
        )
    return SparseMatrix(sp.coo_matrix((V, (I, J)), shape=(rows, cols)))


def from_scipy(m):
    return SparseMatrix(m)


class Factorization:
    """LU factors of a square :class:`SparseMatrix`, reusable for many solves."""

    # reciprocal pivot growth below this is reported as ill-conditioned
    pivot_ratio_floor = 1e-15

    def __init__(self, A):
        if A.rows != A.cols:
            raise SolverError(f"matrix is not square ({A.rows}x{A.cols})")
        self.A = A
        try:
            self._lu = spla.splu(A.csr.tocsc(), permc_spec="COLAMD",
                                 diag_pivot_thresh=1.0)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}",
                              {"n": A.rows, "nnz": A.nnz}) from None
        pivots = np.abs(self._lu.U.diagonal())
        pmax = float(pivots.max()) if pivots.size else 0.0
        pmin = float(pivots.min()) if pivots.size else 0.0
        self.diagnostics = {
            "n": A.rows,
            "min_pivot": pmin,
            "max_pivot": pmax,
            "argmin_pivot": int(np.argmin(pivots)) if pivots.size else -1,
        }
        if pivots.size and (pmax == 0.0 or pmin <= self.pivot_ratio_floor * pmax):
            raise SolverError("matrix is singular to working precision", self.diagnostics)

    def _solve(self, b, trans):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.A.rows:
            raise ValueError(f"right-hand side of length {b.shape[0]} for {self.A.rows} unknowns")
        if not np.any(b):
            return np.zeros_like(b)
        x = self._lu.solve(b, trans=trans)
        M = self.A.csr if trans == "N" else self.A.csr.T
        # two sweeps of iterative refinement; cheap with the factors at hand
        for _ in range(2):
            r = b - M @ x
            x = x + self._lu.solve(r, trans=trans)
        if not np.all(np.isfinite(x)):
            raise SolverError("solve produced non-finite values", self.diagnostics)
        return x

    def solve(self, b):
        return self._solve(b, "N")

    def solve_transpose(self, b):
        return self._solve(b, "T")


def factorize(A):
    return Factorization(A)


def solve_direct(A, b):
    """Solve ``A x = b`` by sparse LU with partial pivoting."""
    return Factorization(A).solve(b)


def solve_transpose(A, b):
    """Solve ``A^T x = b`` on the factors of ``A``."""
    return Factorization(A).solve_transpose(b)


def relative_residual(A, x, b, transpose=False):
    r = (A.apply_transpose(x) if transpose else A.apply(x)) - b
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(r) / (nb if nb > 0 else 1.0))
