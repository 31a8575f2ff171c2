"""Sparse symmetric factorization, solves and Gaussian sampling from precisions.

The factor is stored in compressed-column form with the diagonal first in each
column.  Numeric work is delegated to the selected kernel backend; the
symbolic analysis (ordering, elimination tree, fill pattern) is done once per
sparsity pattern and reused across every refactorization that an MCMC sweep
performs.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._backend import kernels

PIVOT_TOL = 1e-12


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a pivot is non-positive or tiny relative to its diagonal."""

    def __init__(self, column: int):
        self.column = int(column)
        super().__init__(f"matrix is not positive definite (pivot failed at permuted column {column})")


class DimensionMismatch(ValueError):
    pass


def as_symmetric_csc(M, check: bool = True) -> sp.csc_matrix:
    """Canonical csc copy of ``M`` with sorted indices and no explicit zeros."""
    if not sp.issparse(M):
        M = sp.csc_matrix(np.asarray(M, dtype=float))
    M = sp.csc_matrix(M, dtype=float, copy=True)
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"matrix must be square, got {M.shape}")
    if M.shape[0] < 1:
        raise DimensionMismatch("matrix dimension must be at least 1")
    M.eliminate_zeros()
    M.sort_indices()
    if check:
        D = M - M.T
        if D.nnz and np.max(np.abs(D.data)) > 0.0:
            raise DimensionMismatch("matrix is not symmetric")
    return M


def minimum_degree(M) -> np.ndarray:
    """Minimum-degree elimination ordering of the pattern of ``M``.

    Degrees are exact (the elimination graph is updated explicitly) and ties
    go to the lowest index, so the ordering is deterministic.
    """
    M = sp.csr_matrix(M)
    n = M.shape[0]
    adj = [set() for _ in range(n)]
    for i in range(n):
        for j in M.indices[M.indptr[i]:M.indptr[i + 1]]:
            if j != i:
                adj[i].add(int(j))
                adj[int(j)].add(i)
    heap = [(len(adj[i]), i) for i in range(n)]
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=np.intp)
    k = 0
    while heap:
        deg, v = heapq.heappop(heap)
        if done[v] or deg != len(adj[v]):
            continue
        done[v] = True
        order[k] = v
        k += 1
        nbrs = adj[v]
        for u in nbrs:
            au = adj[u]
            au.discard(v)
            au |= nbrs
            au.discard(u)
        for u in nbrs:
            heapq.heappush(heap, (len(adj[u]), u))
        adj[v] = set()
    return order


@dataclass
class Symbolic:
    """Ordering and fill pattern of a Cholesky factor.

    ``Lp``/``Li`` are the column pointers and row indices of the permuted
    lower factor.  ``row_ptr``/``row_col``/``row_pos`` list, for each row
    ``j``, the earlier columns ``k`` with ``L[j, k] != 0`` together with the
    position of that entry; this drives the left-looking numeric phase.
    """

    n: int
    perm: np.ndarray
    iperm: np.ndarray
    Lp: np.ndarray
    Li: np.ndarray
    row_ptr: np.ndarray
    row_col: np.ndarray
    row_pos: np.ndarray
    keys: np.ndarray
    _src: tuple = field(default=None, repr=False)

    @property
    def nnz(self) -> int:
        return int(self.Lp[-1])

    @classmethod
    def analyze(cls, M, ordering: str = "amd") -> "Symbolic":
        M = as_symmetric_csc(M, check=False)
        n = M.shape[0]
        if ordering == "amd":
            perm = minimum_degree(M)
        elif ordering == "natural":
            perm = np.arange(n, dtype=np.intp)
        else:
            raise ValueError(f"unknown ordering {ordering!r}")
        iperm = np.empty(n, dtype=np.intp)
        iperm[perm] = np.arange(n, dtype=np.intp)

        # lower-triangular structure of P M P^T, column by column
        coo = M.tocoo()
        r = iperm[coo.row]
        c = iperm[coo.col]
        low = r > c
        cols = [[] for _ in range(n)]
        for ri, ci in zip(r[low].tolist(), c[low].tolist()):
            cols[ci].append(ri)

        # fill via elimination tree: struct(j) = A(:, j) ∪ children's structs
        struct = [None] * n
        pending = [[] for _ in range(n)]
        for j in range(n):
            s = set(cols[j])
            for ch in pending[j]:
                s.update(struct[ch])
            s.discard(j)
            rows = sorted(s)
            struct[j] = rows
            pending[j] = None
            if rows:
                pending[rows[0]].append(j)

        Lp = np.zeros(n + 1, dtype=np.intp)
        for j in range(n):
            Lp[j + 1] = Lp[j] + 1 + len(struct[j])
        Li = np.empty(Lp[-1], dtype=np.intp)
        for j in range(n):
            Li[Lp[j]] = j
            Li[Lp[j] + 1:Lp[j + 1]] = struct[j]

        row_lists = [[] for _ in range(n)]
        for k in range(n):
            for p in range(Lp[k] + 1, Lp[k + 1]):
                row_lists[Li[p]].append((k, p))
        row_ptr = np.zeros(n + 1, dtype=np.intp)
        for j in range(n):
            row_ptr[j + 1] = row_ptr[j] + len(row_lists[j])
        flat = [kp for lst in row_lists for kp in lst]
        row_col = np.array([kp[0] for kp in flat], dtype=np.intp)
        row_pos = np.array([kp[1] for kp in flat], dtype=np.intp)

        col_of = np.repeat(np.arange(n, dtype=np.intp), np.diff(Lp))
        keys = col_of.astype(np.int64) * n + Li
        return cls(n, perm, iperm, Lp, Li, row_ptr, row_col, row_pos, keys)

    def value_map(self, M: sp.csc_matrix):
        """Positions in ``Lx`` of the entries of canonical ``M`` that land on or
        below the permuted diagonal.  Returns ``(src, dst)`` or ``None`` when
        the pattern of ``M`` is not contained in this symbolic pattern."""
        src_key = (M.indptr.tobytes(), M.indices.tobytes())
        if self._src is not None and self._src[0] == src_key:
            return self._src[1]
        n = self.n
        cols = np.repeat(np.arange(n, dtype=np.intp), np.diff(M.indptr))
        r = self.iperm[M.indices]
        c = self.iperm[cols]
        src = np.flatnonzero(r >= c)
        key = c[src].astype(np.int64) * n + r[src]
        dst = np.searchsorted(self.keys, key)
        dst_clip = np.minimum(dst, len(self.keys) - 1)
        if np.any(self.keys[dst_clip] != key):
            return None
        out = (src, dst)
        self._src = (src_key, out)
        return out


@dataclass
class CholeskyFactor:
    """``P M P^T = F F^T`` where ``(P x)[i] = x[perm[i]]``."""

    symbolic: Symbolic
    Lx: np.ndarray

    @property
    def n(self) -> int:
        return self.symbolic.n

    @property
    def perm(self) -> np.ndarray:
        return self.symbolic.perm

    @property
    def diagonal(self) -> np.ndarray:
        return self.Lx[self.symbolic.Lp[:-1]]

    @property
    def factor(self) -> sp.csc_matrix:
        s = self.symbolic
        return sp.csc_matrix((self.Lx.copy(), s.Li.copy(), s.Lp.copy()), shape=(s.n, s.n))

    def mul_Ft(self, x):
        """``F^T x`` (no permutation) without forming a matrix."""
        s = self.symbolic
        x = np.asarray(x, dtype=float)
        return np.add.reduceat(self.Lx * x[s.Li], s.Lp[:-1])

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(self.diagonal)))

    def _check(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise DimensionMismatch(f"right-hand side has length {b.shape[0]}, expected {self.n}")
        return b

    def solve_L(self, b):
        """``F^{-1} b`` (no permutation)."""
        x = np.array(b, dtype=float)
        s = self.symbolic
        kernels.lsolve(s.Lp, s.Li, self.Lx, x)
        return x

    def solve_Lt(self, b):
        """``F^{-T} b`` (no permutation)."""
        x = np.array(b, dtype=float)
        s = self.symbolic
        kernels.ltsolve(s.Lp, s.Li, self.Lx, x)
        return x

    def solve(self, b):
        b = self._check(b)
        perm = self.symbolic.perm
        if b.ndim == 2:
            return np.column_stack([self.solve(b[:, j]) for j in range(b.shape[1])])
        u = self.solve_Lt(self.solve_L(b[perm]))
        x = np.empty_like(u)
        x[perm] = u
        return x

    def sample(self, h, rng, z=None):
        """Draw from ``N(M^{-1} h, M^{-1})``."""
        perm = self.symbolic.perm
        if h is None:
            y = np.zeros(self.n)
        else:
            y = self.solve_L(self._check(h)[perm])
        if z is None:
            z = rng.standard_normal(self.n)
        u = self.solve_Lt(y + z)
        x = np.empty_like(u)
        x[perm] = u
        return x


def factorize_values(symbolic: Symbolic, Lx: np.ndarray, ref_diag: np.ndarray | None = None,
                     tol: float = PIVOT_TOL) -> CholeskyFactor:
    """Numeric factorization of values already scattered onto ``symbolic``'s pattern.

    ``Lx`` is overwritten.  ``ref_diag`` defaults to the scattered diagonal.
    """
    s = symbolic
    if ref_diag is None:
        ref_diag = Lx[s.Lp[:-1]].copy()
    j = kernels.chol_numeric(s.Lp, s.Li, Lx, s.row_ptr, s.row_col, s.row_pos, ref_diag, tol)
    if j >= 0:
        raise NotPositiveDefinite(j)
    return CholeskyFactor(s, Lx)


def factorize(M, ordering: str = "amd", symbolic: Symbolic | None = None, check: bool = True,
              tol: float = PIVOT_TOL) -> CholeskyFactor:
    """Cholesky factor of a symmetric positive definite sparse matrix.

    Passing ``symbolic`` from an earlier call skips the ordering when the
    pattern of ``M`` fits inside it; otherwise the analysis is redone.
    """
    M = as_symmetric_csc(M, check=check)
    if symbolic is not None and symbolic.n != M.shape[0]:
        raise DimensionMismatch(f"symbolic analysis is for n={symbolic.n}, matrix has n={M.shape[0]}")
    mapping = None
    if symbolic is not None:
        mapping = symbolic.value_map(M)
    if mapping is None:
        symbolic = Symbolic.analyze(M, ordering)
        mapping = symbolic.value_map(M)
    src, dst = mapping
    Lx = np.zeros(symbolic.nnz)
    Lx[dst] = M.data[src]
    return factorize_values(symbolic, Lx, tol=tol)


def log_det(f: CholeskyFactor) -> float:
    return f.log_det()


def solve(f: CholeskyFactor, b) -> np.ndarray:
    return f.solve(b)


def sample_gaussian_precision(f: CholeskyFactor, mean_term, rng) -> np.ndarray:
    """One draw of ``x ~ N(Q^{-1} h, Q^{-1})`` given the factor of ``Q``."""
    return f.sample(mean_term, rng)


# ------------------------------------------------------- fixed-pattern assembly

def pattern_union(mats, shape=None) -> sp.csc_matrix:
    """Structural union of the patterns of ``mats`` (all ones, sorted csc)."""
    acc = None
    for M in mats:
        if M is None:
            continue
        A = sp.csc_matrix(M, dtype=float)
        A = sp.csc_matrix((np.ones_like(A.data), A.indices, A.indptr), shape=A.shape)
        acc = A if acc is None else acc + A
    if acc is None:
        acc = sp.csc_matrix(shape)
    acc = sp.csc_matrix(acc)
    acc.sum_duplicates()
    acc.data[:] = 1.0
    acc.sort_indices()
    return acc


def _keys(M: sp.csc_matrix) -> np.ndarray:
    cols = np.repeat(np.arange(M.shape[1], dtype=np.int64), np.diff(M.indptr))
    return cols * M.shape[0] + M.indices


def align(pattern: sp.csc_matrix, M) -> np.ndarray:
    """Values of ``M`` laid out on ``pattern``'s data array (zeros elsewhere)."""
    M = sp.csc_matrix(M, dtype=float)
    M.sum_duplicates()
    M.sort_indices()
    pk = _keys(pattern)
    mk = _keys(M)
    pos = np.searchsorted(pk, mk)
    if np.any(pos >= len(pk)) or np.any(pk[np.minimum(pos, len(pk) - 1)] != mk):
        raise ValueError("matrix pattern is not contained in the target pattern")
    out = np.zeros(len(pk))
    out[pos] = M.data
    return out


def positions(pattern: sp.csc_matrix, sub: sp.csc_matrix) -> np.ndarray:
    """Index into ``pattern.data`` of every stored entry of ``sub`` (csc order)."""
    pk = _keys(pattern)
    sk = _keys(sp.csc_matrix(sub))
    pos = np.searchsorted(pk, sk)
    if np.any(pos >= len(pk)) or np.any(pk[np.minimum(pos, len(pk) - 1)] != sk):
        raise ValueError("sub-pattern is not contained in the target pattern")
    return pos


def poly_mul(P, R, mid=None):
    """Product of matrix polynomials ``P(t) @ mid @ R(t)`` (coefficient lists)."""
    out = [None] * (len(P) + len(R) - 1)
    for i, a in enumerate(P):
        for j, b in enumerate(R):
            m = a @ mid @ b if mid is not None else a @ b
            out[i + j] = m if out[i + j] is None else out[i + j] + m
    return [sp.csc_matrix(m) for m in out]


class PolyMatrix:
    """Sparse matrix ``sum_j t^j M_j`` stored on one fixed pattern."""

    def __init__(self, coefs):
        self.pattern = pattern_union(coefs)
        self.coef = np.vstack([align(self.pattern, c) for c in coefs])
        self.degree = len(coefs) - 1

    def data(self, t: float) -> np.ndarray:
        return np.power(t, np.arange(self.degree + 1)) @ self.coef

    def matrix(self, t: float) -> sp.csc_matrix:
        P = self.pattern
        return sp.csc_matrix((self.data(t), P.indices, P.indptr), shape=P.shape)


class TripleProductPlan:
    """Assembles ``K^T diag(w) K`` onto a fixed pattern from ``K``'s data.

    ``K`` is given by its (csc) pattern; ``data(kdata, w)`` returns the values
    of the product on ``self.pattern`` using a single ``bincount``.
    """

    def __init__(self, K_pattern: sp.csc_matrix):
        Kp = sp.csc_matrix(K_pattern)
        Kp.sort_indices()
        m, n = Kp.shape
        self.pattern = pattern_union([Kp.T @ Kp])
        cols = np.repeat(np.arange(n, dtype=np.intp), np.diff(Kp.indptr))
        rows = Kp.indices.astype(np.intp)
        order = np.argsort(rows, kind="stable")
        bounds = np.searchsorted(rows[order], np.arange(m + 1))
        pa, pb, ri = [], [], []
        for i in range(m):
            ent = order[bounds[i]:bounds[i + 1]]
            if ent.size == 0:
                continue
            A, B = np.meshgrid(ent, ent, indexing="ij")
            pa.append(A.ravel())
            pb.append(B.ravel())
            ri.append(np.full(A.size, i, dtype=np.intp))
        self.pa = np.concatenate(pa) if pa else np.zeros(0, np.intp)
        self.pb = np.concatenate(pb) if pb else np.zeros(0, np.intp)
        self.row = np.concatenate(ri) if ri else np.zeros(0, np.intp)
        # entry (cols[pa], cols[pb]) of the product, located on the pattern
        key = cols[self.pb].astype(np.int64) * n + cols[self.pa]
        self.target = np.searchsorted(_keys(self.pattern), key)
        self.nnz = self.pattern.nnz

    def data(self, kdata: np.ndarray, w: np.ndarray) -> np.ndarray:
        v = kdata[self.pa] * kdata[self.pb] * w[self.row]
        return np.bincount(self.target, weights=v, minlength=self.nnz)

    def matrix(self, kdata, w) -> sp.csc_matrix:
        P = self.pattern
        return sp.csc_matrix((self.data(kdata, w), P.indices, P.indptr), shape=P.shape)
