"""Areal (graph) support: Laplacian, differencing operators and CAR form.

Adjacency files hold one ``i j`` pair per line (0-based, undirected, each
pair once); blank lines and ``#`` comments are ignored.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .sparse import NotPositiveDefinite, Symbolic, factorize


class ZeroDiagonal(ValueError):
    pass


class ConvergenceFailure(RuntimeError):
    pass


@dataclass
class GraphSupport:
    n: int
    edges: np.ndarray                    # (E, 2) with i < j
    labels: list | None = None
    n_components: int = field(init=False)

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.intp).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise ValueError("edge references a node index out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loops are not allowed")
        e = np.sort(e, axis=1)
        uniq = np.unique(e, axis=0)
        if len(uniq) != len(e):
            raise ValueError("duplicate edges in adjacency list")
        self.edges = uniq
        self.n_components = connected_components(self.adjacency(), directed=False)[0]
        if self.n_components > 1:
            warnings.warn(f"graph has {self.n_components} connected components; "
                          f"the Laplacian has rank n - {self.n_components}", stacklevel=2)

    def adjacency(self) -> sp.csr_matrix:
        e = self.edges
        W = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(self.n, self.n))
        return sp.csr_matrix(W + W.T)

    def neighbors(self, i: int) -> np.ndarray:
        W = self.adjacency()
        return W.indices[W.indptr[i]:W.indptr[i + 1]]


def read_adjacency(path, n: int | None = None) -> GraphSupport:
    pairs = []
    with open(path) as fh:
        for lineno, ln in enumerate(fh, 1):
            ln = ln.split("#", 1)[0].strip()
            if not ln:
                continue
            parts = ln.replace(",", " ").split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'i j', got {ln!r}")
            pairs.append((int(parts[0]), int(parts[1])))
    e = np.array(pairs, dtype=np.intp).reshape(-1, 2)
    if n is None:
        n = int(e.max()) + 1 if e.size else 1
    return GraphSupport(n, e)


def path_graph(n: int) -> GraphSupport:
    return GraphSupport(n, np.column_stack([np.arange(n - 1), np.arange(1, n)]))


def cycle_graph(n: int) -> GraphSupport:
    return GraphSupport(n, np.column_stack([np.arange(n), (np.arange(n) + 1) % n]))


def grid_graph(nx: int, ny: int) -> GraphSupport:
    idx = np.arange(nx * ny).reshape(ny, nx)
    e = np.concatenate([np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()]),
                        np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])])
    return GraphSupport(nx * ny, e)


def graph_laplacian(g: GraphSupport) -> sp.csc_matrix:
    W = g.adjacency()
    deg = np.asarray(W.sum(axis=1)).ravel()
    A = sp.csc_matrix(sp.diags(deg) - W)
    A.eliminate_zeros()
    A.sort_indices()
    return A


@dataclass
class DifferenceOperator:
    k: int
    kappa2: float
    matrix: sp.csc_matrix

    @property
    def parity(self) -> str:
        return "odd" if self.k % 2 else "even"

    def precision(self) -> sp.csc_matrix:
        Q = sp.csc_matrix(self.matrix.T @ self.matrix)
        Q.sort_indices()
        return Q


def cholesky_root(L, symbolic: Symbolic | None = None) -> sp.csc_matrix:
    """Upper-triangular ``D`` with ``D^T D = L`` (unpermuted Cholesky)."""
    f = factorize(L, ordering="natural", symbolic=symbolic)
    D = sp.csc_matrix(f.factor.T)
    D.sort_indices()
    return D


def difference_operator(A, kappa2: float, k: int) -> DifferenceOperator:
    """``Delta^(k) = L^((k+1)/2)`` for odd ``k`` and ``D L^(k/2)`` for even ``k``."""
    if int(k) != k or k < 0:
        raise ValueError(f"order k must be a non-negative integer, got {k}")
    k = int(k)
    n = A.shape[0]
    L = sp.csc_matrix(kappa2 * sp.identity(n, format="csc") + A)
    if k % 2:
        M = L
        for _ in range((k - 1) // 2):
            M = M @ L
    else:
        if not kappa2 > 0:
            # D needs a Cholesky of L; with kappa2 = 0 this is singular
            raise NotPositiveDefinite(0)
        M = cholesky_root(L)
        for _ in range(k // 2):
            M = M @ L
    M = sp.csc_matrix(M)
    M.sort_indices()
    return DifferenceOperator(k, float(kappa2), M)


def car_decompose(Q) -> tuple[sp.csr_matrix, np.ndarray]:
    """Conditional form ``Q = M^-1 (I - C)``: returns ``C`` (zero diagonal) and ``diag(M)``."""
    Q = sp.csr_matrix(Q)
    d = Q.diagonal()
    if np.any(d <= 0):
        raise ZeroDiagonal(f"precision has non-positive diagonal at index {int(np.flatnonzero(d <= 0)[0])}")
    R = sp.diags(d) - Q
    C = sp.csr_matrix(sp.diags(1.0 / d) @ R)
    C.setdiag(0.0)
    C.eliminate_zeros()
    C.sort_indices()
    return C, 1.0 / d


def gtf_mode_check(y, lam: float, k: int, g: GraphSupport, max_iter: int = 200_000,
                   tol: float = 1e-10) -> np.ndarray:
    """Graph trend filtering estimate (oracle for the kappa^2 -> 0 limit).

    Solves ``min 0.5 ||y - b||^2 + lam ||Delta b||_1`` with ``Delta`` the
    operator at ``kappa^2 = 0`` by ADMM; only meant for small graphs.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    if lam == 0:
        return y.copy()
    Lap = graph_laplacian(g).toarray()
    if k % 2:
        D = np.linalg.matrix_power(Lap, (k + 1) // 2)
    else:
        # incidence matrix plays the role of D at kappa^2 = 0 (D^T D = A)
        e = g.edges
        Inc = np.zeros((len(e), n))
        Inc[np.arange(len(e)), e[:, 0]] = 1.0
        Inc[np.arange(len(e)), e[:, 1]] = -1.0
        D = Inc @ np.linalg.matrix_power(Lap, k // 2)
    rho = 1.0
    Minv = np.linalg.inv(np.eye(n) + rho * D.T @ D)
    b = y.copy()
    z = D @ b
    u = np.zeros_like(z)
    for _ in range(max_iter):
        b = Minv @ (y + rho * D.T @ (z - u))
        Db = D @ b
        z_old = z
        v = Db + u
        z = np.sign(v) * np.maximum(np.abs(v) - lam / rho, 0.0)
        u = u + Db - z
        if np.linalg.norm(Db - z) < tol and rho * np.linalg.norm(D.T @ (z - z_old)) < tol:
            return b
    raise ConvergenceFailure(f"trend filtering did not converge in {max_iter} iterations")
