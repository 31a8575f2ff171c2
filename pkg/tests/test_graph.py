import numpy as np
import pytest
import scipy.sparse as sp

from lmaspatial.graph import (ConvergenceFailure, GraphSupport, ZeroDiagonal, car_decompose,
                              cholesky_root, cycle_graph, difference_operator, graph_laplacian,
                              grid_graph, gtf_mode_check, path_graph, read_adjacency)
from lmaspatial.sparse import NotPositiveDefinite


class TestGraph:
    def test_path_laplacian(self):
        np.testing.assert_array_equal(graph_laplacian(path_graph(3)).toarray(),
                                      [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])

    def test_single_node(self):
        np.testing.assert_array_equal(graph_laplacian(GraphSupport(1, np.zeros((0, 2)))).toarray(), [[0.0]])

    def test_columbus_row_sums(self, columbus):
        _, g = columbus
        A = graph_laplacian(g)
        deg = np.bincount(g.edges.ravel(), minlength=49)
        np.testing.assert_array_equal(A.diagonal(), deg)
        np.testing.assert_array_equal(A @ np.ones(49), 0.0)
        assert g.n == 49 and g.n_components == 1

    def test_rank(self):
        A = graph_laplacian(grid_graph(3, 4)).toarray()
        assert np.linalg.matrix_rank(A) == 11

    def test_disconnected_warns(self):
        with pytest.warns(UserWarning, match="2 connected components"):
            g = GraphSupport(4, np.array([[0, 1], [2, 3]]))
        assert np.linalg.matrix_rank(graph_laplacian(g).toarray()) == 2

    @pytest.mark.parametrize("edges", [[[0, 0]], [[0, 1], [1, 0]], [[0, 5]]])
    def test_invalid_edges(self, edges):
        with pytest.raises(ValueError):
            GraphSupport(3, np.array(edges))

    def test_read_adjacency(self, tmp_path):
        (tmp_path / "a.txt").write_text("# comment\n0 1\n1 2  # trailing\n\n")
        g = read_adjacency(tmp_path / "a.txt")
        assert g.n == 3 and len(g.edges) == 2
        np.testing.assert_array_equal(g.neighbors(1), [0, 2])
        (tmp_path / "b.txt").write_text("0 1 2\n")
        with pytest.raises(ValueError, match="b.txt:1"):
            read_adjacency(tmp_path / "b.txt")


FIXTURES = {"path": path_graph(6), "cycle": cycle_graph(5), "grid": grid_graph(3, 3)}


class TestDifference:
    @pytest.mark.parametrize("name", sorted(FIXTURES))
    @pytest.mark.parametrize("k", [0, 1, 2, 3])
    @pytest.mark.parametrize("kappa2", [0.1, 1.0, 5.0])
    def test_defining_identity(self, name, k, kappa2):
        g = FIXTURES[name]
        A = graph_laplacian(g)
        D = difference_operator(A, kappa2, k)
        L = kappa2 * np.eye(g.n) + A.toarray()
        expect = np.linalg.matrix_power(L, k + 1)
        got = D.precision().toarray()
        assert np.abs(got - expect).max() <= 1e-10 * np.abs(expect).max()
        assert D.parity == ("odd" if k % 2 else "even")

    def test_k1_is_L(self):
        A = graph_laplacian(path_graph(4))
        np.testing.assert_array_equal(difference_operator(A, 2.0, 1).matrix.toarray(),
                                      2.0 * np.eye(4) + A.toarray())

    def test_k0_path(self):
        A = graph_laplacian(path_graph(3))
        D = difference_operator(A, 1.0, 0)
        np.testing.assert_allclose(D.precision().toarray(), np.eye(3) + A.toarray(), atol=1e-14)
        assert sp.tril(D.matrix, -1).nnz == 0

    def test_k2_dense_cube(self):
        A = graph_laplacian(path_graph(5))
        L = 0.5 * np.eye(5) + A.toarray()
        got = difference_operator(A, 0.5, 2).precision().toarray()
        np.testing.assert_allclose(got, L @ L @ L, atol=1e-10 * np.abs(L @ L @ L).max())

    def test_even_needs_positive_kappa(self):
        with pytest.raises(NotPositiveDefinite):
            difference_operator(graph_laplacian(path_graph(4)), 0.0, 2)

    def test_cholesky_root(self):
        L = sp.csc_matrix(graph_laplacian(cycle_graph(6)) + 0.3 * sp.identity(6))
        D = cholesky_root(L)
        np.testing.assert_allclose((D.T @ D).toarray(), L.toarray(), atol=1e-13)

    def test_grf_covariance(self, rng):
        # draw Delta eta ~ N(0, xi2 I) and solve for eta
        g = path_graph(5)
        D = difference_operator(graph_laplacian(g), 1.0, 1).matrix.toarray()
        xi2 = 1.7
        n = 100_000
        eta = np.linalg.solve(D, np.sqrt(xi2) * rng.standard_normal((5, n))).T
        S = xi2 * np.linalg.inv(D.T @ D)
        se = np.sqrt((S ** 2 + np.outer(np.diag(S), np.diag(S))) / n)
        assert np.all(np.abs(np.cov(eta.T) - S) < 3.5 * se)


class TestCar:
    def test_identity(self):
        C, m = car_decompose(sp.identity(3))
        assert C.nnz == 0
        np.testing.assert_array_equal(m, 1.0)

    def test_two_by_two(self):
        C, m = car_decompose(sp.csc_matrix([[2.0, -1.0], [-1.0, 2.0]]))
        np.testing.assert_allclose(C.toarray(), [[0, 0.5], [0.5, 0]])
        np.testing.assert_allclose(m, [0.5, 0.5])

    def test_roundtrip_and_conditionals(self):
        A = graph_laplacian(path_graph(4))
        Q = (sp.identity(4) + A) @ (sp.identity(4) + A)
        C, m = car_decompose(Q)
        np.testing.assert_allclose((sp.diags(1 / m) @ (sp.identity(4) - C)).toarray(), Q.toarray(), atol=1e-12)
        S = np.linalg.inv(Q.toarray())
        x = np.array([0.3, -1.2, 0.8, 2.0])
        for i in range(4):
            o = [j for j in range(4) if j != i]
            w = S[i, o] @ np.linalg.inv(S[np.ix_(o, o)])
            var = S[i, i] - w @ S[o, i]
            assert abs((C[i] @ x) - w @ x[o]) < 1e-12
            assert abs(m[i] - var) < 1e-12

    def test_zero_diagonal(self):
        with pytest.raises(ZeroDiagonal):
            car_decompose(sp.csc_matrix([[1.0, 0.0], [0.0, 0.0]]))


def _gtf_brute(y, lam, D, iters=200_000):
    """Coordinate descent on the dual (box-constrained QP) as an independent oracle."""
    m = D.shape[0]
    u = np.zeros(m)
    DDt = D @ D.T
    Dy = D @ y
    for _ in range(iters):
        old = u.copy()
        for j in range(m):
            r = Dy[j] - DDt[j] @ u + DDt[j, j] * u[j]
            u[j] = np.clip(r / DDt[j, j], -lam, lam)
        if np.abs(u - old).max() < 1e-14:
            break
    return y - D.T @ u


class TestGtf:
    def test_no_penalty(self, rng):
        y = rng.normal(size=6)
        np.testing.assert_array_equal(gtf_mode_check(y, 0.0, 0, path_graph(6)), y)

    def test_full_fusion(self, rng):
        y = rng.normal(size=6)
        b = gtf_mode_check(y, 1e3, 0, path_graph(6))
        np.testing.assert_allclose(b, y.mean(), atol=1e-6)

    def test_path_k0_matches_dual_cd(self):
        y = np.array([0.0, 0.3, 2.5, 2.4, -1.0, 0.2])
        g = path_graph(6)
        D = np.zeros((5, 6))
        D[np.arange(5), np.arange(5)] = 1.0
        D[np.arange(5), np.arange(1, 6)] = -1.0
        np.testing.assert_allclose(gtf_mode_check(y, 1.0, 0, g), _gtf_brute(y, 1.0, D), atol=1e-6)

    def test_cap(self):
        with pytest.raises(ConvergenceFailure):
            gtf_mode_check(np.arange(6.0), 0.5, 1, path_graph(6), max_iter=2)
