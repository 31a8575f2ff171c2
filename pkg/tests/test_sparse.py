import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from lmaspatial.graph import graph_laplacian, path_graph
from lmaspatial.sparse import (DimensionMismatch, NotPositiveDefinite, PolyMatrix, Symbolic,
                               TripleProductPlan, align, factorize, log_det, minimum_degree,
                               pattern_union, poly_mul, positions, sample_gaussian_precision, solve)


def random_spd(n, rng, density=0.3):
    A = sp.random(n, n, density=density, random_state=np.random.RandomState(rng.integers(1 << 30)))
    M = A @ A.T + sp.identity(n) * 0.5
    return sp.csc_matrix(M)


def reconstruct(f):
    F = f.factor.toarray()
    return F @ F.T


class TestFactorize:
    def test_identity(self):
        f = factorize(sp.identity(3))
        np.testing.assert_array_equal(f.diagonal, np.ones(3))
        assert f.log_det() == 0.0

    def test_two_by_two(self):
        f = factorize(sp.csc_matrix([[2.0, -1.0], [-1.0, 2.0]]))
        assert abs(f.log_det() - np.log(3.0)) < 1e-14

    def test_tridiagonal_reconstruction(self, rng):
        n = 10
        off = rng.uniform(-1, 1, n - 1)
        d = np.abs(np.r_[off, 0]) + np.abs(np.r_[0, off]) + rng.uniform(0.1, 1, n)
        M = sp.diags([off, d, off], [-1, 0, 1], format="csc")
        f = factorize(M)
        PMP = M.toarray()[np.ix_(f.perm, f.perm)]
        assert np.linalg.norm(reconstruct(f) - PMP) / np.linalg.norm(PMP) < 1e-10

    @pytest.mark.parametrize("n", [1, 5, 50, 200])
    def test_random_reconstruction(self, n, rng):
        M = random_spd(n, rng, density=min(1.0, 4.0 / n))
        f = factorize(M)
        PMP = M.toarray()[np.ix_(f.perm, f.perm)]
        assert np.linalg.norm(reconstruct(f) - PMP) / np.linalg.norm(PMP) < 1e-10

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite) as ei:
            factorize(sp.csc_matrix([[1.0, 2.0], [2.0, 1.0]]))
        assert ei.value.column in (0, 1)

    def test_tiny_pivot_is_rank_deficient(self):
        # singular graph Laplacian: last pivot is roundoff-level
        with pytest.raises(NotPositiveDefinite):
            factorize(graph_laplacian(path_graph(6)))

    def test_asymmetric_rejected(self):
        with pytest.raises(DimensionMismatch):
            factorize(sp.csc_matrix([[2.0, 1.0], [0.0, 2.0]]))

    def test_natural_ordering_is_identity(self, rng):
        f = factorize(random_spd(8, rng), ordering="natural")
        np.testing.assert_array_equal(f.perm, np.arange(8))

    def test_refactor_with_symbolic(self, rng):
        M = random_spd(30, rng, 0.1)
        sym = Symbolic.analyze(M)
        f1 = factorize(M, symbolic=sym)
        f2 = factorize(2.0 * M, symbolic=sym)
        assert abs(f2.log_det() - f1.log_det() - 30 * np.log(2.0)) < 1e-9


class TestMinimumDegree:
    def test_star_centre_last(self):
        # eliminating the hub first would fill everything
        n = 6
        M = sp.lil_matrix((n, n))
        M.setdiag(4.0)
        for i in range(1, n):
            M[0, i] = M[i, 0] = -1.0
        p = minimum_degree(sp.csc_matrix(M))
        assert p[-1] == 0 or p[-2] == 0
        assert sorted(p) == list(range(n))

    def test_deterministic(self, rng):
        M = random_spd(40, rng, 0.05)
        np.testing.assert_array_equal(minimum_degree(M), minimum_degree(M))

    def test_reduces_fill_on_grid(self):
        from lmaspatial.graph import grid_graph
        L = sp.csc_matrix(graph_laplacian(grid_graph(12, 12)) + sp.identity(144))
        assert Symbolic.analyze(L, "amd").nnz < Symbolic.analyze(L, "natural").nnz


class TestLogDetSolve:
    def test_identity5(self):
        assert log_det(factorize(sp.identity(5))) == 0.0

    def test_diag(self):
        assert abs(log_det(factorize(sp.diags([2.0, 3.0]))) - np.log(6.0)) < 1e-14

    def test_path_graph_dense_oracle(self):
        L = sp.csc_matrix(graph_laplacian(path_graph(8)) + sp.identity(8))
        sign, ld = np.linalg.slogdet(L.toarray())
        assert sign > 0
        assert abs(log_det(factorize(L)) - ld) < 1e-10

    @pytest.mark.parametrize("n", [3, 17, 50])
    def test_logdet_dense_random(self, n, rng):
        M = random_spd(n, rng, 0.2)
        assert abs(log_det(factorize(M)) - np.linalg.slogdet(M.toarray())[1]) < 1e-8

    def test_solve_trivial(self):
        np.testing.assert_allclose(solve(factorize(sp.identity(2)), [1.0, 2.0]), [1.0, 2.0])
        np.testing.assert_allclose(solve(factorize(sp.diags([2.0, 4.0])), [2.0, 4.0]), [1.0, 1.0])

    def test_solve_random(self, rng):
        M = random_spd(12, rng, 0.4)
        b = rng.normal(size=12)
        x = solve(factorize(M), b)
        assert np.linalg.norm(M @ x - b) / np.linalg.norm(b) < 1e-8
        np.testing.assert_allclose(x, np.linalg.solve(M.toarray(), b), rtol=1e-8)

    def test_solve_matrix_rhs(self, rng):
        M = random_spd(9, rng, 0.4)
        B = rng.normal(size=(9, 3))
        np.testing.assert_allclose(factorize(M).solve(B), np.linalg.solve(M.toarray(), B), rtol=1e-8)

    def test_solve_dimension(self):
        with pytest.raises(DimensionMismatch):
            solve(factorize(sp.identity(3)), np.ones(2))


class TestSampling:
    def _moments(self, Q, h, rng, n=100_000):
        f = factorize(sp.csc_matrix(Q))
        X = np.array([sample_gaussian_precision(f, h, rng) for _ in range(n)])
        return X

    def test_scalar(self, rng):
        f = factorize(sp.csc_matrix([[4.0]]))
        x = np.array([sample_gaussian_precision(f, [4.0], rng)[0] for _ in range(100_000)])
        se = np.sqrt(0.25 / len(x))
        assert abs(x.mean() - 1.0) < 3 * se
        assert abs(x.var() - 0.25) < 3 * 0.25 * np.sqrt(2.0 / len(x))

    def test_two_by_two_covariance(self, rng):
        Q = np.array([[2.0, -1.0], [-1.0, 2.0]])
        X = self._moments(Q, np.array([1.0, 0.0]), rng)
        S = np.linalg.inv(Q)
        n = len(X)
        np.testing.assert_allclose(S, np.array([[2, 1], [1, 2]]) / 3.0)
        assert np.all(np.abs(X.mean(0) - S @ [1.0, 0.0]) < 3 * np.sqrt(np.diag(S) / n))
        C = np.cov(X.T)
        se = np.sqrt((S ** 2 + np.outer(np.diag(S), np.diag(S))) / n)
        assert np.all(np.abs(C - S) < 3 * se)

    def test_three_by_three(self, rng):
        Q = np.array([[3.0, -1.0, 0.5], [-1.0, 2.0, -0.3], [0.5, -0.3, 1.5]])
        h = np.array([0.3, -1.0, 2.0])
        X = self._moments(Q, h, rng)
        S = np.linalg.inv(Q)
        n = len(X)
        assert np.all(np.abs(X.mean(0) - S @ h) < 3 * np.sqrt(np.diag(S) / n))
        se = np.sqrt((S ** 2 + np.outer(np.diag(S), np.diag(S))) / n)
        assert np.all(np.abs(np.cov(X.T) - S) < 3 * se)

    def test_fixed_noise_matches_dense(self, rng):
        M = random_spd(7, rng, 0.5)
        f = factorize(M)
        z = rng.normal(size=7)
        h = rng.normal(size=7)
        x = f.sample(h, rng, z=z)
        # x = mean + P^T F^-T z
        F = f.factor.toarray()
        u = np.linalg.solve(F.T, z)
        dev = np.empty(7)
        dev[f.perm] = u
        np.testing.assert_allclose(x, np.linalg.solve(M.toarray(), h) + dev, rtol=1e-10, atol=1e-12)


class TestPatternTools:
    def test_align_and_positions(self, rng):
        A = random_spd(10, rng, 0.2)
        B = sp.identity(10, format="csc")
        P = pattern_union([A, B])
        a = align(P, A)
        np.testing.assert_allclose(sp.csc_matrix((a, P.indices, P.indptr), shape=P.shape).toarray(),
                                   A.toarray())
        pos = positions(P, B)
        np.testing.assert_array_equal(P.indices[pos], np.arange(10))

    def test_align_rejects_outside(self):
        P = pattern_union([sp.identity(3)])
        with pytest.raises(ValueError):
            align(P, sp.csc_matrix(np.ones((3, 3))))

    def test_poly_matrix(self, rng):
        G = graph_laplacian(path_graph(7))
        C = sp.diags(rng.uniform(0.5, 2, 7), format="csc")
        Ci = sp.diags(1.0 / C.diagonal(), format="csc")
        poly = PolyMatrix(poly_mul([G, C], [G, C], Ci))
        for t in (0.1, 1.0, 3.7):
            L = (t * C + G).toarray()
            np.testing.assert_allclose(poly.matrix(t).toarray(), L @ Ci.toarray() @ L, rtol=1e-13, atol=1e-13)

    def test_triple_product(self, rng):
        K = sp.csc_matrix(sp.random(9, 9, 0.3, random_state=1) + sp.identity(9))
        w = rng.uniform(0.1, 3, 9)
        plan = TripleProductPlan(K)
        kd = align(pattern_union([K]), K)
        np.testing.assert_allclose(plan.matrix(kd, w).toarray(), (K.T @ sp.diags(w) @ K).toarray(),
                                   rtol=1e-13, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 25), seed=st.integers(0, 10_000), shift=st.floats(0.01, 10.0))
def test_property_factor_reconstructs(n, seed, shift):
    r = np.random.default_rng(seed)
    A = r.normal(size=(n, n)) * (r.random((n, n)) < 0.3)
    M = sp.csc_matrix(A @ A.T + shift * np.eye(n))
    f = factorize(M)
    PMP = M.toarray()[np.ix_(f.perm, f.perm)]
    F = f.factor.toarray()
    assert np.linalg.norm(F @ F.T - PMP) <= 1e-10 * np.linalg.norm(PMP)
    assert abs(f.log_det() - np.linalg.slogdet(M.toarray())[1]) < 1e-8


def test_mul_ft_matches_factor(rng):
    f = factorize(random_spd(30, rng))
    x = rng.standard_normal(30)
    np.testing.assert_allclose(f.mul_Ft(x), f.factor.T @ x, rtol=1e-13)
