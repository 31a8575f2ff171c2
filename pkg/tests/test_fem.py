import math

import numpy as np
import pytest
import scipy.sparse as sp

from lmaspatial.fem import (DegenerateTriangle, LocationOutsideMesh, Mesh, NonPositiveKappa,
                            OddAlphaUnsupported, assemble_mass_lumped, assemble_projection,
                            assemble_stiffness, grf_precision, grid_mesh, lma_operator, matern_derived,
                            read_mesh, write_mesh)
from lmaspatial.sparse import factorize

from conftest import irregular_mesh

# 3-point Gauss rule on the reference triangle (exact for quadratics)
GAUSS3 = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
GAUSS3_W = np.full(3, 1 / 6)


def quadrature_oracles(mesh):
    """Stiffness and consistent mass by per-element quadrature of explicit P1 bases."""
    n = mesh.n
    G = np.zeros((n, n))
    Cc = np.zeros((n, n))
    for tri in mesh.triangles:
        P = mesh.nodes[tri]
        # basis phi_k(x) = a_k + b_k x + c_k y
        V = np.column_stack([np.ones(3), P])
        coef = np.linalg.inv(V)          # column k gives phi_k
        J = np.column_stack([P[1] - P[0], P[2] - P[0]])
        detJ = abs(np.linalg.det(J))
        grads = coef[1:, :]              # (2, 3)
        for q, wq in zip(GAUSS3, GAUSS3_W):
            x = P[0] + J @ q
            phi = coef[0] + coef[1] * x[0] + coef[2] * x[1]
            G[np.ix_(tri, tri)] += wq * detJ * grads.T @ grads
            Cc[np.ix_(tri, tri)] += wq * detJ * np.outer(phi, phi)
    return G, Cc


class TestMesh:
    def test_degenerate(self):
        with pytest.raises(DegenerateTriangle) as ei:
            Mesh(np.array([[0, 0], [1, 0], [2, 0], [0, 1.0]]), np.array([[0, 1, 3], [0, 1, 2]]))
        assert ei.value.index == 1

    def test_bad_index(self):
        with pytest.raises(ValueError):
            Mesh(np.zeros((3, 2)), np.array([[0, 1, 3]]))

    def test_boundary(self):
        m = grid_mesh(2, 2)
        assert m.boundary.sum() == 8 and not m.boundary[4]

    def test_roundtrip(self, tmp_path):
        m = irregular_mesh()
        write_mesh(m, tmp_path / "m.txt")
        m2 = read_mesh(tmp_path / "m.txt")
        np.testing.assert_array_equal(m.nodes, m2.nodes)
        np.testing.assert_array_equal(m.triangles, m2.triangles)

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.txt").write_text("points 3\n")
        with pytest.raises(ValueError):
            read_mesh(tmp_path / "m.txt")

    def test_non_overlapping_fixture(self):
        m = irregular_mesh()
        assert abs(m.areas().sum() - 1.0) < 1e-12  # Delaunay of the unit square covers it once


class TestMass:
    def test_right_triangle(self):
        m = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
        np.testing.assert_allclose(assemble_mass_lumped(m).diagonal(), np.full(3, 1 / 6), rtol=1e-15)

    def test_square(self):
        m = grid_mesh(1, 1)       # diagonal 0-3 shared by both triangles
        np.testing.assert_allclose(assemble_mass_lumped(m).diagonal(), [1 / 3, 1 / 6, 1 / 6, 1 / 3])

    def test_total_area(self, mesh_fixture):
        C = assemble_mass_lumped(mesh_fixture)
        assert np.all(C.diagonal() > 0)
        assert abs(C.diagonal().sum() - mesh_fixture.area) < 1e-12

    def test_is_row_sum_of_consistent_mass(self, mesh_fixture):
        _, Cc = quadrature_oracles(mesh_fixture)
        np.testing.assert_allclose(assemble_mass_lumped(mesh_fixture).diagonal(), Cc.sum(axis=1), atol=1e-12)


class TestStiffness:
    def test_right_triangle(self):
        m = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
        expect = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1.0]])
        np.testing.assert_allclose(assemble_stiffness(m).toarray(), expect, atol=1e-15)

    def test_quadrature_oracle(self, mesh_fixture):
        G_oracle, _ = quadrature_oracles(mesh_fixture)
        np.testing.assert_allclose(assemble_stiffness(mesh_fixture).toarray(), G_oracle, atol=1e-12)

    def test_null_space_and_symmetry(self, mesh_fixture):
        G = assemble_stiffness(mesh_fixture)
        assert abs(G - G.T).max() == 0
        np.testing.assert_allclose(G @ np.ones(mesh_fixture.n), 0.0, atol=1e-13)

    def test_pattern_is_edges_plus_diagonal(self):
        m = irregular_mesh()
        G = assemble_stiffness(m)
        edges = set()
        for t in m.triangles:
            for a in range(3):
                i, j = t[a], t[(a + 1) % 3]
                edges.add((min(i, j), max(i, j)))
        Gc = sp.triu(G, 1).tocoo()
        assert set(zip(Gc.row, Gc.col)) <= edges


class TestProjection:
    def test_nodes_centroid_midpoint(self):
        m = grid_mesh(2, 2)
        tri = m.triangles[3]
        P = m.nodes[tri]
        locs = np.vstack([m.nodes[4], P.mean(0), 0.5 * (P[0] + P[1])])
        A = assemble_projection(m, locs).toarray()
        np.testing.assert_allclose(A.sum(1), 1.0)
        assert np.count_nonzero(A[0]) == 1 and A[0, 4] == 1.0
        np.testing.assert_allclose(np.sort(A[1][A[1] > 0]), [1 / 3] * 3)
        np.testing.assert_allclose(np.sort(A[2][A[2] > 0]), [0.5, 0.5])

    def test_reproduces_linear_functions(self, rng):
        m = irregular_mesh()
        locs = rng.uniform(0, 1, (50, 2))
        A = assemble_projection(m, locs)
        f = 2.0 + 3.0 * m.nodes[:, 0] - m.nodes[:, 1]
        np.testing.assert_allclose(A @ f, 2.0 + 3.0 * locs[:, 0] - locs[:, 1], atol=1e-12)
        assert np.all(np.diff(A.indptr) <= 3)

    def test_outside(self):
        with pytest.raises(LocationOutsideMesh) as ei:
            assemble_projection(grid_mesh(2, 2), [[0.5, 0.5], [1.5, 0.2]])
        assert ei.value.index == 1


class TestOperators:
    def setup_method(self):
        self.m = irregular_mesh(10, seed=3)
        self.C = assemble_mass_lumped(self.m)
        self.G = assemble_stiffness(self.m)

    def dense_L(self, kappa):
        return kappa ** 2 * self.C.toarray() + self.G.toarray()

    def test_alpha1(self):
        np.testing.assert_allclose(grf_precision(self.C, self.G, 1.3, 1).toarray(), self.dense_L(1.3),
                                   atol=1e-14)

    def test_alpha2_identity_mass(self):
        I = sp.identity(self.m.n, format="csc")
        L = 0.49 * np.eye(self.m.n) + self.G.toarray()
        np.testing.assert_allclose(grf_precision(I, self.G, 0.7, 2).toarray(), L @ L, atol=1e-12)

    @pytest.mark.parametrize("alpha", [2, 3])
    def test_dense_oracle(self, alpha):
        L = self.dense_L(0.8)
        Ci = np.diag(1 / self.C.diagonal())
        Q = L @ Ci @ L if alpha == 2 else L @ Ci @ L @ Ci @ L
        got = grf_precision(self.C, self.G, 0.8, alpha).toarray()
        assert np.abs(got - Q).max() <= 1e-10 * np.abs(Q).max()

    def test_kappa_positive(self):
        with pytest.raises(NonPositiveKappa):
            grf_precision(self.C, self.G, 0.0, 2)

    def test_lma_operator(self):
        np.testing.assert_allclose(lma_operator(self.C, self.G, 0.5, 2).toarray(), self.dense_L(0.5), atol=1e-14)
        I = sp.identity(self.m.n, format="csc")
        L = 0.25 * np.eye(self.m.n) + self.G.toarray()
        np.testing.assert_allclose(lma_operator(I, self.G, 0.5, 4).toarray(), L @ L, atol=1e-12)
        with pytest.raises(OddAlphaUnsupported):
            lma_operator(self.C, self.G, 0.5, 3)

    def test_lma_unit_gamma_equals_grf(self):
        I = sp.identity(self.m.n, format="csc")
        K = lma_operator(I, self.G, 1.1, 2)
        np.testing.assert_allclose((K.T @ K).toarray(), grf_precision(I, self.G, 1.1, 2).toarray(), atol=1e-12)

    def test_grf_sampling_covariance(self, rng):
        m = grid_mesh(2, 1)      # 6 nodes
        C, G = assemble_mass_lumped(m), assemble_stiffness(m)
        Q = grf_precision(C, G, 1.5, 2)
        f = factorize(Q)
        n = 100_000
        W = np.array([f.sample(None, rng) for _ in range(n)])
        S = np.linalg.inv(Q.toarray())
        se = np.sqrt((S ** 2 + np.outer(np.diag(S), np.diag(S))) / n)
        assert np.all(np.abs(np.cov(W.T) - S) < 3.5 * se)


class TestMatern:
    def test_range(self):
        assert abs(matern_derived(1.0, 2.0, 1.0)[1] - math.sqrt(2.0)) < 1e-15

    def test_variance(self):
        assert abs(matern_derived(1.0, 1.0, 1.0)[0] - 1 / (4 * math.pi)) < 1e-15

    def test_kappa_scaling(self):
        assert abs(matern_derived(1.3, 0.7, 1.0)[0] / matern_derived(1.3, 1.4, 1.0)[0] - 4.0) < 1e-12
