import numpy as np
import pytest
import scipy.sparse as sp

import lmaspatial.distributions as dist_mod
import lmaspatial.mcmc as mcmc_mod
import lmaspatial.sparse as sparse_mod
from lmaspatial import graph, models
from lmaspatial._backend import BACKEND, available_backends

BACKENDS = available_backends()
needs_both = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")


def use(monkeypatch, name):
    k = BACKENDS[name]
    for mod in (sparse_mod, mcmc_mod, dist_mod):
        monkeypatch.setattr(mod, "kernels", k)


def spd(n, seed):
    r = np.random.default_rng(seed)
    A = sp.random(n, n, density=0.08, random_state=r)
    return sp.csc_matrix(A @ A.T + sp.identity(n) * 2.0)


def test_selected_backend_is_known():
    assert BACKEND in BACKENDS


@needs_both
class TestEquivalence:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_cholesky_and_solves(self, monkeypatch, seed):
        M = spd(60, seed)
        b = np.random.default_rng(seed).standard_normal(60)
        out = {}
        for name in ("python", "cython"):
            use(monkeypatch, name)
            f = sparse_mod.factorize(M)
            out[name] = (f.Lx.copy(), f.solve(b), f.log_det())
        np.testing.assert_allclose(out["python"][0], out["cython"][0], rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(out["python"][1], out["cython"][1], rtol=1e-10)
        assert out["python"][2] == pytest.approx(out["cython"][2], rel=1e-12)

    def test_same_failing_pivot(self, monkeypatch):
        M = sp.csc_matrix(np.array([[1.0, 2.0, 0], [2.0, 1.0, 0], [0, 0, 1.0]]))
        cols = []
        for name in ("python", "cython"):
            use(monkeypatch, name)
            with pytest.raises(sparse_mod.NotPositiveDefinite) as ei:
                sparse_mod.factorize(M)
            cols.append(str(ei.value))
        assert cols[0] == cols[1]

    @pytest.mark.parametrize("family", ["gaussian", "poisson", "probit"])
    def test_car_sweep(self, monkeypatch, family):
        g = graph.grid_graph(5, 4)
        Q = graph.graph_laplacian(g) + sp.identity(g.n) * 0.3
        car = graph.car_decompose(Q)
        r = np.random.default_rng(3)
        H = sp.csc_matrix(sp.random(30, g.n, density=0.1, random_state=r))
        y = {"gaussian": r.standard_normal(30), "poisson": r.poisson(2.0, 30).astype(float),
             "probit": (r.random(30) < 0.5).astype(float)}[family]
        w0 = r.standard_normal(g.n) * 0.3
        blocks = mcmc_mod.color_blocks(Q)
        res = {}
        for name in ("python", "cython"):
            use(monkeypatch, name)
            w = w0.copy()
            lin = H @ w
            tuner = mcmc_mod.AdaptiveTuner(g.n)
            acc = mcmc_mod.one_at_a_time_block_update(w, lin, car, blocks, H, y, family, 0.7, tuner,
                                                      np.random.default_rng(11))
            res[name] = (w, lin, acc)
        np.testing.assert_allclose(res["python"][0], res["cython"][0], rtol=1e-13)
        np.testing.assert_allclose(res["python"][1], res["cython"][1], rtol=1e-12, atol=1e-13)
        np.testing.assert_array_equal(res["python"][2], res["cython"][2])
        assert 0 < res["python"][2].sum() < g.n

    def test_gig_stream(self, monkeypatch):
        p = np.repeat([-2.5, -0.5, 0.1, 0.9, 3.0], 40)
        ab = np.tile(np.geomspace(1e-4, 20, 40), 5)
        res = {}
        for name in ("python", "cython"):
            use(monkeypatch, name)
            res[name] = dist_mod.sample_gig(p, ab, ab, np.random.default_rng(8))
        np.testing.assert_allclose(res["python"], res["cython"], rtol=1e-12)

    def test_whole_chain(self, monkeypatch):
        g = graph.grid_graph(4, 4)
        r = np.random.default_rng(0)
        X = np.column_stack([np.ones(g.n), r.standard_normal(g.n)])
        y = X @ [1.0, 0.5] + r.standard_normal(g.n)
        data = models.discrete_data(y, X, g)
        spec = models.ModelSpec(field="lma", support="discrete", order=1)
        res = {}
        for name in ("python", "cython"):
            use(monkeypatch, name)
            res[name] = models.build_sampler(spec, data).run(burn_in=50, n_store=50, seed=4)
        for k in ("beta", "sigma2", "lam2"):
            np.testing.assert_allclose(res["python"].params[k], res["cython"].params[k], rtol=1e-9)
