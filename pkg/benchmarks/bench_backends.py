"""Time the compiled and pure-Python kernels on the same inputs.

    python benchmarks/bench_backends.py [--repeat 5] [--grid 30]

Each row reports the best of ``--repeat`` runs per backend and the speed-up.
"""
import argparse
import timeit

import numpy as np
import scipy.sparse as sp

import lmaspatial.distributions as dist_mod
import lmaspatial.mcmc as mcmc_mod
import lmaspatial.sparse as sparse_mod
from lmaspatial import graph, models
from lmaspatial._backend import available_backends


def use(name):
    k = available_backends()[name]
    for mod in (sparse_mod, mcmc_mod, dist_mod):
        mod.kernels = k


def cases(grid):
    g = graph.grid_graph(grid, grid)
    L = graph.graph_laplacian(g) + sp.identity(g.n) * 0.5
    Q = sp.csc_matrix(L @ L)
    sym = sparse_mod.Symbolic.analyze(Q)
    b = np.random.default_rng(0).standard_normal(g.n)
    fac = sparse_mod.factorize(Q, symbolic=sym)
    car = graph.car_decompose(Q)
    blocks = mcmc_mod.color_blocks(Q)
    H = sp.csc_matrix(sp.identity(g.n))
    y = np.random.default_rng(1).poisson(2.0, g.n).astype(float)
    p = np.full(2000, 0.3)
    ab = np.geomspace(1e-3, 10, 2000)

    def chol():
        sparse_mod.factorize(Q, symbolic=sym)

    def solves():
        fac.solve(b)

    def sweep():
        w = np.zeros(g.n)
        mcmc_mod.one_at_a_time_block_update(w, H @ w, car, blocks, H, y, "poisson", 1.0,
                                            mcmc_mod.AdaptiveTuner(g.n), np.random.default_rng(2))

    def gig():
        dist_mod.sample_gig(p, ab, ab, np.random.default_rng(3))

    X = np.column_stack([np.ones(g.n), np.random.default_rng(4).standard_normal(g.n)])
    data = models.discrete_data(y, X, g)
    sampler_spec = models.ModelSpec(family="gaussian", field="lma", order=1)

    def chain():
        models.build_sampler(sampler_spec, data).run(burn_in=0, n_store=20, seed=5)

    return {
        f"cholesky (n={g.n}, nnz(L)={sym.nnz})": chol,
        "forward+backward solve": solves,
        "CAR Metropolis sweep (Poisson)": sweep,
        "GIG draws (2000)": gig,
        "Gaussian LMA chain (20 sweeps)": chain,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--grid", type=int, default=30, help="side of the square grid graph")
    args = ap.parse_args()
    names = list(available_backends())
    if "cython" not in names:
        print("compiled kernels are not built; only the Python backend is available")
    results = {}
    for backend in names:
        use(backend)
        for label, fn in cases(args.grid).items():
            fn()
            t = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            results.setdefault(label, {})[backend] = t
    head = f"{'kernel':<44}" + "".join(f"{b:>12}" for b in names) + ("   speed-up" if len(names) > 1 else "")
    print(head)
    for label, row in results.items():
        line = f"{label:<44}" + "".join(f"{row[b] * 1e3:>10.2f}ms" for b in names)
        if len(names) > 1:
            line += f"   {row['python'] / row['cython']:>7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
