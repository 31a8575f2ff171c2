"""Cross-validation, BCVS, effective sample size and posterior summaries."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


class TooFewGroups(ValueError):
    pass


class NonFiniteDensity(ValueError):
    def __init__(self, fold: int, draw: int, value):
        self.fold, self.draw = fold, draw
        super().__init__(f"predictive density for fold {fold}, draw {draw} is not positive and finite ({value})")


class TraceTooShort(ValueError):
    pass


MIN_TRACE = 100


# ------------------------------------------------------------------- folds

@dataclass
class CvPlan:
    fold: np.ndarray          # fold id per observation
    k: int
    seed: object
    grouped: bool

    def test_mask(self, j: int) -> np.ndarray:
        return self.fold == j

    def folds(self):
        return [np.flatnonzero(self.fold == j) for j in range(self.k)]


def make_folds(n: int, k: int = 10, groups=None, seed=None) -> CvPlan:
    """Random split into ``k`` folds of near-equal size.

    With ``groups`` (one key per observation) whole groups are assigned, so
    the number of groups per fold differs by at most one.
    """
    rng = np.random.default_rng(seed)
    if k < 2:
        raise ValueError("need at least two folds")
    if groups is None:
        if n < k:
            raise ValueError(f"cannot split {n} observations into {k} folds")
        fold = np.empty(n, dtype=np.intp)
        fold[rng.permutation(n)] = np.arange(n) % k
        return CvPlan(fold, k, seed, False)
    groups = np.asarray(groups)
    if len(groups) != n:
        raise ValueError("grouping key must have one entry per observation")
    keys, inv = np.unique(groups, return_inverse=True)
    if len(keys) < k:
        raise TooFewGroups(f"{len(keys)} groups cannot fill {k} folds")
    gfold = np.empty(len(keys), dtype=np.intp)
    gfold[rng.permutation(len(keys))] = np.arange(len(keys)) % k
    return CvPlan(gfold[inv.ravel()], k, seed, True)


# ------------------------------------------------------------------- scores

def bcvs(fold_values, log: bool = True) -> float:
    """``-sum_k log(mean_t p_k^(t))`` over folds.

    ``fold_values[k]`` holds the predictive density of fold ``k`` under each
    stored draw (log densities unless ``log=False``).
    """
    total = 0.0
    for f, vals in enumerate(fold_values):
        v = np.asarray(vals, dtype=float).ravel()
        if v.size == 0:
            raise ValueError(f"fold {f} has no draws")
        if not log:
            bad = np.flatnonzero(~(np.isfinite(v) & (v > 0)))
            if bad.size:
                raise NonFiniteDensity(f, int(bad[0]), v[bad[0]])
            v = np.log(v)
        else:
            bad = np.flatnonzero(~np.isfinite(v))
            if bad.size:
                raise NonFiniteDensity(f, int(bad[0]), math.exp(v[bad[0]]) if v[bad[0]] < 0 else v[bad[0]])
        total -= float(logsumexp(v) - math.log(v.size))
    return total


def autocorrelation(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = len(x)
    d = x - x.mean()
    m = 1 << int(2 * n - 1).bit_length()
    f = np.fft.rfft(d, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    return acov / acov[0]


def ess(trace) -> float:
    """Effective sample size with Geyer's initial monotone positive sequence."""
    x = np.asarray(trace, dtype=float).ravel()
    n = len(x)
    if n < MIN_TRACE:
        raise TraceTooShort(f"trace has {n} values; at least {MIN_TRACE} are needed")
    if np.ptp(x) == 0:
        warnings.warn("constant trace; effective sample size set to 0", RuntimeWarning, stacklevel=2)
        return 0.0
    rho = autocorrelation(x)
    npairs = n // 2
    pairs = rho[:2 * npairs].reshape(npairs, 2).sum(axis=1)
    neg = np.flatnonzero(pairs <= 0)
    m = int(neg[0]) if neg.size else npairs
    pairs = np.minimum.accumulate(pairs[:m])
    tau = -1.0 + 2.0 * float(pairs.sum())
    return float(min(n, n / tau)) if tau > 0 else float(n)


def ess_per_second(trace, seconds: float) -> float:
    if not seconds > 0:
        raise ValueError("elapsed time must be positive")
    return ess(trace) / seconds


# ---------------------------------------------------------------- summaries

def summarize(samples) -> tuple[float, float, float]:
    """Mean and equal-tailed 95% interval."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("no samples to summarize")
    lo, hi = np.quantile(x, [0.025, 0.975])
    return float(x.mean()), float(lo), float(hi)


def _intercept_column(X, names):
    for j, nm in enumerate(names):
        if nm.lower() in ("intercept", "(intercept)", "const"):
            return j
    if X is not None:
        for j in range(X.shape[1]):
            if np.all(X[:, j] == 1.0):
                return j
    return None


def summary_rows(post, X=None) -> list[tuple]:
    """Rows ``(predictor, parameter, estimate, ci_low, ci_high)``.

    Every model reports the same rows; parameters that a model lacks are
    ``nan``.  Standard deviation type parameters are reported on the root
    scale (``sigma``, ``xi``, ``kappa``, ``lambda``).
    """
    rows = []
    beta = post.params["beta"]
    for j, nm in enumerate(post.covariate_names):
        rows.append((nm, f"beta{j}", *summarize(beta[:, j])))
    for key, label in (("sigma2", "sigma"), ("xi2", "xi"), ("kappa2", "kappa"), ("lam2", "lambda")):
        v = post.params.get(key)
        rows.append(("", label, *(summarize(np.sqrt(v)) if v is not None else (math.nan,) * 3)))
    if post.spec.support == "continuous" and post.spec.field == "lma":
        rows.append(("", "tau", *summarize(post.params["tau"])))
    elif post.spec.support == "continuous":
        rows.append(("", "tau", math.nan, math.nan, math.nan))
    j0 = _intercept_column(X, post.covariate_names)
    if j0 is not None and "field" in post.params:
        combo = beta[:, j0] + post.params["field"].mean(axis=1)
        rows.append((post.covariate_names[j0], "beta0+mean(field)", *summarize(combo)))
    return rows


# ---------------------------------------------------------- cross-validation

@dataclass
class CvResult:
    bcvs: float
    fold_values: list          # per fold: (n_store,) joint log densities or (n_store, m) pointwise
    plan: CvPlan
    seconds: float
    pointwise: bool

    def fold_scores(self) -> np.ndarray:
        return np.array([bcvs([v]) if not self.pointwise else bcvs(list(v.T)) for v in self.fold_values])


def cross_validate(spec, data, k: int = 10, groups=None, seed=0, burn_in: int = 1000,
                   n_store: int = 50_000, thin: int = 1, pointwise: bool = False,
                   plan: CvPlan | None = None, progress=None) -> CvResult:
    """k-fold BCVS for one model; each fold is an independent chain."""
    from dataclasses import replace

    from .models import build_sampler

    ss = np.random.SeedSequence(seed)
    fold_seed, *chain_seeds = ss.spawn(k + 1)
    if plan is None:
        plan = make_folds(data.n_obs, k, groups, fold_seed)
    fspec = replace(spec, pointwise=pointwise, store_field=False, store_aux=False)
    t0 = time.perf_counter()
    values = []
    for j in range(plan.k):
        test = plan.test_mask(j)
        post = build_sampler(fspec, data.with_train(~test)).run(
            burn_in=burn_in, n_store=n_store, thin=thin, seed=chain_seeds[j])
        values.append(post.heldout_pointwise if pointwise else post.heldout)
        if progress is not None:
            progress(j)
    if pointwise:
        score = bcvs([col for v in values for col in v.T])
    else:
        score = bcvs(values)
    return CvResult(score, values, plan, time.perf_counter() - t0, pointwise)
