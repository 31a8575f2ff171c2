"""Generic MCMC machinery: adaptive Metropolis steps, colouring, block updates."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _pykernels as _pk
from ._backend import kernels
from .sparse import NotPositiveDefinite

# shared by both kernel modules
FAMILY_CODES = {"gaussian": _pk.GAUSSIAN, "poisson": _pk.POISSON, "probit": _pk.PROBIT}


class NonFiniteTarget(ValueError):
    pass


class AdaptiveTuner:
    """Per-target random-walk scales adapted in batches toward a target rate.

    After each batch of ``batch`` updates the log-scale of every target moves by
    ``min(0.05, 1/sqrt(b))`` (``b`` = batch number) up if its acceptance rate
    exceeded ``target`` and down otherwise.  ``freeze()`` stops adaptation.
    """

    def __init__(self, size: int = 1, scale: float | np.ndarray = 1.0, target: float = 0.44,
                 batch: int = 50):
        self.size = int(size)
        self.log_scale = np.log(np.broadcast_to(np.asarray(scale, dtype=float), (self.size,))).copy()
        self.target = float(target)
        self.batch = int(batch)
        self.frozen = False
        self._acc = np.zeros(self.size)
        self._count = 0
        self.n_batches = 0
        self.total_accepted = np.zeros(self.size)
        self.total_tried = 0

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    def freeze(self):
        self.frozen = True

    def record(self, accepted):
        acc = np.broadcast_to(np.asarray(accepted, dtype=float), (self.size,))
        self.total_accepted += acc
        self.total_tried += 1
        if self.frozen:
            return
        self._acc += acc
        self._count += 1
        if self._count == self.batch:
            self.n_batches += 1
            delta = min(0.05, 1.0 / math.sqrt(self.n_batches))
            rate = self._acc / self.batch
            self.log_scale += np.where(rate > self.target, delta, -delta)
            self._acc[:] = 0.0
            self._count = 0

    @property
    def acceptance_rate(self) -> np.ndarray:
        return self.total_accepted / max(self.total_tried, 1)


def adaptive_mh_scalar(target_logpdf, current: float, tuner: AdaptiveTuner, rng,
                       positive: bool = False, current_logpdf: float | None = None):
    """One random-walk MH step on a scalar.

    Positive targets are moved on the log scale (with the Jacobian term).
    Returns ``(value, accepted, logpdf_at_value)``.
    """
    f0 = target_logpdf(current) if current_logpdf is None else current_logpdf
    if not np.isfinite(f0):
        raise NonFiniteTarget(f"target log density is {f0} at the current value {current!r}")
    step = float(tuner.scale[0]) * rng.standard_normal()
    logu = math.log(rng.random())
    if positive:
        prop = current * math.exp(step)
        f1 = target_logpdf(prop)
        log_r = f1 - f0 + step
    else:
        prop = current + step
        f1 = target_logpdf(prop)
        log_r = f1 - f0
    ok = bool(logu < log_r)
    tuner.record(ok)
    return (prop, True, f1) if ok else (current, False, f0)


def adaptive_mh_vector(target_logpdf, current: np.ndarray, tuner: AdaptiveTuner, rng,
                       positive: bool = False, current_logpdf: np.ndarray | None = None):
    """Independent coordinate-wise MH steps for conditionally independent scalars.

    ``target_logpdf`` is evaluated elementwise.  Returns ``(values, accepted, logpdfs)``.
    """
    f0 = target_logpdf(current) if current_logpdf is None else current_logpdf
    step = tuner.scale * rng.standard_normal(current.shape)
    logu = np.log(rng.random(current.shape))
    if positive:
        prop = current * np.exp(step)
        f1 = target_logpdf(prop)
        log_r = f1 - f0 + step
    else:
        prop = current + step
        f1 = target_logpdf(prop)
        log_r = f1 - f0
    ok = logu < log_r
    tuner.record(ok)
    return np.where(ok, prop, current), ok, np.where(ok, f1, f0)


def adaptive_mh_joint(target_logpdf, current: np.ndarray, tuner: AdaptiveTuner, rng,
                      positive: bool = True, current_logpdf: float | None = None):
    """Joint random-walk step on a small vector with a single shared scale."""
    f0 = target_logpdf(current) if current_logpdf is None else current_logpdf
    if not np.isfinite(f0):
        raise NonFiniteTarget(f"target log density is {f0} at the current value {current!r}")
    step = float(tuner.scale[0]) * rng.standard_normal(current.shape)
    logu = math.log(rng.random())
    if positive:
        prop = current * np.exp(step)
        f1 = target_logpdf(prop)
        log_r = f1 - f0 + float(step.sum())
    else:
        prop = current + step
        f1 = target_logpdf(prop)
        log_r = f1 - f0
    ok = bool(logu < log_r)
    tuner.record(ok)
    return (prop, True, f1) if ok else (current, False, f0)


def color_blocks(Q) -> list[np.ndarray]:
    """Greedy colouring of the pattern of ``Q`` in index order.

    No two indices within a block are neighbours, so their one-at-a-time
    updates are conditionally independent.
    """
    Q = sp.csr_matrix(Q)
    n = Q.shape[0]
    color = np.full(n, -1, dtype=np.intp)
    for i in range(n):
        nb = Q.indices[Q.indptr[i]:Q.indptr[i + 1]]
        used = set(color[nb][color[nb] >= 0].tolist())
        c = 0
        while c in used:
            c += 1
        color[i] = c
    return [np.flatnonzero(color == c) for c in range(int(color.max()) + 1)] if n else []


def one_at_a_time_block_update(field_values, lin, car, blocks, H_csc, y, family, sigma2,
                               tuner: AdaptiveTuner, rng):
    """Metropolis sweep over the latent field using CAR full conditionals.

    ``car = (C, m)`` from :func:`graph.car_decompose` of the current prior
    precision; ``H_csc`` maps field nodes to observations (``lin`` is the
    linear predictor of those observations and is kept in sync).  Blocks are
    visited in order; random numbers are indexed by node so that the result
    does not depend on the visiting order within a block.  Proposal sds are
    the tuner scales times the conditional prior sds ``sqrt(m)``.
    """
    C, m = car
    n = field_values.shape[0]
    order = np.concatenate(blocks) if blocks else np.arange(n, dtype=np.intp)
    znorm = rng.standard_normal(n)
    logu = np.log(rng.random(n))
    accepted = np.zeros(n, dtype=np.uint8)
    code = FAMILY_CODES[family] if isinstance(family, str) else int(family)
    kernels.car_mh_sweep(order.astype(np.intp), C.indptr.astype(np.intp), C.indices.astype(np.intp),
                         C.data, m, H_csc.indptr.astype(np.intp), H_csc.indices.astype(np.intp),
                         H_csc.data, field_values, lin, y, code, float(sigma2), tuner.scale * np.sqrt(m),
                         znorm, logu, accepted)
    tuner.record(accepted)
    return accepted


@dataclass
class PdUpdateResult:
    gamma: np.ndarray
    factor: object | None
    accepted: np.ndarray | None
    failures: int
    success: bool


def pd_constrained_joint_update(gamma, propose, factor_fn, rng, max_retries: int = 25,
                                proposal_hook=None, sweep: int = 0) -> PdUpdateResult:
    """Propose auxiliaries, keep them only if the implied precision factorizes.

    ``propose(gamma, rng) -> (gamma_new, accepted)`` performs the auxiliary MH
    (or Gibbs) step; ``factor_fn(gamma_new)`` assembles and factorizes the
    conditional precision of the weights and may raise
    :class:`NotPositiveDefinite`.  Each failed factorization counts as one
    event and triggers a fresh attempt, up to ``max_retries`` retries, after
    which the current state is retained.  ``proposal_hook(gamma_new, sweep,
    attempt)`` may alter the candidate (used to inject degeneracy in tests).
    """
    failures = 0
    for attempt in range(max_retries + 1):
        cand, acc = propose(gamma, rng)
        if proposal_hook is not None:
            cand = proposal_hook(cand, sweep, attempt)
        try:
            f = factor_fn(cand)
        except NotPositiveDefinite:
            failures += 1
            continue
        return PdUpdateResult(cand, f, acc, failures, True)
    return PdUpdateResult(gamma, None, None, failures, False)


def run_chain(model, data, burn_in: int = 1000, n_store: int = 50_000, thin: int = 1, seed=0,
              progress=None, debug: bool = False):
    """Run one chain of the sampler for ``model`` (a ModelSpec) on ``data``.

    Stores ``n_store`` states regardless of ``thin``; adaptation happens only
    during burn-in and wall-clock time is measured after it.
    """
    from .models import build_sampler

    sampler = build_sampler(model, data)
    return sampler.run(burn_in=burn_in, n_store=n_store, thin=thin, seed=seed,
                       progress=progress, debug=debug)


def run_chains(model, data, chains: int = 1, seed=0, **kw):
    """Independent chains with streams spawned from one master seed."""
    seqs = np.random.SeedSequence(seed).spawn(chains)
    return [run_chain(model, data, seed=s, **kw) for s in seqs]
