"""Random variate generation and log densities used by the samplers.

Conventions:

* ``Laplace(lam)`` has density ``(lam / 2) exp(-lam |x|)`` (variance ``2 / lam^2``).
* ``Gamma(shape, scale)`` has mean ``shape * scale``.
* ``GIG(p, a, b)`` has density proportional to ``x^(p-1) exp(-(a x + b / x) / 2)``.
* ``InvGauss(mean, shape)`` is the standard (Wald) law with variance ``mean^3 / shape``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, kve, log_ndtr, ndtr, ndtri

from ._backend import kernels

LOG2PI = float(np.log(2.0 * np.pi))
# below this omega the GIG is replaced by its gamma / inverse-gamma limit
GIG_OMEGA_FLOOR = 1e-10


class InvalidParams(ValueError):
    pass


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


# ---------------------------------------------------------------- samplers

def sample_gig(p, a, b, rng, size=None) -> np.ndarray | float:
    """Draws from ``GIG(p, a, b)``; parameters broadcast against ``size``."""
    rng = _rng(rng)
    scalar = size is None and np.ndim(p) == 0 and np.ndim(a) == 0 and np.ndim(b) == 0
    shape = np.broadcast_shapes(np.shape(p), np.shape(a), np.shape(b), () if size is None else
                                (size if isinstance(size, tuple) else (size,)))
    p = np.broadcast_to(np.asarray(p, dtype=float), shape).ravel()
    a = np.broadcast_to(np.asarray(a, dtype=float), shape).ravel()
    b = np.broadcast_to(np.asarray(b, dtype=float), shape).ravel()
    if np.any(a < 0) or np.any(b < 0) or not (np.all(np.isfinite(p)) and np.all(np.isfinite(a))
                                              and np.all(np.isfinite(b))):
        raise InvalidParams("GIG requires finite p and non-negative a, b")
    gamma_lim = (b == 0) | ((np.sqrt(a * b) < GIG_OMEGA_FLOOR) & (p > 0))
    invgam_lim = (a == 0) | ((np.sqrt(a * b) < GIG_OMEGA_FLOOR) & (p < 0))
    if np.any(gamma_lim & ~((p > 0) & (a > 0))) or np.any(invgam_lim & ~((p < 0) & (b > 0))):
        raise InvalidParams("GIG with a = 0 needs p < 0 and b > 0; with b = 0 needs p > 0 and a > 0")

    out = np.empty(p.shape[0])
    main = ~(gamma_lim | invgam_lim)
    idx = np.flatnonzero(main)
    if idx.size:
        omega = np.sqrt(a[idx] * b[idx])
        lam = np.abs(p[idx])
        x = np.empty(idx.size)
        kernels.gig_standard(np.ascontiguousarray(lam), np.ascontiguousarray(omega), x, rng)
        neg = p[idx] < 0
        x[neg] = 1.0 / x[neg]
        out[idx] = np.sqrt(b[idx] / a[idx]) * x
    g = np.flatnonzero(gamma_lim)
    if g.size:
        out[g] = rng.gamma(p[g], 2.0 / a[g])
    ig = np.flatnonzero(invgam_lim)
    if ig.size:
        out[ig] = (b[ig] / 2.0) / rng.gamma(-p[ig], 1.0)
    if scalar:
        return float(out[0])
    return out.reshape(shape)


def sample_invgauss(mean, shape, rng, size=None):
    """Inverse Gaussian draws (numpy's Wald generator)."""
    mean = np.asarray(mean, dtype=float)
    shape = np.asarray(shape, dtype=float)
    if np.any(~(mean > 0)) or np.any(~(shape > 0)):
        raise InvalidParams("inverse Gaussian requires mean > 0 and shape > 0")
    return _rng(rng).wald(mean, shape, size)


def _std_truncnorm_above(a, rng):
    """Standard normal draws conditioned on ``Z > a`` (``a`` an array)."""
    a = np.asarray(a, dtype=float)
    z = np.empty(a.shape)
    far = a > 30.0
    near = ~far
    if np.any(near):
        an = a[near]
        u = rng.random(an.shape)
        # invert the upper tail; accurate deep into the right tail
        tail = ndtr(-an)
        z[near] = np.maximum(-ndtri(u * tail), an)
    if np.any(far):
        # exponential rejection for the extreme tail
        for i in np.flatnonzero(far):
            ai = a[i]
            alpha = 0.5 * (ai + np.sqrt(ai * ai + 4.0))
            while True:
                x = ai + rng.exponential(1.0 / alpha)
                if rng.random() <= np.exp(-0.5 * (x - alpha) ** 2):
                    z[i] = x
                    break
    return z


def sample_truncnorm(mean, sd, side, rng):
    """Normal draws truncated to ``(0, inf)`` where ``side > 0`` and ``(-inf, 0)`` otherwise."""
    rng = _rng(rng)
    mean, sd, side = np.broadcast_arrays(np.asarray(mean, float), np.asarray(sd, float),
                                         np.asarray(side))
    sgn = np.where(side > 0, 1.0, -1.0)
    z = _std_truncnorm_above(-sgn * mean / sd, rng)
    x = mean + sgn * sd * z
    if x.ndim == 0:
        return float(x)
    return x


def simulate_scale_mixture(lam: float, n: int, rng) -> np.ndarray:
    """``Z | S ~ N(0, S)`` with ``S ~ Exp(rate lam^2 / 2)``; marginally Laplace(lam)."""
    rng = _rng(rng)
    S = rng.exponential(2.0 / lam ** 2, n)
    return np.sqrt(S) * rng.standard_normal(n)


@dataclass
class NoiseSeriesConfig:
    domain: tuple = (0.0, 1.0, 0.0, 1.0)    # xmin, xmax, ymin, ymax
    K: int = 1000
    nu: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ValueError("domain must have positive area")
        if self.K < 1:
            raise ValueError("truncation count K must be at least 1")
        if not self.nu > 0:
            raise ValueError("nu must be positive")


def simulate_laplace_noise(cfg: NoiseSeriesConfig, rng=None):
    """Truncated series for Laplace noise on a rectangle.

    Returns ``(locations, masses, gammas)``; the atom at ``locations[k]``
    carries ``Gamma_k + sqrt(Gamma_k) G_k``.
    """
    rng = _rng(cfg.seed if rng is None else rng)
    x0, x1, y0, y1 = cfg.domain
    arrivals = np.cumsum(rng.exponential(1.0, cfg.K))
    W = rng.exponential(1.0, cfg.K)
    gam = np.exp(-cfg.nu * arrivals) * W
    G = rng.standard_normal(cfg.K)
    loc = np.column_stack([rng.uniform(x0, x1, cfg.K), rng.uniform(y0, y1, cfg.K)])
    return loc, gam + np.sqrt(gam) * G, gam


# ---------------------------------------------------------------- densities

def _require_positive(**kw):
    for k, v in kw.items():
        if np.any(~(np.asarray(v) > 0)):
            raise ValueError(f"{k} must be positive")


def laplace_logpdf(x, lam):
    _require_positive(lam=lam)
    return np.log(lam / 2.0) - lam * np.abs(x)


def half_normal_logpdf(x, scale):
    _require_positive(scale=scale)
    x = np.asarray(x, dtype=float)
    v = 0.5 * np.log(2.0 / np.pi) - np.log(scale) - 0.5 * (x / scale) ** 2
    return np.where(x >= 0, v, -np.inf)


def gamma_logpdf(x, shape, scale):
    _require_positive(shape=shape, scale=scale)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = (shape - 1.0) * np.log(x) - x / scale - gammaln(shape) - shape * np.log(scale)
    return np.where(x > 0, v, -np.inf)


def inverse_gamma_logpdf(x, shape, scale):
    _require_positive(shape=shape, scale=scale)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = shape * np.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x
    return np.where(x > 0, v, -np.inf)


def exponential_logpdf(x, rate):
    _require_positive(rate=rate)
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, np.log(rate) - rate * x, -np.inf)


def normal_logpdf(x, mean=0.0, sd=1.0):
    _require_positive(sd=sd)
    z = (np.asarray(x, dtype=float) - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * LOG2PI


def invgauss_logpdf(x, mean, shape):
    _require_positive(mean=mean, shape=shape)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = 0.5 * (np.log(shape) - LOG2PI - 3.0 * np.log(x)) - shape * (x - mean) ** 2 / (2.0 * mean ** 2 * x)
    return np.where(x > 0, v, -np.inf)


def gig_logpdf(x, p, a, b):
    """Normalized GIG log density (``a, b > 0``)."""
    _require_positive(a=a, b=b)
    x = np.asarray(x, dtype=float)
    w = np.sqrt(a * b)
    # log K_p(w) = log kve(p, w) - w
    lognorm = 0.5 * p * np.log(a / b) - np.log(2.0) - (np.log(kve(p, w)) - w)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = lognorm + (p - 1.0) * np.log(x) - 0.5 * (a * x + b / x)
    return np.where(x > 0, v, -np.inf)


def gig_mean(p, a, b) -> float:
    w = np.sqrt(a * b)
    return float(np.sqrt(b / a) * kve(p + 1.0, w) / kve(p, w))


def probit_loglik(y, eta):
    """``log Phi(eta)`` for ``y = 1`` and ``log Phi(-eta)`` for ``y = 0``."""
    return log_ndtr(np.where(np.asarray(y) > 0.5, eta, -np.asarray(eta)))


def poisson_loglik(y, log_mu):
    return y * log_mu - np.exp(log_mu) - gammaln(np.asarray(y, dtype=float) + 1.0)
