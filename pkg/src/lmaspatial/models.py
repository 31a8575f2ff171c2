"""Spatial GLMMs with GRF or LMA field priors and their MCMC samplers.

The linear predictor for observation ``j`` is ``x_j' beta + (H w)_j`` (plus
an iid effect for Poisson models with a nugget), where ``w`` lives on the
graph nodes or mesh vertices and ``H`` maps it to the observations.

Field priors, with ``L = kappa2 * C + B`` (``C`` = lumped mass and ``B`` = stiffness
on a mesh, ``C = I`` and ``B`` = graph Laplacian on a graph):

* GRF: ``w ~ N(0, xi2 * Q^-1)`` with ``Q`` the order-alpha (or order-k) precision.
* LMA: ``K w | V ~ N(0, diag(V))`` where ``V_i = Gamma_i ~ Gamma(tau C_ii, scale lam2)``
  on a mesh and ``V_i = S_i ~ Exp(rate lam2 / 2)`` on a graph.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from dataclasses import field as dc_field

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from . import distributions as dist
from .fem import (Mesh, OddAlphaUnsupported, assemble_mass_lumped, assemble_projection,
                  assemble_stiffness)
from .graph import GraphSupport, car_decompose, graph_laplacian
from .mcmc import (AdaptiveTuner, adaptive_mh_joint, adaptive_mh_scalar, adaptive_mh_vector,
                   color_blocks, one_at_a_time_block_update, pd_constrained_joint_update)
from .sparse import (NotPositiveDefinite, PolyMatrix, Symbolic, TripleProductPlan, align,
                     factorize_values, pattern_union, poly_mul, positions)

FAMILIES = ("gaussian", "probit", "poisson")
FIELDS = ("grf", "lma", "none")
HYPER_NAMES = ("sigma2", "xi2", "kappa2", "lam2", "tau")


class ValidationError(ValueError):
    """Model/data inconsistency; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors) if not isinstance(errors, str) else [errors]
        super().__init__("; ".join(self.errors))


# ------------------------------------------------------------------ priors

@dataclass(frozen=True)
class HalfNormal:
    scale: float = 1.0

    def logpdf(self, x):
        return float(dist.half_normal_logpdf(x, self.scale))


@dataclass(frozen=True)
class InverseGamma:
    shape: float = 1.0
    scale: float = 1.0

    def logpdf(self, x):
        return float(dist.inverse_gamma_logpdf(x, self.shape, self.scale))


@dataclass(frozen=True)
class ParamPrior:
    """Prior on a positive parameter ``v`` stated for ``v``, ``sqrt(v)`` or ``1/v``.

    ``logpdf`` is always the induced log density of ``v``.
    """

    dist: object
    on: str = "self"    # "self" | "root" | "inverse"

    def logpdf(self, v: float) -> float:
        if not v > 0:
            return -math.inf
        if self.on == "root":
            r = math.sqrt(v)
            return self.dist.logpdf(r) - math.log(2.0 * r)
        if self.on == "inverse":
            return self.dist.logpdf(1.0 / v) - 2.0 * math.log(v)
        return self.dist.logpdf(v)


DEFAULT_PRIORS = {
    "sigma2": ParamPrior(HalfNormal(1.0), "root"),
    "xi2": ParamPrior(HalfNormal(1.0), "root"),
    "kappa2": ParamPrior(HalfNormal(1.0), "root"),
    "lam2": ParamPrior(HalfNormal(1.0), "root"),
    "tau": ParamPrior(HalfNormal(1.0), "self"),
}


# --------------------------------------------------------------- model spec

@dataclass
class ModelSpec:
    family: str = "gaussian"
    field: str = "grf"
    support: str = "discrete"          # discrete | continuous
    order: int = 1                     # k on a graph, alpha on a mesh
    nugget: bool = False               # iid effect in the Poisson predictor
    beta_variance: float = 1e3
    priors: dict = dc_field(default_factory=dict)
    fixed: dict = dc_field(default_factory=dict)
    init: dict = dc_field(default_factory=dict)
    gamma_update: str = "mh"           # mh | gibbs (continuous LMA auxiliaries)
    hyper_update: str = "separate"     # separate | joint
    max_pd_retries: int = 25
    store_field: bool = True
    store_aux: bool = False
    pointwise: bool = False

    def prior(self, name: str) -> ParamPrior:
        return self.priors.get(name, DEFAULT_PRIORS[name])

    def validate(self):
        errs = []
        if self.family not in FAMILIES:
            errs.append(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.field not in FIELDS:
            errs.append(f"field must be one of {FIELDS}, got {self.field!r}")
        if self.support not in ("discrete", "continuous"):
            errs.append(f"support must be 'discrete' or 'continuous', got {self.support!r}")
        if int(self.order) != self.order or self.order < (1 if self.support == "continuous" else 0):
            errs.append(f"order must be a {'positive' if self.support == 'continuous' else 'non-negative'} "
                        f"integer, got {self.order!r}")
        elif self.support == "continuous" and self.field == "lma" and self.order % 2:
            errs.append(str(OddAlphaUnsupported(self.order)))
        if self.nugget and self.family != "poisson":
            errs.append("nugget applies to the Poisson family only (Gaussian noise plays that role)")
        if not self.beta_variance > 0:
            errs.append("beta_variance must be positive")
        if self.gamma_update not in ("mh", "gibbs"):
            errs.append("gamma_update must be 'mh' or 'gibbs'")
        if self.hyper_update not in ("separate", "joint"):
            errs.append("hyper_update must be 'separate' or 'joint'")
        if self.max_pd_retries < 0:
            errs.append("max_pd_retries must be non-negative")
        for k, v in self.fixed.items():
            if k != "beta" and k not in HYPER_NAMES:
                errs.append(f"unknown fixed parameter {k!r}")
            elif k != "beta" and not (np.isscalar(v) and v > 0):
                errs.append(f"fixed {k} must be a positive number")
        if errs:
            raise ValidationError(errs)


# -------------------------------------------------------------------- data

@dataclass
class SpatialData:
    y: np.ndarray
    X: np.ndarray
    H: sp.csr_matrix                  # observations x field nodes
    support: object                   # GraphSupport or Mesh
    offset: np.ndarray | None = None  # multiplicative exposure (Poisson)
    train: np.ndarray | None = None
    covariate_names: list | None = None
    group: np.ndarray | None = None   # fold grouping key (e.g. village)
    ids: np.ndarray | None = None     # node index or location per observation

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        N = self.y.shape[0]
        X = np.asarray(self.X, dtype=float)
        if X.ndim < 2:
            X = X.reshape(N, -1) if X.size or N == 0 else np.zeros((N, 0))
        self.X = X
        self.H = sp.csr_matrix(self.H, dtype=float)
        self.train = np.ones(N, dtype=bool) if self.train is None else np.asarray(self.train, dtype=bool)
        if self.covariate_names is None:
            self.covariate_names = [f"x{j}" for j in range(self.X.shape[1])]
        if self.offset is not None:
            self.offset = np.asarray(self.offset, dtype=float).ravel()

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def n_field(self) -> int:
        return self.H.shape[1]

    def with_train(self, mask) -> "SpatialData":
        return replace(self, train=np.asarray(mask, dtype=bool))

    def validate(self, spec: ModelSpec):
        errs = []
        N = self.n_obs
        if self.X.shape[0] != N:
            errs.append(f"design has {self.X.shape[0]} rows but there are {N} responses")
        if self.H.shape[0] != N:
            errs.append(f"field map has {self.H.shape[0]} rows but there are {N} responses")
        if self.train.shape != (N,):
            errs.append("train mask length does not match the responses")
        n = _support_size(self.support)
        if self.H.shape[1] != n:
            errs.append(f"field map has {self.H.shape[1]} columns but the support has {n} nodes")
        if not np.all(np.isfinite(self.y)):
            errs.append("responses contain non-finite values")
        if not np.all(np.isfinite(self.X)):
            errs.append("covariates contain non-finite values")
        if spec.family == "poisson":
            if np.any(self.y < 0) or np.any(self.y != np.round(self.y)):
                errs.append("Poisson responses must be non-negative integers")
            if self.offset is not None and (self.offset.shape != (N,) or np.any(~(self.offset > 0))):
                errs.append("offsets must be positive, one per response")
        elif self.offset is not None:
            errs.append("offsets are only supported for the Poisson family")
        if spec.family == "probit" and np.any((self.y != 0) & (self.y != 1)):
            errs.append("probit responses must be 0 or 1")
        if spec.support == "discrete" and not isinstance(self.support, GraphSupport):
            errs.append("discrete support requires a graph")
        if spec.support == "continuous" and not isinstance(self.support, Mesh):
            errs.append("continuous support requires a mesh")
        if "beta" in spec.fixed and len(np.atleast_1d(spec.fixed["beta"])) != self.X.shape[1]:
            errs.append("fixed beta has the wrong length")
        if errs:
            raise ValidationError(errs)


def _support_size(support) -> int:
    return support.n


def node_map(nodes, n: int) -> sp.csr_matrix:
    """Indicator matrix sending each observation to its graph node."""
    nodes = np.asarray(nodes, dtype=np.intp)
    return sp.csr_matrix((np.ones(len(nodes)), (np.arange(len(nodes)), nodes)), shape=(len(nodes), n))


def replication_matrix(groups, n_groups: int | None = None) -> sp.csr_matrix:
    """``B`` with ``B[j, g] = 1`` when record ``j`` belongs to group ``g``."""
    groups = np.asarray(groups, dtype=np.intp)
    G = int(groups.max()) + 1 if n_groups is None else n_groups
    return sp.csr_matrix((np.ones(len(groups)), (np.arange(len(groups)), groups)), shape=(len(groups), G))


def discrete_data(y, X, graph: GraphSupport, nodes=None, **kw) -> SpatialData:
    y = np.asarray(y, dtype=float)
    nodes = np.arange(len(y)) if nodes is None else np.asarray(nodes)
    return SpatialData(y, X, node_map(nodes, graph.n), graph, ids=nodes, **kw)


def continuous_data(y, X, mesh: Mesh, locations, sites=None, **kw) -> SpatialData:
    """``locations`` are projected onto the mesh; if ``sites`` is given,
    observation ``j`` sits at ``locations[sites[j]]`` (replicated records)."""
    A = assemble_projection(mesh, locations)
    H = A if sites is None else replication_matrix(sites, A.shape[0]) @ A
    ids = np.asarray(locations, dtype=float) if sites is None else np.asarray(locations)[np.asarray(sites)]
    return SpatialData(y, X, H, mesh, ids=ids, **kw)


# --------------------------------------------------------------- operators

class FieldOperator:
    """Shared machinery for ``L(kappa2) = kappa2 * diag(c) + B`` and its powers."""

    ordering = "amd"

    def __init__(self, c: np.ndarray, B: sp.csc_matrix, order: int):
        self.n = B.shape[0]
        self.c = np.asarray(c, dtype=float)
        self.B = sp.csc_matrix(B)
        self.order = int(order)
        D = sp.diags(self.c, format="csc")
        self.L_pattern = pattern_union([self.B, D])
        self._Lc = align(self.L_pattern, D)
        self._LB = align(self.L_pattern, self.B)
        self.L_sym = Symbolic.analyze(self.L_pattern, self.ordering)
        self._Lmap = self.L_sym.value_map(self.L_pattern)
        self.logdet_c = float(np.sum(np.log(self.c)))
        self.L_poly = [self.B, D]

    def L(self, kappa2) -> sp.csc_matrix:
        P = self.L_pattern
        return sp.csc_matrix((kappa2 * self._Lc + self._LB, P.indices, P.indptr), shape=P.shape)

    def factor_L(self, kappa2):
        src, dst = self._Lmap
        Lx = np.zeros(self.L_sym.nnz)
        Lx[dst] = (kappa2 * self._Lc + self._LB)[src]
        return factorize_values(self.L_sym, Lx)

    def Lmul(self, kappa2, v):
        return kappa2 * self.c * v + self.B @ v

    # subclasses: grf_quad, t, logdet_Q, logdet_K, Q_poly, K_pattern, K_data


class DiscreteOperator(FieldOperator):
    """Graph support: ``L = kappa2 I + A``, ``Q_k = L^(k+1)``, ``Delta^(k)``."""

    def __init__(self, graph: GraphSupport, k: int):
        self.ordering = "natural" if k % 2 == 0 else "amd"
        super().__init__(np.ones(graph.n), graph_laplacian(graph), k)
        k = self.order
        P = [self.L_poly[0], self.L_poly[1]]
        Q = P
        for _ in range(k):
            Q = poly_mul(Q, P)
        self.Q = PolyMatrix(Q)
        if k % 2:
            K = P
            for _ in range((k - 1) // 2):
                K = poly_mul(K, P)
            self.K = PolyMatrix(K)
            self.K_pattern = self.K.pattern
        else:
            self.K = None
            half = [sp.identity(self.n, format="csc")]
            for _ in range(k // 2):
                half = poly_mul(half, P)
            self.half = PolyMatrix(half) if k else None
            F = sp.csc_matrix((np.ones(self.L_sym.nnz), self.L_sym.Li, self.L_sym.Lp), shape=(self.n, self.n))
            Hp = self.half.pattern if k else sp.identity(self.n, format="csc")
            self.K_pattern = pattern_union([abs(F.T) @ abs(Hp)])
        self.triple = TripleProductPlan(self.K_pattern)

    def _pow(self, kappa2, v, m):
        for _ in range(m):
            v = self.Lmul(kappa2, v)
        return v

    def grf_quad(self, kappa2, w):
        k = self.order
        if k % 2:
            u = self._pow(kappa2, w, (k + 1) // 2)
            return float(u @ u)
        u = self._pow(kappa2, w, k // 2)
        return float(u @ self.Lmul(kappa2, u))

    def t(self, kappa2, w, fL=None):
        k = self.order
        if k % 2:
            return self._pow(kappa2, w, (k + 1) // 2)
        if fL is None:
            fL = self.factor_L(kappa2)
        return fL.mul_Ft(self._pow(kappa2, w, k // 2))

    def t_inverse(self, kappa2, t, fL):
        """``w`` with ``t(kappa2, w) == t``; ``fL`` is the factor of ``L(kappa2)``."""
        k = self.order
        if k % 2:
            w = np.asarray(t, dtype=float)
            for _ in range((k + 1) // 2):
                w = fL.solve(w)
            return w
        w = fL.solve_Lt(t)      # natural ordering for even k
        for _ in range(k // 2):
            w = fL.solve(w)
        return w

    def logdet_Q(self, ldL):
        return (self.order + 1) * ldL

    def logdet_K(self, ldL):
        return 0.5 * (self.order + 1) * ldL

    def K_data(self, kappa2, fL=None):
        if self.K is not None:
            return self.K.data(kappa2)
        if fL is None:
            fL = self.factor_L(kappa2)
        Kmat = fL.factor.T
        if self.order:
            Kmat = Kmat @ self.half.matrix(kappa2)
        return align(self.K_pattern, Kmat)

    def K_matrix(self, kappa2, fL=None):
        P = self.K_pattern
        return sp.csc_matrix((self.K_data(kappa2, fL), P.indices, P.indptr), shape=P.shape)

    @property
    def aux_weights(self):
        return None


class ContinuousOperator(FieldOperator):
    """Mesh support: ``L = kappa2 C + G`` with lumped ``C``; ``Q_alpha`` and ``K_alpha``."""

    def __init__(self, mesh: Mesh, alpha: int):
        C = assemble_mass_lumped(mesh)
        super().__init__(C.diagonal(), assemble_stiffness(mesh), alpha)
        a = self.order
        P = [self.L_poly[0], self.L_poly[1]]
        Ci = sp.diags(1.0 / self.c, format="csc")
        Q = P if a % 2 else poly_mul(P, P, Ci)
        for _ in range((a - 1) // 2):
            Q = poly_mul(poly_mul(P, Q, Ci), P, Ci)
        self.Q = PolyMatrix(Q)
        if a % 2 == 0:
            K = P
            for _ in range(a // 2 - 1):
                K = poly_mul(P, K, Ci)
            self.K = PolyMatrix(K)
            self.K_pattern = self.K.pattern
            self.triple = TripleProductPlan(self.K_pattern)
        else:
            self.K = None

    def grf_quad(self, kappa2, w):
        a = self.order
        if a % 2:
            u = w
            for _ in range((a - 1) // 2):
                u = self.Lmul(kappa2, u) / self.c
            return float(u @ self.Lmul(kappa2, u))
        t = self.t(kappa2, w)
        return float(np.sum(t * t / self.c))

    def t(self, kappa2, w, fL=None):
        u = self.Lmul(kappa2, w)
        for _ in range(self.order // 2 - 1):
            u = self.Lmul(kappa2, u / self.c)
        return u

    def t_inverse(self, kappa2, t, fL):
        w = fL.solve(t)
        for _ in range(self.order // 2 - 1):
            w = fL.solve(self.c * w)
        return w

    def logdet_Q(self, ldL):
        a = self.order
        return a * ldL - (a - 1) * self.logdet_c

    def logdet_K(self, ldL):
        h = self.order // 2
        return h * ldL - (h - 1) * self.logdet_c

    def K_data(self, kappa2, fL=None):
        return self.K.data(kappa2)

    def K_matrix(self, kappa2, fL=None):
        return self.K.matrix(kappa2)

    @property
    def aux_weights(self):
        return self.c


def make_operator(spec: ModelSpec, support):
    if spec.field == "none":
        return None
    if spec.support == "discrete":
        return DiscreteOperator(support, spec.order)
    return ContinuousOperator(support, spec.order)


# ---------------------------------------------------------- conjugate block

class ConjugateBlock:
    """Gaussian full conditional of ``x = (beta, w)`` on a fixed sparsity pattern.

    Precision ``s Z'Z + diag(1/beta_var, 0) + blockdiag(0, Q_w)`` and linear
    term ``s Z' r`` with ``Z = [X, H]`` over the training observations.
    """

    def __init__(self, X, H, beta_variance, Qw_pattern=None, include_beta=True):
        p = X.shape[1] if include_beta else 0
        n = H.shape[1] if Qw_pattern is not None else 0
        self.p, self.n = p, n
        parts = []
        if p:
            parts.append(sp.csc_matrix(X))
        if n:
            parts.append(sp.csc_matrix(H))
        Z = sp.hstack(parts, format="csr") if parts else sp.csr_matrix((X.shape[0], 0))
        self.Zt = sp.csr_matrix(Z.T)
        m = p + n
        self.sym = None
        if m == 0:
            return
        ZZ = sp.csc_matrix(Z.T @ Z) if Z.shape[0] else sp.csc_matrix((m, m))
        E = sp.diags(np.r_[np.full(p, 1.0 / beta_variance), np.zeros(n)], format="csc")
        E.eliminate_zeros()
        emb = None
        if n:
            emb = sp.block_diag((sp.csc_matrix((p, p)), Qw_pattern), format="csc") if p else \
                sp.csc_matrix(Qw_pattern)
        self.pattern = pattern_union([ZZ, E, emb, sp.identity(m, format="csc")])
        self.zz = align(self.pattern, ZZ)
        self.e = align(self.pattern, E)
        self.qpos = positions(self.pattern, emb) if n else None
        self.sym = Symbolic.analyze(self.pattern)
        self.src, self.dst = self.sym.value_map(self.pattern)

    def factor(self, s: float, qdata=None):
        if self.sym is None:
            return None
        J = s * self.zz + self.e
        if self.qpos is not None:
            J[self.qpos] += qdata
        Lx = np.zeros(self.sym.nnz)
        Lx[self.dst] = J[self.src]
        return factorize_values(self.sym, Lx)

    def rhs(self, s: float, r):
        if self.sym is None:
            return None
        return s * (self.Zt @ r)


# ------------------------------------------------------------------- state

@dataclass
class ChainState:
    beta: np.ndarray
    w: np.ndarray
    sigma2: float = 1.0
    xi2: float = 1.0
    kappa2: float = 1.0
    lam2: float = 1.0
    tau: float = 1.0
    aux: np.ndarray | None = None
    eps: np.ndarray | None = None
    z: np.ndarray | None = None
    lin: np.ndarray | None = None
    ldL: float = 0.0
    loglik: float = 0.0
    pd_failures: int = 0
    pd_exhausted: int = 0
    gibbs_floor: int = 0
    sweep: int = 0


@dataclass
class PosteriorSamples:
    params: dict                      # name -> (n_store, ...) array
    loglik: np.ndarray
    heldout: np.ndarray | None
    heldout_pointwise: np.ndarray | None
    seconds: float
    seed: object
    spec: ModelSpec
    covariate_names: list
    counters: dict
    acceptance: dict

    @property
    def n(self) -> int:
        return int(self.loglik.shape[0])

    def scalar_columns(self) -> dict:
        """Ordered ``name -> 1-d array`` for every scalar parameter."""
        out = {}
        beta = self.params.get("beta")
        if beta is not None:
            for j, nm in enumerate(self.covariate_names):
                out[f"beta[{nm}]"] = beta[:, j]
        for nm in HYPER_NAMES:
            if nm in self.params:
                out[nm] = self.params[nm]
        out["loglik"] = self.loglik
        return out


# ----------------------------------------------------------------- sampler

def build_sampler(spec: ModelSpec, data: SpatialData) -> "Sampler":
    return Sampler(spec, data)


def _logdens_obs(family, y, eta, sigma2):
    if family == "gaussian":
        return dist.normal_logpdf(y, eta, math.sqrt(sigma2))
    if family == "probit":
        return dist.probit_loglik(y, eta)
    return dist.poisson_loglik(y, eta)


class Sampler:
    """Gibbs/Metropolis sampler for one model on one dataset."""

    def __init__(self, spec: ModelSpec, data: SpatialData):
        spec.validate()
        data.validate(spec)
        self.spec = spec
        self.data = data
        self.family = spec.family
        self.op = make_operator(spec, data.support)
        self.p = data.X.shape[1]
        self.n = data.n_field
        tr = np.flatnonzero(data.train)
        te = np.flatnonzero(~data.train)
        self.tr, self.te = tr, te
        self.Xtr, self.Xte = data.X[tr], data.X[te]
        self.Htr, self.Hte = data.H[tr], data.H[te]
        self.ytr, self.yte = data.y[tr], data.y[te]
        off = np.zeros(data.n_obs) if data.offset is None else np.log(data.offset)
        self.offtr, self.offte = off[tr], off[te]
        self.beta_fixed = "beta" in spec.fixed
        self.free = {nm: nm not in spec.fixed for nm in HYPER_NAMES}
        lma = spec.field == "lma"
        self.uses = {
            "sigma2": self.family == "gaussian" or (self.family == "poisson" and spec.nugget),
            "xi2": spec.field == "grf",
            "kappa2": spec.field != "none",
            "lam2": lma,
            "tau": lma and spec.support == "continuous",
        }
        self.has_field = spec.field != "none"
        if self.has_field:
            self.Qw_pattern = self.op.Q.pattern if spec.field == "grf" else self.op.triple.pattern
        else:
            self.Qw_pattern = None
        if self.family in ("gaussian", "probit"):
            self.block = ConjugateBlock(self.Xtr, self.Htr, spec.beta_variance, self.Qw_pattern,
                                        include_beta=not self.beta_fixed)
        else:
            self.Htr_csc = sp.csc_matrix(self.Htr)
            self.Htr_csc.sort_indices()
            if self.has_field:
                pat = pattern_union([self.Qw_pattern, self.Htr.T @ self.Htr])
                self.blocks = color_blocks(pat)
        self.tuners = {}

    # ---------------------------------------------------------------- setup
    def _tuner(self, name, size=1, scale=0.5, target=0.44):
        if name not in self.tuners:
            self.tuners[name] = AdaptiveTuner(size, scale, target)
        return self.tuners[name]

    def init_state(self, rng) -> ChainState:
        spec, ini = self.spec, self.spec.init
        p, n = self.p, self.n
        if self.beta_fixed:
            beta = np.asarray(spec.fixed["beta"], dtype=float).reshape(p)
        elif "beta" in ini:
            beta = np.asarray(ini["beta"], dtype=float).reshape(p)
        elif p and len(self.tr) >= p:
            if self.family == "poisson":
                r = np.log((self.ytr + 0.5)) - self.offtr
            elif self.family == "gaussian":
                r = self.ytr
            else:
                r = np.zeros(len(self.tr))
            beta = np.linalg.lstsq(self.Xtr, r, rcond=None)[0]
        else:
            beta = np.zeros(p)
        st = ChainState(beta=beta, w=np.zeros(n))
        if self.family == "gaussian" and len(self.tr) > 1:
            st.sigma2 = float(np.var(self.ytr - self.Xtr @ beta)) or 1.0
        elif self.family == "poisson":
            st.sigma2 = 0.1
        for nm in HYPER_NAMES:
            if nm in spec.fixed:
                setattr(st, nm, float(spec.fixed[nm]))
            elif nm in ini:
                setattr(st, nm, float(ini[nm]))
        if self.family == "probit":
            st.sigma2 = 1.0
        if spec.field == "lma":
            if spec.support == "continuous":
                st.aux = np.full(n, 1.0) * st.tau * self.op.aux_weights * st.lam2
            else:
                st.aux = np.full(n, 2.0 / st.lam2)
        if self.family == "poisson":
            st.eps = np.zeros(len(self.tr)) if spec.nugget else None
            st.lin = self._lin(st)
        if self.family == "probit":
            st.z = np.where(self.ytr > 0.5, 0.5, -0.5)
        if self.has_field:
            st.ldL = self.op.factor_L(st.kappa2).log_det()
        st.loglik = self.loglik(st)
        return st

    def _lin(self, st):
        lin = self.offtr + self.Xtr @ st.beta
        if self.has_field:
            lin = lin + self.Htr @ st.w
        if st.eps is not None:
            lin = lin + st.eps
        return lin

    # ------------------------------------------------------------ likelihood
    def loglik(self, st) -> float:
        eta = self._lin(st)
        return float(np.sum(_logdens_obs(self.family, self.ytr, eta, st.sigma2)))

    def heldout(self, st, rng):
        if not len(self.te):
            return None
        eta = self.offte + self.Xte @ st.beta
        if self.has_field:
            eta = eta + self.Hte @ st.w
        if self.family == "poisson" and self.spec.nugget:
            eta = eta + math.sqrt(st.sigma2) * rng.standard_normal(len(self.te))
        return _logdens_obs(self.family, self.yte, eta, st.sigma2)

    # ------------------------------------------------------------ field prior
    def _Qw_data(self, st, kdata=None, aux=None):
        if self.spec.field == "grf":
            return self.op.Q.data(st.kappa2) / st.xi2
        if kdata is None:
            kdata = self.op.K_data(st.kappa2)
        return self.op.triple.data(kdata, 1.0 / (st.aux if aux is None else aux))

    def field_logprior_terms(self, st, kappa2, xi2=None, ldL=None, fL=None):
        """``log p(w | hyper)`` up to a constant in (kappa2, xi2)."""
        op = self.op
        if ldL is None:
            fL = op.factor_L(kappa2)
            ldL = fL.log_det()
        if self.spec.field == "grf":
            q = op.grf_quad(kappa2, st.w)
            return 0.5 * op.logdet_Q(ldL) - 0.5 * self.n * math.log(xi2) - 0.5 * q / xi2
        t = op.t(kappa2, st.w, fL)
        return op.logdet_K(ldL) - 0.5 * float(np.sum(t * t / st.aux))

    def _kappa_terms(self, st, kappa2, xi2=None):
        try:
            fL = self.op.factor_L(kappa2)
        except NotPositiveDefinite:
            return -math.inf, None
        ldL = fL.log_det()
        return self.field_logprior_terms(st, kappa2, xi2, ldL, fL), ldL

    # ------------------------------------------------------- hyperparameters
    def update_hyper(self, st, rng):
        spec = self.spec
        pri = spec.prior
        if not self.has_field:
            return
        if spec.field == "grf":
            joint = spec.hyper_update == "joint" and self.free["xi2"] and self.free["kappa2"]
            if joint:
                cache = {}

                def tgt(v):
                    xi2, k2 = v
                    val, ldL = self._kappa_terms(st, k2, xi2)
                    cache[(xi2, k2)] = ldL
                    return val + pri("xi2").logpdf(xi2) + pri("kappa2").logpdf(k2)

                v0 = np.array([st.xi2, st.kappa2])
                f0 = self.field_logprior_terms(st, st.kappa2, st.xi2, st.ldL) + \
                    pri("xi2").logpdf(st.xi2) + pri("kappa2").logpdf(st.kappa2)
                v, ok, _ = adaptive_mh_joint(tgt, v0, self._tuner("xi2_kappa2", target=0.35), rng,
                                             current_logpdf=f0)
                if ok:
                    st.xi2, st.kappa2 = float(v[0]), float(v[1])
                    st.ldL = cache[(v[0], v[1])]
                return
            if self.free["xi2"]:
                q = self.op.grf_quad(st.kappa2, st.w)
                n = self.n

                def tgt_xi(x):
                    return -0.5 * n * math.log(x) - 0.5 * q / x + pri("xi2").logpdf(x)

                st.xi2 = adaptive_mh_scalar(tgt_xi, st.xi2, self._tuner("xi2"), rng, positive=True)[0]
            if self.free["kappa2"]:
                self._update_kappa2(st, rng)
            return
        # LMA
        aux = st.aux
        if spec.support == "discrete":
            if self.free["lam2"]:
                n, sS = len(aux), float(np.sum(aux))

                def tgt_lam(l2):
                    return n * math.log(l2 / 2.0) - 0.5 * l2 * sS + pri("lam2").logpdf(l2)

                st.lam2 = adaptive_mh_scalar(tgt_lam, st.lam2, self._tuner("lam2"), rng, positive=True)[0]
        else:
            c = self.op.aux_weights
            logaux = np.log(aux)
            s_aux = float(np.sum(aux))

            def gam_ll(tau, l2):
                a = tau * c
                return float(np.sum((a - 1.0) * logaux - gammaln(a) - a * math.log(l2))) - s_aux / l2

            if spec.hyper_update == "joint" and self.free["lam2"] and self.free["tau"]:
                def tgt(v):
                    tau, l2 = v
                    return gam_ll(tau, l2) + pri("tau").logpdf(tau) + pri("lam2").logpdf(l2)

                v, ok, _ = adaptive_mh_joint(tgt, np.array([st.tau, st.lam2]),
                                             self._tuner("tau_lam2", target=0.35), rng)
                st.tau, st.lam2 = float(v[0]), float(v[1])
            else:
                if self.free["lam2"]:
                    st.lam2 = adaptive_mh_scalar(lambda l2: gam_ll(st.tau, l2) + pri("lam2").logpdf(l2),
                                                 st.lam2, self._tuner("lam2"), rng, positive=True)[0]
                if self.free["tau"]:
                    st.tau = adaptive_mh_scalar(lambda tau: gam_ll(tau, st.lam2) + pri("tau").logpdf(tau),
                                                st.tau, self._tuner("tau"), rng, positive=True)[0]
        if self.free["kappa2"]:
            self._update_kappa2(st, rng)
            self._shift_kappa2(st, rng)

    def _shift_kappa2(self, st, rng):
        """Move ``kappa2`` and ``w`` together with the innovations ``t = K w`` held fixed.

        The field prior density and the Jacobian of ``w -> K(kappa2')^-1 K(kappa2) w``
        cancel, so only the likelihood and the ``kappa2`` prior enter.  This
        mixes far better than the conditional update when small auxiliaries
        pin ``t``.
        """
        op = self.op
        tuner = self._tuner("kappa2_shift", scale=0.1)
        step = float(tuner.scale[0]) * rng.standard_normal()
        logu = math.log(rng.random())
        k2 = st.kappa2 * math.exp(step)
        try:
            f_old = op.factor_L(st.kappa2) if (self.spec.support == "discrete" and op.order % 2 == 0) else None
            f_new = op.factor_L(k2)
        except NotPositiveDefinite:
            tuner.record(False)
            return
        w_new = op.t_inverse(k2, op.t(st.kappa2, st.w, f_old), f_new)
        dlin = self.Htr @ (w_new - st.w)
        if self.family == "poisson":
            y = self.ytr
            dll = float(y @ dlin - np.sum(np.exp(st.lin + dlin) - np.exp(st.lin)))
        else:
            r = (st.z if self.family == "probit" else self.ytr) - self._lin_gauss(st)
            s2 = 1.0 if self.family == "probit" else st.sigma2
            dll = -0.5 * float((r - dlin) @ (r - dlin) - r @ r) / s2
        pri = self.spec.prior("kappa2")
        log_r = dll + pri.logpdf(k2) - pri.logpdf(st.kappa2) + step
        ok = logu < log_r
        tuner.record(ok)
        if ok:
            st.kappa2, st.w = k2, w_new
            st.ldL = f_new.log_det()
            if st.lin is not None:
                st.lin = st.lin + dlin

    def _lin_gauss(self, st):
        return self.Xtr @ st.beta + self.Htr @ st.w

    def _update_kappa2(self, st, rng):
        pri = self.spec.prior("kappa2")
        cache = {}

        def tgt(k2):
            val, ldL = self._kappa_terms(st, k2, st.xi2)
            cache[k2] = ldL
            return val + pri.logpdf(k2)

        f0 = self.field_logprior_terms(st, st.kappa2, st.xi2, st.ldL) + pri.logpdf(st.kappa2)
        k2, ok, _ = adaptive_mh_scalar(tgt, st.kappa2, self._tuner("kappa2"), rng, positive=True,
                                       current_logpdf=f0)
        if ok:
            st.kappa2 = k2
            st.ldL = cache[k2]

    # --------------------------------------------------------- LMA auxiliaries
    def _aux_discrete_gibbs(self, st, rng, t):
        st.aux = lma_auxiliary_update(t, st.lam2, rng)

    def _aux_continuous_propose(self, st, t):
        c = self.op.aux_weights
        spec = self.spec

        def propose(gam, rng):
            if spec.gamma_update == "gibbs":
                new, floored = continuous_aux_gibbs(t, st.tau * c, st.lam2, rng)
                st.gibbs_floor += floored
                return new, None
            shape = st.tau * c

            def tgt(g):
                with np.errstate(divide="ignore"):
                    return (shape - 1.5) * np.log(g) - g / st.lam2 - 0.5 * t * t / g

            new, acc, _ = adaptive_mh_vector(tgt, gam, self._tuner("gamma", self.n, 0.5), rng, positive=True)
            return new, acc

        return propose

    # ----------------------------------------------------------------- sweeps
    def sweep(self, st, rng, hook=None):
        if self.family == "poisson":
            self._sweep_poisson(st, rng)
        else:
            self._sweep_conjugate(st, rng, hook)
        st.sweep += 1

    def _sweep_conjugate(self, st, rng, hook=None):
        spec = self.spec
        if self.family == "probit":
            mean = self.Xtr @ st.beta + (self.Htr @ st.w if self.has_field else 0.0)
            st.z = dist.sample_truncnorm(mean, 1.0, self.ytr, rng) if len(self.tr) else st.z
            r = st.z
        else:
            r = self.ytr
        if self.beta_fixed:
            r = r - self.Xtr @ st.beta
        s = 1.0 / st.sigma2
        h = self.block.rhs(s, r)
        blk = self.block
        if spec.field == "lma" and spec.support == "continuous":
            kdata = self.op.K_data(st.kappa2)
            t = self.op.t(st.kappa2, st.w)
            res = pd_constrained_joint_update(
                st.aux, self._aux_continuous_propose(st, t),
                lambda g: blk.factor(s, self._Qw_data(st, kdata, g)), rng,
                max_retries=spec.max_pd_retries, proposal_hook=hook, sweep=st.sweep)
            st.pd_failures += res.failures
            if not res.success:
                st.pd_exhausted += 1
                f = None
            else:
                st.aux = res.gamma
                f = res.factor
        else:
            if spec.field == "lma":
                fL = self.op.factor_L(st.kappa2) if self.op.K is None else None
                self._aux_discrete_gibbs(st, rng, self.op.t(st.kappa2, st.w, fL))
                kdata = self.op.K_data(st.kappa2, fL)
                q = self._Qw_data(st, kdata)
            elif spec.field == "grf":
                q = self._Qw_data(st)
            else:
                q = None
            try:
                f = blk.factor(s, q)
            except NotPositiveDefinite:
                st.pd_failures += 1
                f = None
        if f is not None:
            x = f.sample(h, rng)
            if blk.p:
                st.beta = x[:blk.p]
            if blk.n:
                st.w = x[blk.p:]
        if self.family == "gaussian" and self.free["sigma2"]:
            self._update_sigma2(st, rng, self.ytr - self.Xtr @ st.beta
                                - (self.Htr @ st.w if self.has_field else 0.0))
        self.update_hyper(st, rng)

    def _update_sigma2(self, st, rng, resid):
        pri = self.spec.prior("sigma2")
        N = len(resid)
        ss = float(resid @ resid)
        if isinstance(pri.dist, InverseGamma) and pri.on == "self":
            st.sigma2 = float((pri.dist.scale + 0.5 * ss) / rng.gamma(pri.dist.shape + 0.5 * N))
            return

        def tgt(v):
            return -0.5 * N * math.log(v) - 0.5 * ss / v + pri.logpdf(v)

        st.sigma2 = adaptive_mh_scalar(tgt, st.sigma2, self._tuner("sigma2"), rng, positive=True)[0]

    def _sweep_poisson(self, st, rng):
        spec = self.spec
        y = self.ytr
        if self.has_field:
            fL = None
            if spec.field == "lma" and self.op.K is None:
                fL = self.op.factor_L(st.kappa2)
            kdata = self.op.K_data(st.kappa2, fL) if spec.field == "lma" else None
            P = self.Qw_pattern
            Qw = sp.csr_matrix((self._Qw_data(st, kdata), P.indices, P.indptr), shape=P.shape)
            car = car_decompose(Qw)
            one_at_a_time_block_update(st.w, st.lin, car, self.blocks, self.Htr_csc, y, "poisson", 1.0,
                                       self._tuner("field", self.n, 1.0), rng)
            if spec.field == "lma":
                t = self.op.t(st.kappa2, st.w, fL)
                if spec.support == "discrete":
                    self._aux_discrete_gibbs(st, rng, t)
                else:
                    st.aux = self._aux_continuous_propose(st, t)(st.aux, rng)[0]
        if st.eps is not None:
            base = st.lin - st.eps
            s2 = st.sigma2

            def tgt_eps(e):
                v = base + e
                return y * v - np.exp(v) - 0.5 * e * e / s2

            st.eps = adaptive_mh_vector(tgt_eps, st.eps, self._tuner("eps", len(st.eps), 0.5), rng)[0]
            st.lin = base + st.eps
        if not self.beta_fixed:
            bv = spec.beta_variance
            for j in range(self.p):
                xj = self.Xtr[:, j]
                base = st.lin - xj * st.beta[j]

                def tgt_b(b):
                    v = base + xj * b
                    return float(y @ v - np.sum(np.exp(v))) - 0.5 * b * b / bv

                st.beta[j] = adaptive_mh_scalar(tgt_b, st.beta[j], self._tuner(f"beta{j}", scale=0.1), rng)[0]
                st.lin = base + xj * st.beta[j]
        if st.eps is not None and self.free["sigma2"]:
            pri = spec.prior("sigma2")
            N = len(st.eps)
            ss = float(st.eps @ st.eps)
            if isinstance(pri.dist, InverseGamma) and pri.on == "self":
                st.sigma2 = float((pri.dist.scale + 0.5 * ss) / rng.gamma(pri.dist.shape + 0.5 * N))
            else:
                st.sigma2 = adaptive_mh_scalar(
                    lambda v: -0.5 * N * math.log(v) - 0.5 * ss / v + pri.logpdf(v),
                    st.sigma2, self._tuner("sigma2"), rng, positive=True)[0]
        self.update_hyper(st, rng)

    # -------------------------------------------------------------------- run
    def run(self, burn_in=1000, n_store=50_000, thin=1, seed=0, progress=None, debug=False,
            hook=None) -> PosteriorSamples:
        if n_store < 1 or thin < 1 or burn_in < 0:
            raise ValidationError("need n_store >= 1, thin >= 1 and burn_in >= 0")
        rng = np.random.default_rng(seed)
        st = self.init_state(rng)
        spec = self.spec
        for it in range(burn_in):
            self.sweep(st, rng, hook)
            if debug:
                self._check(st)
        for tn in self.tuners.values():
            tn.freeze()
        store = {"beta": np.empty((n_store, self.p))}
        for nm in HYPER_NAMES:
            if self.uses[nm]:
                store[nm] = np.empty(n_store)
        if self.has_field and spec.store_field:
            store["field"] = np.empty((n_store, self.n))
        if spec.store_aux and st.aux is not None:
            store["aux"] = np.empty((n_store, self.n))
        loglik = np.empty(n_store)
        nte = len(self.te)
        held = np.empty(n_store) if nte else None
        heldp = np.empty((n_store, nte)) if nte and spec.pointwise else None
        t0 = time.perf_counter()
        for s in range(n_store):
            for _ in range(thin):
                self.sweep(st, rng, hook)
                if debug:
                    self._check(st)
            store["beta"][s] = st.beta
            for nm in HYPER_NAMES:
                if nm in store:
                    store[nm][s] = getattr(st, nm)
            if "field" in store:
                store["field"][s] = st.w
            if "aux" in store:
                store["aux"][s] = st.aux
            loglik[s] = self.loglik(st) if self.family != "poisson" else self._loglik_cached(st)
            if nte:
                lp = self.heldout(st, rng)
                held[s] = lp.sum()
                if heldp is not None:
                    heldp[s] = lp
            if progress is not None:
                progress(s)
        seconds = time.perf_counter() - t0
        counters = {"pd_failures": st.pd_failures, "pd_exhausted": st.pd_exhausted,
                    "gig_b_floored": st.gibbs_floor}
        acc = {k: float(np.mean(t.acceptance_rate)) for k, t in self.tuners.items()}
        return PosteriorSamples(store, loglik, held, heldp, seconds, seed, spec,
                                list(self.data.covariate_names), counters, acc)

    def _loglik_cached(self, st):
        return float(np.sum(dist.poisson_loglik(self.ytr, st.lin)))

    def _check(self, st):
        """Debug check: cached linear predictor and log-likelihood match a recomputation."""
        if st.lin is not None:
            fresh = self._lin(st)
            if not np.allclose(st.lin, fresh, rtol=0, atol=1e-8):
                raise AssertionError("cached linear predictor drifted from recomputation")
            st.lin = fresh
        ll = self.loglik(st)
        cached = self._loglik_cached(st) if self.family == "poisson" else ll
        if abs(ll - cached) > 1e-8 * max(1.0, abs(ll)):
            raise AssertionError("cached log-likelihood drifted from recomputation")
        st.loglik = ll


# ------------------------------------------------------- standalone updates

def lma_auxiliary_update(t, lam2, rng):
    """Graph-LMA auxiliaries: ``1/S_i ~ InvGauss(sqrt(lam2 / t_i^2), lam2)``.

    When ``t_i == 0`` the conditional is ``GIG(1/2, lam2, 0)``, i.e.
    ``Gamma(1/2, rate lam2 / 2)``.
    """
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    nz = t != 0
    if np.any(nz):
        out[nz] = 1.0 / dist.sample_invgauss(np.sqrt(lam2) / np.abs(t[nz]), lam2, rng)
    if not np.all(nz):
        out[~nz] = rng.gamma(0.5, 2.0 / lam2, int(np.sum(~nz)))
    return out


def continuous_aux_gibbs(t, shape, lam2, rng, b_floor=1e-12):
    """Mesh-LMA auxiliaries: ``Gamma_i ~ GIG(shape_i - 1/2, 2 / lam2, t_i^2)``.

    Returns ``(draws, n_floored)``; a zero ``t_i`` with ``shape_i <= 1/2``
    has no proper gamma limit, so ``b`` is floored at ``b_floor``.
    """
    p = np.asarray(shape, dtype=float) - 0.5
    b = np.asarray(t, dtype=float) ** 2
    bad = (b == 0) & (p <= 0)
    b = np.where(bad, b_floor, b)
    return dist.sample_gig(p, 2.0 / lam2, b, rng), int(np.sum(bad))


def penalty_logprior(eta, Delta, kind: str, xi2: float | None = None, lam: float | None = None) -> float:
    """Penalty form of the field prior (no normalizing constants).

    GRF: ``-||Delta eta||^2 / (2 xi2)``; LMA: ``-lam ||Delta eta||_1``, the
    log of the Laplace(lam) density on each weighted difference.
    """
    t = Delta @ np.asarray(eta, dtype=float)
    if kind == "grf":
        return -0.5 * float(t @ t) / xi2
    if kind == "lma":
        return -lam * float(np.sum(np.abs(t)))
    raise ValueError(f"unknown prior kind {kind!r}")


def simulate_field(spec: ModelSpec, support, draws: int, rng, params: dict | None = None) -> dict:
    """Draws of the field from its prior at fixed hyperparameters.

    ``params`` (default: ``spec.fixed``, then 1.0) supplies ``xi2``,
    ``kappa2``, ``lam2`` and ``tau``.  Returns ``{"field": (draws, n)}`` and,
    for LMA priors, the auxiliary variances under ``"aux"``.
    """
    from scipy.sparse.linalg import splu

    spec.validate()
    if spec.field == "none":
        raise ValidationError("field = none has nothing to simulate")
    par = {k: 1.0 for k in ("xi2", "kappa2", "lam2", "tau")}
    par.update({k: v for k, v in spec.fixed.items() if k != "beta"})
    par.update(params or {})
    op = make_operator(spec, support)
    n = op.n
    out = np.empty((draws, n))
    if spec.field == "grf":
        Q = op.Q.matrix(par["kappa2"])
        f = Symbolic.analyze(Q)
        from .sparse import factorize
        fac = factorize(Q, symbolic=f)
        for s in range(draws):
            out[s] = math.sqrt(par["xi2"]) * fac.sample(None, rng)
        return {"field": out}
    K = op.K_matrix(par["kappa2"])
    lu = splu(sp.csc_matrix(K))
    aux = np.empty((draws, n))
    for s in range(draws):
        if spec.support == "discrete":
            v = rng.exponential(2.0 / par["lam2"], n)
        else:
            v = rng.gamma(par["tau"] * op.aux_weights, par["lam2"])
        aux[s] = v
        out[s] = lu.solve(np.sqrt(v) * rng.standard_normal(n))
    return {"field": out, "aux": aux}
