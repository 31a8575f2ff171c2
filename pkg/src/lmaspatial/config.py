"""Run configuration files.

Plain INI text (``[section]`` headers, ``key = value`` lines, ``#`` or ``;``
comments).  Relative paths are resolved against the config file's folder.

    [run]        command, output, seed, burn_in, n_store, thin, chains
    [data]       path, response, covariates, intercept, offset, node, x, y, group
    [support]    type (discrete|continuous), adjacency, mesh
    [model]      family, field, order, nugget, beta_variance, gamma_update,
                 hyper_update, max_pd_retries
    [priors]     <quantity> = half_normal(s) | inverse_gamma(a, b)
    [fixed]      sigma2, xi2, kappa2, lam2, tau = <positive number>
    [init]       same keys as [fixed]
    [cv]         k, group, pointwise
    [simulate]   draws

Prior keys name the quantity the distribution is placed on: ``sigma`` or
``sigma2``, ``xi`` or ``xi2``, ``kappa`` or ``kappa2``, ``lambda``,
``lambda2`` or ``inv_lambda2`` (for ``1/lambda^2``), and ``tau``.
"""
from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, field

from .models import HYPER_NAMES, HalfNormal, InverseGamma, ModelSpec, ParamPrior, ValidationError

COMMANDS = ("fit", "cv", "simulate")

PRIOR_KEYS = {
    "sigma": ("sigma2", "root"), "sigma2": ("sigma2", "self"),
    "xi": ("xi2", "root"), "xi2": ("xi2", "self"),
    "kappa": ("kappa2", "root"), "kappa2": ("kappa2", "self"),
    "lambda": ("lam2", "root"), "lambda2": ("lam2", "self"), "inv_lambda2": ("lam2", "inverse"),
    "tau": ("tau", "self"),
}

_KNOWN = {
    "run": {"command", "output", "seed", "burn_in", "n_store", "thin", "chains"},
    "data": {"path", "response", "covariates", "intercept", "offset", "node", "x", "y", "group"},
    "support": {"type", "adjacency", "mesh"},
    "model": {"family", "field", "order", "nugget", "beta_variance", "gamma_update", "hyper_update",
              "max_pd_retries"},
    "priors": set(PRIOR_KEYS),
    "fixed": set(HYPER_NAMES),
    "init": set(HYPER_NAMES),
    "cv": {"k", "group", "pointwise"},
    "simulate": {"draws"},
}


class ConfigError(ValidationError):
    pass


@dataclass
class RunConfig:
    command: str = "fit"
    output: str = "output"
    seed: int = 0
    burn_in: int = 1000
    n_store: int = 50_000
    thin: int = 1
    chains: int = 1
    data_path: str | None = None
    response: str | None = None
    covariates: list = field(default_factory=list)
    intercept: bool = True
    offset: str | None = None
    node: str | None = None
    coords: tuple | None = None
    group: str | None = None
    support: str = "discrete"
    adjacency: str | None = None
    mesh: str | None = None
    spec: ModelSpec = field(default_factory=ModelSpec)
    cv_k: int = 10
    cv_group: str | None = None
    cv_pointwise: bool = False
    draws: int = 100
    source: str | None = None


_PRIOR_RE = re.compile(r"^\s*(half_normal|inverse_gamma)\s*\(([^)]*)\)\s*$")


def parse_prior(key: str, text: str) -> tuple[str, ParamPrior]:
    if key not in PRIOR_KEYS:
        raise ValueError(f"unknown prior quantity {key!r}")
    m = _PRIOR_RE.match(text)
    if not m:
        raise ValueError(f"expected half_normal(s) or inverse_gamma(a, b), got {text!r}")
    args = [float(a) for a in m.group(2).split(",") if a.strip()]
    if any(not a > 0 for a in args):
        raise ValueError("prior parameters must be positive")
    if m.group(1) == "half_normal":
        if len(args) != 1:
            raise ValueError("half_normal takes one scale argument")
        d = HalfNormal(args[0])
    else:
        if len(args) != 2:
            raise ValueError("inverse_gamma takes shape and scale arguments")
        d = InverseGamma(*args)
    name, on = PRIOR_KEYS[key]
    return name, ParamPrior(d, on)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _list(s: str) -> list:
    return [t.strip() for t in s.replace(";", ",").split(",") if t.strip()]


def parse_config(path, command: str | None = None) -> RunConfig:
    """Read and validate a run configuration, reporting every problem at once."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from exc
    except configparser.Error as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    base = os.path.dirname(os.path.abspath(path))
    errs: list[str] = []
    cfg = RunConfig(source=os.path.abspath(path))
    spec_kw: dict = {"priors": {}, "fixed": {}, "init": {}}

    for sec in cp.sections():
        if sec not in _KNOWN:
            errs.append(f"[{sec}]: unknown section")
            continue
        for key in cp[sec]:
            if key not in _KNOWN[sec]:
                errs.append(f"[{sec}] {key}: unknown key")

    def get(sec, key, conv=str, default=None):
        if not cp.has_option(sec, key):
            return default
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            errs.append(f"[{sec}] {key}: {exc}")
            return default

    def resolve(p):
        return p if p is None or os.path.isabs(p) else os.path.join(base, p)

    def posint(name, v, lo=1):
        if v is not None and v < lo:
            errs.append(f"[run] {name}: must be >= {lo}")

    cfg.command = command or get("run", "command", default="fit")
    if cfg.command not in COMMANDS:
        errs.append(f"[run] command: must be one of {COMMANDS}, got {cfg.command!r}")
    cfg.output = resolve(get("run", "output", default="output"))
    cfg.seed = get("run", "seed", int, 0)
    cfg.burn_in = get("run", "burn_in", int, 1000)
    cfg.n_store = get("run", "n_store", int, 50_000)
    cfg.thin = get("run", "thin", int, 1)
    cfg.chains = get("run", "chains", int, 1)
    posint("burn_in", cfg.burn_in, 0)
    posint("n_store", cfg.n_store)
    posint("thin", cfg.thin)
    posint("chains", cfg.chains)

    cfg.data_path = resolve(get("data", "path"))
    cfg.response = get("data", "response")
    cfg.covariates = get("data", "covariates", _list, [])
    cfg.intercept = get("data", "intercept", _bool, True)
    cfg.offset = get("data", "offset")
    cfg.node = get("data", "node")
    cfg.group = get("data", "group")
    xcol, ycol = get("data", "x"), get("data", "y")
    if (xcol is None) != (ycol is None):
        errs.append("[data] x, y: give both coordinate columns or neither")
    cfg.coords = (xcol, ycol) if xcol is not None and ycol is not None else None

    cfg.support = get("support", "type", default="discrete")
    cfg.adjacency = resolve(get("support", "adjacency"))
    cfg.mesh = resolve(get("support", "mesh"))
    if cfg.support == "discrete":
        if cfg.adjacency is None:
            errs.append("[support] adjacency: required for discrete support")
    elif cfg.support == "continuous":
        if cfg.mesh is None:
            errs.append("[support] mesh: required for continuous support")
        if cfg.command != "simulate" and cfg.coords is None:
            errs.append("[data] x, y: coordinate columns are required for continuous support")
    else:
        errs.append(f"[support] type: must be 'discrete' or 'continuous', got {cfg.support!r}")
    for key, p in (("adjacency", cfg.adjacency), ("mesh", cfg.mesh)):
        if p is not None and not os.path.isfile(p):
            errs.append(f"[support] {key}: file not found: {p}")
    if cfg.command != "simulate":
        if cfg.data_path is None:
            errs.append("[data] path: required")
        elif not os.path.isfile(cfg.data_path):
            errs.append(f"[data] path: file not found: {cfg.data_path}")
        if cfg.response is None:
            errs.append("[data] response: required")

    for key in ("family", "field", "gamma_update", "hyper_update"):
        v = get("model", key)
        if v is not None:
            spec_kw[key] = v
    for key, conv in (("order", int), ("beta_variance", float), ("max_pd_retries", int),
                      ("nugget", _bool)):
        v = get("model", key, conv)
        if v is not None:
            spec_kw[key] = v
    spec_kw["support"] = cfg.support

    if cp.has_section("priors"):
        for key, raw in cp["priors"].items():
            if key not in PRIOR_KEYS:
                continue
            try:
                name, pr = parse_prior(key, raw)
            except ValueError as exc:
                errs.append(f"[priors] {key}: {exc}")
                continue
            if name in spec_kw["priors"]:
                errs.append(f"[priors] {key}: prior for {name} given twice")
            spec_kw["priors"][name] = pr
    for sec in ("fixed", "init"):
        if cp.has_section(sec):
            for key in cp[sec]:
                if key in HYPER_NAMES:
                    v = get(sec, key, float)
                    if v is not None and not v > 0:
                        errs.append(f"[{sec}] {key}: must be positive")
                    elif v is not None:
                        spec_kw[sec][key] = v

    cfg.cv_k = get("cv", "k", int, 10)
    if cfg.cv_k is not None and cfg.cv_k < 2:
        errs.append("[cv] k: must be at least 2")
    cfg.cv_group = get("cv", "group")
    cfg.cv_pointwise = get("cv", "pointwise", _bool, False)
    cfg.draws = get("simulate", "draws", int, 100)
    posint("draws", cfg.draws)

    if cfg.output and os.path.exists(cfg.output) and not os.path.isdir(cfg.output):
        errs.append(f"[run] output: {cfg.output} exists and is not a directory")

    spec = ModelSpec(**{k: v for k, v in spec_kw.items()})
    spec.pointwise = cfg.cv_pointwise
    try:
        spec.validate()
    except ValidationError as exc:
        errs.extend(f"[model] {e}" for e in exc.errors)
    cfg.spec = spec
    if errs:
        raise ConfigError(errs)
    return cfg
