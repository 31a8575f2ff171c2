"""Command line entry point: ``lmaspatial {fit,cv,simulate} --config FILE``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import io
from .config import parse_config
from .evaluation import cross_validate
from .fem import read_mesh
from .graph import read_adjacency
from .models import ValidationError, build_sampler, simulate_field

log = logging.getLogger("lmaspatial")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def load_support(cfg):
    if cfg.support == "discrete":
        return read_adjacency(cfg.adjacency)
    return read_mesh(cfg.mesh)


def _load(cfg, support):
    loaded = io.load_dataset(cfg.data_path, cfg.response, cfg.covariates, cfg.intercept,
                             cfg.spec.family, cfg.offset, cfg.node, cfg.coords,
                             cfg.cv_group or cfg.group)
    data = io.build_data(cfg, support, loaded)
    data.validate(cfg.spec)
    return data


def cmd_fit(cfg) -> dict:
    support = load_support(cfg)
    data = _load(cfg, support)
    sampler = build_sampler(cfg.spec, data)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains) if cfg.chains > 1 else [cfg.seed]
    posts = []
    for c, s in enumerate(seeds):
        log.info("chain %d: %d burn-in, %d stored states (thin %d)", c, cfg.burn_in, cfg.n_store, cfg.thin)
        if c:
            sampler = build_sampler(cfg.spec, data)
        posts.append(sampler.run(cfg.burn_in, cfg.n_store, cfg.thin, s))
    out = io.ensure_dir(cfg.output)
    io.write_samples(os.path.join(out, "samples.csv"), posts, cfg.seed)
    io.write_field_samples(os.path.join(out, "field_samples.npz"), posts)
    io.write_summary(os.path.join(out, "summary.csv"), posts, data.X, cfg.seed)
    io.write_predictions(os.path.join(out, "predictions.csv"), posts, data, support)
    io.write_fitted(os.path.join(out, "fitted.csv"), posts, data)
    return io.write_report(os.path.join(out, "report.txt"), posts, cfg.seed)


def cmd_cv(cfg) -> dict:
    support = load_support(cfg)
    data = _load(cfg, support)
    groups = data.group if cfg.cv_group else None
    res = cross_validate(cfg.spec, data, k=cfg.cv_k, groups=groups, seed=cfg.seed, burn_in=cfg.burn_in,
                         n_store=cfg.n_store, thin=cfg.thin, pointwise=cfg.cv_pointwise,
                         progress=lambda j: log.info("fold %d done", j))
    out = io.ensure_dir(cfg.output)
    with open(os.path.join(out, "folds.csv"), "w") as fh:
        fh.write(f"# seed={cfg.seed}\nrow,fold\n")
        for i, f in enumerate(res.plan.fold):
            fh.write(f"{i},{f}\n")
    report = {"seed": cfg.seed, "bcvs": res.bcvs, "pointwise": res.pointwise, "folds": res.plan.k,
              "seconds": res.seconds}
    for j, s in enumerate(res.fold_scores()):
        report[f"fold{j}.score"] = float(s)
    with open(os.path.join(out, "cv_report.txt"), "w") as fh:
        for k, v in report.items():
            fh.write(f"{k} = {v}\n")
    return report


def cmd_simulate(cfg) -> dict:
    support = load_support(cfg)
    rng = np.random.default_rng(cfg.seed)
    sims = simulate_field(cfg.spec, support, cfg.draws, rng, dict(cfg.spec.init))
    out = io.ensure_dir(cfg.output)
    np.savez_compressed(os.path.join(out, "prior_fields.npz"), **sims)
    F = sims["field"]
    with open(os.path.join(out, "prior_fields.csv"), "w") as fh:
        fh.write(f"# seed={cfg.seed}\n")
        fh.write("draw," + ",".join(f"node{i}" for i in range(F.shape[1])) + "\n")
        for s in range(F.shape[0]):
            fh.write(f"{s}," + ",".join(format(v, ".17g") for v in F[s]) + "\n")
    return {"draws": F.shape[0], "nodes": F.shape[1]}


COMMANDS = {"fit": cmd_fit, "cv": cmd_cv, "simulate": cmd_simulate}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="lmaspatial", description="Spatial GLMMs with GRF and LMA priors")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="run configuration (INI)")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config, args.command)
        result = COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print("invalid input:", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for k, v in result.items():
        print(f"{k} = {v}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
