"""Dataset loading and output writing."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .evaluation import ess, summary_rows
from .fem import LocationOutsideMesh
from .models import ValidationError


class MissingColumn(ValidationError):
    pass


class NonNumeric(ValidationError):
    pass


class NegativeCount(ValidationError):
    pass


class NonBinary(ValidationError):
    pass


@dataclass
class Table:
    header: list
    rows: list

    def column(self, name: str, path: str = "") -> np.ndarray:
        if name not in self.header:
            raise MissingColumn([f"{path}: column {name!r} not found (have {', '.join(self.header)})"])
        j = self.header.index(name)
        out = np.empty(len(self.rows))
        for i, r in enumerate(self.rows):
            try:
                out[i] = float(r[j])
            except (ValueError, IndexError):
                val = r[j] if j < len(r) else "<missing>"
                raise NonNumeric([f"{path}: row {i + 1}, column {name!r}: {val!r} is not a number"]) from None
        return out

    def raw(self, name: str, path: str = "") -> np.ndarray:
        if name not in self.header:
            raise MissingColumn([f"{path}: column {name!r} not found"])
        j = self.header.index(name)
        return np.array([r[j] for r in self.rows])


def read_table(path) -> Table:
    with open(path, newline="") as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValidationError([f"{path}: empty file"])
    delim = "\t" if "\t" in lines[0] else ","
    rows = list(csv.reader(lines, delimiter=delim))
    header = [h.strip() for h in rows[0]]
    return Table(header, [[c.strip() for c in r] for r in rows[1:]])


@dataclass
class LoadedData:
    y: np.ndarray
    X: np.ndarray
    names: list
    coords: np.ndarray | None
    nodes: np.ndarray | None
    offset: np.ndarray | None
    group: np.ndarray | None


def load_dataset(path, response: str, covariates=(), intercept: bool = True, family: str = "gaussian",
                 offset: str | None = None, node: str | None = None, coords=None,
                 group: str | None = None) -> LoadedData:
    """Read a delimited file and resolve column roles."""
    tab = read_table(path)
    p = str(path)
    y = tab.column(response, p)
    cols, names = [], []
    if intercept:
        cols.append(np.ones(len(y)))
        names.append("Intercept")
    for c in covariates:
        cols.append(tab.column(c, p))
        names.append(c)
    X = np.column_stack(cols) if cols else np.zeros((len(y), 0))
    if family == "poisson":
        bad = np.flatnonzero((y < 0) | (y != np.round(y)))
        if bad.size:
            raise NegativeCount([f"{p}: row {bad[0] + 1}: Poisson response {y[bad[0]]!r} is not a "
                                 f"non-negative integer"])
    if family == "probit":
        bad = np.flatnonzero((y != 0) & (y != 1))
        if bad.size:
            raise NonBinary([f"{p}: row {bad[0] + 1}: probit response {y[bad[0]]!r} is not 0 or 1"])
    off = None
    if offset is not None:
        off = tab.column(offset, p)
        bad = np.flatnonzero(~(off > 0))
        if bad.size:
            raise ValidationError([f"{p}: row {bad[0] + 1}: offset must be positive"])
    nodes = None
    if node is not None:
        nv = tab.column(node, p)
        if np.any(nv != np.round(nv)) or np.any(nv < 0):
            raise ValidationError([f"{p}: node column {node!r} must hold non-negative integers"])
        nodes = nv.astype(np.intp)
    xy = None
    if coords is not None:
        xy = np.column_stack([tab.column(coords[0], p), tab.column(coords[1], p)])
    grp = tab.raw(group, p) if group is not None else None
    return LoadedData(y, X, names, xy, nodes, off, grp)


def build_data(cfg, support, loaded: LoadedData):
    """SpatialData for a parsed run configuration."""
    from .models import continuous_data, discrete_data

    kw = dict(covariate_names=loaded.names, offset=loaded.offset, group=loaded.group)
    if cfg.support == "discrete":
        nodes = loaded.nodes
        if nodes is None:
            if len(loaded.y) != support.n:
                raise ValidationError([f"{len(loaded.y)} data rows but the graph has {support.n} nodes; "
                                       f"give a node column"])
            nodes = np.arange(support.n)
        if nodes.size and nodes.max() >= support.n:
            raise ValidationError([f"node index {int(nodes.max())} is outside the graph (n={support.n})"])
        return discrete_data(loaded.y, loaded.X, support, nodes, **kw)
    try:
        return continuous_data(loaded.y, loaded.X, support, loaded.coords, **kw)
    except LocationOutsideMesh as exc:
        raise ValidationError([f"data row {exc.index + 1}: {exc}"]) from None


# ------------------------------------------------------------------ outputs

def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_samples(path, posts, seed) -> None:
    """One row per stored state (``chain`` column first), full precision."""
    cols = posts[0].scalar_columns()
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        fh.write(",".join(["chain", *cols]) + "\n")
        for c, post in enumerate(posts):
            arrs = list(post.scalar_columns().values())
            for i in range(post.n):
                fh.write(",".join([str(c), *(_fmt(a[i]) for a in arrs)]) + "\n")


def read_samples(path) -> tuple[dict, str | None]:
    """Inverse of :func:`write_samples`: ``(columns, seed)``."""
    seed = None
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("# seed="):
            seed = first.strip()[len("# seed="):]
        else:
            fh.seek(0)
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {h: data[:, j] for j, h in enumerate(header)}, seed


def write_field_samples(path, posts) -> None:
    arrays = {}
    for c, post in enumerate(posts):
        for key in ("field", "aux"):
            if key in post.params:
                arrays[f"{key}_chain{c}"] = post.params[key]
    np.savez_compressed(path, **arrays)


def write_summary(path, posts, X=None, seed=None) -> list:
    merged = _merge(posts)
    rows = summary_rows(merged, X)
    with open(path, "w", newline="") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        fh.write("predictor,parameter,estimate,ci_low,ci_high\n")
        for r in rows:
            fh.write(",".join([r[0], r[1], *(_fmt(v) for v in r[2:])]) + "\n")
    return rows


def _merge(posts):
    if len(posts) == 1:
        return posts[0]
    from dataclasses import replace
    params = {k: np.concatenate([p.params[k] for p in posts]) for k in posts[0].params}
    return replace(posts[0], params=params, loglik=np.concatenate([p.loglik for p in posts]))


def write_report(path, posts, seed, extra: dict | None = None) -> dict:
    """ESS, timing and sampler counters; the only output with wall-clock content."""
    out = {"seed": seed}
    for c, post in enumerate(posts):
        e = ess(post.loglik) if post.n >= 100 else float("nan")
        out[f"chain{c}.n_store"] = post.n
        out[f"chain{c}.ess_loglik"] = e
        out[f"chain{c}.seconds"] = post.seconds
        out[f"chain{c}.ess_per_second"] = e / post.seconds if post.seconds > 0 else float("nan")
        for k, v in post.counters.items():
            out[f"chain{c}.{k}"] = v
        for k, v in post.acceptance.items():
            out[f"chain{c}.acceptance.{k}"] = v
    if extra:
        out.update(extra)
    with open(path, "w") as fh:
        for k, v in out.items():
            fh.write(f"{k} = {v}\n")
    return out


def write_predictions(path, posts, data, support) -> None:
    """Posterior field summaries per support node, keyed by node id (and coordinates)."""
    merged = _merge(posts)
    coords = getattr(support, "nodes", None)
    with open(path, "w", newline="") as fh:
        head = ["node"] + (["x", "y"] if coords is not None else []) + ["field_mean", "field_low", "field_high"]
        fh.write(",".join(head) + "\n")
        if "field" not in merged.params:
            return
        F = merged.params["field"]
        mean = F.mean(axis=0)
        lo, hi = np.quantile(F, [0.025, 0.975], axis=0)
        for i in range(F.shape[1]):
            row = [str(i)] + ([_fmt(coords[i, 0]), _fmt(coords[i, 1])] if coords is not None else [])
            fh.write(",".join(row + [_fmt(mean[i]), _fmt(lo[i]), _fmt(hi[i])]) + "\n")


def write_fitted(path, posts, data) -> None:
    """Posterior mean of the linear predictor for every data row."""
    merged = _merge(posts)
    eta = merged.params["beta"] @ data.X.T
    if "field" in merged.params:
        eta = eta + (data.H @ merged.params["field"].T).T
    if data.offset is not None:
        eta = eta + np.log(data.offset)
    m = eta.mean(axis=0)
    with open(path, "w", newline="") as fh:
        fh.write("row,observed,linear_predictor_mean\n")
        for i in range(len(m)):
            fh.write(f"{i},{_fmt(data.y[i])},{_fmt(m[i])}\n")


def ensure_dir(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc.strerror}") from exc
    return path
