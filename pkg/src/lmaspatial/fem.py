"""P1 finite elements on a triangular mesh for the Matérn SPDE.

Mesh file format (plain text, ``#`` comments allowed)::

    nodes <n> triangles <m>
    x y            # n lines
    i j k          # m lines, 0-based node indices
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

AREA_TOL = 1e-14
LOCATE_TOL = 1e-12


class DegenerateTriangle(ValueError):
    def __init__(self, index: int, area: float):
        self.index = int(index)
        super().__init__(f"triangle {index} has area {area:.3e} (< {AREA_TOL:g})")


class LocationOutsideMesh(ValueError):
    def __init__(self, index: int, point=None):
        self.index = int(index)
        where = "" if point is None else f" at ({point[0]:g}, {point[1]:g})"
        super().__init__(f"location {index}{where} is not inside any triangle")


class OddAlphaUnsupported(ValueError):
    def __init__(self, alpha):
        super().__init__(f"the LMA operator is only defined for even alpha (got alpha={alpha})")


class NonPositiveKappa(ValueError):
    pass


@dataclass
class Mesh:
    nodes: np.ndarray       # (n, 2)
    triangles: np.ndarray   # (m, 3)
    boundary: np.ndarray | None = None

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.intp)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise ValueError("nodes must be an (n, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be an (m, 3) array")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.nodes)):
            raise ValueError("triangle references a node index out of range")
        area = self.signed_areas()
        bad = np.flatnonzero(np.abs(area) < AREA_TOL)
        if bad.size:
            raise DegenerateTriangle(bad[0], abs(area[bad[0]]))
        if self.boundary is None:
            self.boundary = boundary_nodes(self.triangles, len(self.nodes))

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas())

    @property
    def area(self) -> float:
        return float(self.areas().sum())


def boundary_nodes(triangles, n):
    """Nodes on edges that belong to exactly one triangle."""
    e = np.sort(np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    flag = np.zeros(n, dtype=bool)
    flag[uniq[counts == 1].ravel()] = True
    return flag


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        lines = [ln.split("#", 1)[0].strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty mesh file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "nodes" or head[2] != "triangles":
        raise ValueError(f"{path}: header must read 'nodes <n> triangles <m>'")
    n, m = int(head[1]), int(head[3])
    if len(lines) != 1 + n + m:
        raise ValueError(f"{path}: expected {n} node lines and {m} triangle lines, found {len(lines) - 1} lines")
    nodes = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + n]]).reshape(n, 2)
    tris = np.array([[int(v) for v in ln.split()] for ln in lines[1 + n:]], dtype=np.intp).reshape(m, 3)
    return Mesh(nodes, tris)


def write_mesh(mesh: Mesh, path):
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.n} triangles {len(mesh.triangles)}\n")
        for x, y in mesh.nodes:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def grid_mesh(nx: int, ny: int, width: float = 1.0, height: float = 1.0) -> Mesh:
    """Structured triangulation of a rectangle (handy for tests and demos)."""
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 1, a + nx + 2
            tris.append((a, b, d))
            tris.append((a, d, c))
    return Mesh(nodes, np.array(tris))


def _gradients(mesh: Mesh):
    """Constant P1 basis gradients per triangle, shape (m, 3, 2)."""
    p = mesh.nodes[mesh.triangles]
    area2 = 2.0 * mesh.signed_areas()
    # grad phi_k = perp(p_{k+2} - p_{k+1}) / (2 * signed area)
    g = np.empty((len(p), 3, 2))
    for k in range(3):
        a = p[:, (k + 1) % 3]
        b = p[:, (k + 2) % 3]
        g[:, k, 0] = (a[:, 1] - b[:, 1]) / area2
        g[:, k, 1] = (b[:, 0] - a[:, 0]) / area2
    return g


def assemble_mass_lumped(mesh: Mesh) -> sp.csc_matrix:
    area = mesh.areas()
    diag = np.bincount(mesh.triangles.ravel(), weights=np.repeat(area / 3.0, 3), minlength=mesh.n)
    if np.any(diag <= 0):
        raise ValueError("mesh has nodes not referenced by any triangle")
    return sp.diags(diag, format="csc")


def assemble_stiffness(mesh: Mesh) -> sp.csc_matrix:
    g = _gradients(mesh)
    area = mesh.areas()
    local = np.einsum("tad,tbd->tab", g, g) * area[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    G = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n, mesh.n)).tocsc()
    G.sum_duplicates()
    G = 0.5 * (G + G.T)
    G.eliminate_zeros()
    G.sort_indices()
    return sp.csc_matrix(G)


def barycentric(mesh: Mesh, points) -> tuple[np.ndarray, np.ndarray]:
    """Containing triangle and barycentric weights for each point.

    Ties (points on shared edges or vertices) go to the lowest-index triangle.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    P = mesh.nodes[mesh.triangles]
    v0 = P[:, 0]
    d1 = P[:, 1] - v0
    d2 = P[:, 2] - v0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    tri = np.empty(len(pts), dtype=np.intp)
    lam = np.empty((len(pts), 3))
    chunk = max(1, 2_000_000 // max(len(P), 1))
    for s in range(0, len(pts), chunk):
        q = pts[s:s + chunk, None, :] - v0[None, :, :]
        l1 = (q[..., 0] * d2[:, 1] - q[..., 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * q[..., 1] - d1[:, 1] * q[..., 0]) / det
        l0 = 1.0 - l1 - l2
        inside = (l0 >= -LOCATE_TOL) & (l1 >= -LOCATE_TOL) & (l2 >= -LOCATE_TOL)
        hit = inside.any(axis=1)
        if not hit.all():
            bad = s + int(np.flatnonzero(~hit)[0])
            raise LocationOutsideMesh(bad, pts[bad])
        t = inside.argmax(axis=1)
        r = np.arange(len(t))
        tri[s:s + chunk] = t
        lam[s:s + chunk] = np.column_stack([l0[r, t], l1[r, t], l2[r, t]])
    lam = np.clip(lam, 0.0, None)
    lam /= lam.sum(axis=1, keepdims=True)
    return tri, lam


def assemble_projection(mesh: Mesh, locations) -> sp.csr_matrix:
    """``A[i, j] = phi_j(u_i)``."""
    tri, lam = barycentric(mesh, locations)
    N = len(tri)
    cols = mesh.triangles[tri]
    A = sp.csr_matrix((lam.ravel(), (np.repeat(np.arange(N), 3), cols.ravel())), shape=(N, mesh.n))
    A.eliminate_zeros()
    A.sort_indices()
    return A


def _check_kappa(kappa):
    if not (kappa > 0) or not math.isfinite(kappa):
        raise NonPositiveKappa(f"kappa must be positive and finite, got {kappa}")


def _cinv(C):
    return sp.diags(1.0 / C.diagonal(), format="csc")


def grf_precision(C, G, kappa: float, alpha: int) -> sp.csc_matrix:
    """Q_1 = L, Q_2 = L C^-1 L, Q_a = L C^-1 Q_{a-2} C^-1 L with L = kappa^2 C + G."""
    _check_kappa(kappa)
    if int(alpha) != alpha or alpha < 1:
        raise ValueError(f"alpha must be a positive integer, got {alpha}")
    L = sp.csc_matrix(kappa ** 2 * C + G)
    Ci = _cinv(C)
    Q = L if alpha % 2 else L @ Ci @ L
    for _ in range((int(alpha) - 1) // 2):
        Q = L @ Ci @ Q @ Ci @ L
    Q = sp.csc_matrix(0.5 * (Q + Q.T))
    Q.sort_indices()
    return Q


def lma_operator(C, G, kappa: float, alpha: int) -> sp.csc_matrix:
    """K_2 = L, K_a = L C^-1 K_{a-2}; only even alpha is defined."""
    if int(alpha) != alpha or alpha < 2 or alpha % 2:
        raise OddAlphaUnsupported(alpha)
    _check_kappa(kappa)
    L = sp.csc_matrix(kappa ** 2 * C + G)
    Ci = _cinv(C)
    K = L
    for _ in range(int(alpha) // 2 - 1):
        K = L @ Ci @ K
    K = sp.csc_matrix(K)
    K.sort_indices()
    return K


def matern_derived(xi: float, kappa: float, nu: float, d: int = 2) -> tuple[float, float]:
    """Marginal variance and effective range of the Matérn field."""
    alpha = nu + d / 2.0
    log_phi2 = (2.0 * math.log(xi) + gammaln(nu) - gammaln(alpha)
                - (d / 2.0) * math.log(4.0 * math.pi) - 2.0 * nu * math.log(kappa))
    return math.exp(log_phi2), math.sqrt(8.0 * nu) / kappa
