"""Sparse elliptic solves on cluster graphs.

The operator is (-div a grad u)(x) = sum_{y~x} a({x,y}) (u(x) - u(y)).
Functions live on the vertices of a ClusterGraph; edge fields are stored
once per unordered edge in canonical orientation (smaller vertex index
first), with F(x, y) = -F(y, x) implied.

Convention: inner products and the per-vertex magnitude |F|(x) count each
unordered edge once.  Under this convention summation by parts is exact,
    sum_x u(x) (-div a grad v)(x) = <grad u, a grad v>,
and the Green function normalized by the strong form
-div a grad G^e = delta_x - delta_y satisfies <grad G^e, a grad h> =
grad h(e) verbatim.  Sums over oriented edge pairs equal twice ours.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from .env import EdgeRef, Environment
from .geometry import ClusterGraph, TriadicCube, maximal_cluster

__all__ = [
    "SolveReport",
    "SolverError",
    "TopologyError",
    "apply_operator",
    "gradient",
    "a_gradient",
    "divergence",
    "edge_inner",
    "vertex_magnitude",
    "solve_dirichlet",
    "corrector",
    "greens_gradient",
    "solve_divergence_rhs",
    "regularity_scale",
    "laplacian",
]


class SolverError(RuntimeError):
    """Iterative solve failed to converge within the iteration cap."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class TopologyError(ValueError):
    """Requested vertices/edges are not in the graph."""


@dataclass
class SolveReport:
    iterations: int
    residual: float
    tol: float

    def to_dict(self):
        return {"iterations": self.iterations, "residual": self.residual, "tol": self.tol}


def laplacian(g: ClusterGraph) -> csr_matrix:
    """-div a grad as a sparse matrix (weighted graph Laplacian); cached."""
    L = getattr(g, "_laplacian", None)
    if L is None:
        from scipy.sparse import diags

        n = g.n_vertices
        A = csr_matrix((g.adj_cond, g.indices, g.indptr), shape=(n, n))
        deg = np.asarray(A.sum(axis=1)).ravel()
        L = (diags(deg) - A).tocsr()
        g._laplacian = L
    return L


def apply_operator(g: ClusterGraph, u: np.ndarray) -> np.ndarray:
    """(-div a grad u)(x) over the cluster."""
    u = np.asarray(u, dtype=float)
    if u.shape != (g.n_vertices,):
        raise ValueError(f"function has length {u.shape}, graph has {g.n_vertices} vertices")
    return laplacian(g) @ u


def gradient(g: ClusterGraph, u: np.ndarray) -> np.ndarray:
    """grad u over canonical edges: u(x) - u(y) for edge (x, y), x < y."""
    u = np.asarray(u, dtype=float)
    return u[g.edges[:, 0]] - u[g.edges[:, 1]]


def a_gradient(g: ClusterGraph, u: np.ndarray) -> np.ndarray:
    return g.conductances * gradient(g, u)


def divergence(g: ClusterGraph, xi: np.ndarray) -> np.ndarray:
    """(-div xi)(x) = sum_{y~x} xi(x, y) over open cluster edges."""
    out = np.zeros(g.n_vertices)
    np.add.at(out, g.edges[:, 0], xi)
    np.add.at(out, g.edges[:, 1], -xi)
    return out


def edge_inner(F: np.ndarray, G: np.ndarray, weights: np.ndarray = None) -> float:
    """<F, G> over unordered edges (the oriented-pair sum is twice this)."""
    prod = np.asarray(F) * np.asarray(G)
    if weights is not None:
        prod = prod * weights
    return float(prod.sum())


def vertex_magnitude(g: ClusterGraph, F: np.ndarray) -> np.ndarray:
    """|F|(x): root of the sum of F(e)^2 over edges incident to x."""
    out = np.zeros(g.n_vertices)
    np.add.at(out, g.edges[:, 0], np.asarray(F) ** 2)
    np.add.at(out, g.edges[:, 1], np.asarray(F) ** 2)
    return np.sqrt(out)


# ---------------------------------------------------------------------------
# conjugate gradients
# ---------------------------------------------------------------------------


def _pcg(A: csr_matrix, b: np.ndarray, atol: float, maxiter: int, x0=None):
    """Jacobi-preconditioned conjugate gradients on an SPD system."""
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("system diagonal is not positive")
    inv_d = 1.0 / diag
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - A @ x
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    it = 0
    res = np.linalg.norm(r)
    while res > atol and it < maxiter:
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r)
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return x, it, res


def solve_dirichlet(g: ClusterGraph, boundary: np.ndarray, boundary_values: np.ndarray,
                    rhs: np.ndarray = None, tol: float = 1e-10, x0: np.ndarray = None):
    """Solve (-div a grad u) = rhs on interior vertices with u fixed on the
    boundary set, by Jacobi-preconditioned CG on the interior principal
    submatrix.  Returns (u, SolveReport).

    The residual criterion is ||rhs - L u||_interior <= tol * (1 + ||rhs||).
    """
    n = g.n_vertices
    boundary = np.asarray(boundary, dtype=np.int64)
    if boundary.size == 0:
        raise ValueError("boundary must be nonempty")
    rhs = np.zeros(n) if rhs is None else np.asarray(rhs, dtype=float)
    u = np.zeros(n)
    u[boundary] = boundary_values
    mask = np.ones(n, dtype=bool)
    mask[boundary] = False
    interior = np.nonzero(mask)[0]
    if interior.size == 0:
        return u, SolveReport(iterations=0, residual=0.0, tol=tol)
    L = laplacian(g)
    L_int = L[interior]
    b = rhs[interior] - L_int @ u
    A = L_int[:, interior]
    # the reduced right side (rhs with boundary data eliminated) sets the
    # residual scale; with affine boundary data and rhs = 0 an absolute
    # criterion would demand sub-machine relative residuals
    atol = tol * (1.0 + np.linalg.norm(b))
    maxiter = int(20 * np.sqrt(n) + 500)
    guess = None if x0 is None else np.asarray(x0)[interior]
    x, it, res = _pcg(A.tocsr(), b, atol, maxiter, x0=guess)
    report = SolveReport(iterations=it, residual=float(res), tol=tol)
    if res > atol:
        raise SolverError(f"CG did not converge: residual {res:.3e} > {atol:.3e} "
                          f"after {it} iterations", report)
    u[interior] = x
    return u, report


# ---------------------------------------------------------------------------
# correctors
# ---------------------------------------------------------------------------


def dirichlet_layer(env: Environment, g: ClusterGraph, region) -> np.ndarray:
    """Indices of cluster vertices pinned by the affine boundary data: the
    geometric boundary shell of the region plus every vertex with an open
    bond leaving the region (the complement of the a-interior)."""
    v = g.vertices
    lo, hi = np.asarray(region.lo), np.asarray(region.hi)
    on_shell = np.any((v == lo) | (v == hi), axis=1)
    exits = np.zeros(len(v), dtype=bool)
    spec = env.spec
    h = spec.half
    grid = v + h
    cond_flat = env.cond.reshape(-1, spec.d)
    gstr = np.array([spec.side ** (spec.d - 1 - k) for k in range(spec.d)])
    flat = grid @ gstr
    for k in range(spec.d):
        up_in_box = grid[:, k] + 1 < spec.side
        up_outside_region = v[:, k] + 1 > hi[k]
        sel = up_in_box & up_outside_region
        exits[sel] |= cond_flat[flat[sel], k] > 0
        dn_in_box = grid[:, k] - 1 >= 0
        dn_outside_region = v[:, k] - 1 < lo[k]
        sel = dn_in_box & dn_outside_region
        exits[sel] |= cond_flat[flat[sel] - gstr[k], k] > 0
    return np.nonzero(on_shell | exits)[0]


def corrector(env: Environment, region, p, tol: float = 1e-10,
              graph: ClusterGraph = None, x0: np.ndarray = None):
    """Finite-volume corrector chi_p on the maximal cluster of the region.

    Solves for the a-harmonic u with affine data u = p.x on the Dirichlet
    layer and returns (chi_p = u - p.x, graph, report); chi_p vanishes on
    the layer.
    """
    g = graph if graph is not None else maximal_cluster(env, region)
    p = np.asarray(p, dtype=float)
    affine = g.vertices @ p
    layer = dirichlet_layer(env, g, region)
    if layer.size == 0:
        raise SolverError("region cluster has empty Dirichlet layer")
    u, report = solve_dirichlet(g, layer, affine[layer], None, tol=tol,
                                x0=None if x0 is None else x0 + affine)
    return u - affine, g, report


# ---------------------------------------------------------------------------
# Green's functions and divergence-form problems
# ---------------------------------------------------------------------------


def greens_gradient(g: ClusterGraph, e: EdgeRef, ground: int = 0,
                    tol: float = 1e-10) -> np.ndarray:
    """grad G^e where -div a grad G^e = delta_x - delta_y on the cluster,
    grounded at the given vertex index (the kernel is the constants).

    The edge need not be open: the same dipole load realizes the
    path-telescoped sum of open-edge dipoles.
    """
    ix, iy = g.index_of(e.x), g.index_of(e.y)
    if ix < 0 or iy < 0:
        raise TopologyError(f"edge {e} endpoints are not both in the cluster")
    rhs = np.zeros(g.n_vertices)
    rhs[ix] += 1.0
    rhs[iy] -= 1.0
    G, _ = solve_dirichlet(g, np.array([ground]), np.array([0.0]), rhs, tol=tol)
    return gradient(g, G)


def edge_index(g: ClusterGraph, e: EdgeRef) -> int:
    """Index of an open edge in the canonical edge list, or -1."""
    ix, iy = g.index_of(e.x), g.index_of(e.y)
    if ix < 0 or iy < 0:
        return -1
    a, b = (ix, iy) if ix < iy else (iy, ix)
    hits = np.nonzero((g.edges[:, 0] == a) & (g.edges[:, 1] == b))[0]
    return int(hits[0]) if hits.size else -1


def edge_value(g: ClusterGraph, F: np.ndarray, e: EdgeRef) -> float:
    """F(e) respecting orientation: EdgeRef is canonical (x < y), the
    stored value is F(smaller index -> larger index)."""
    i = edge_index(g, e)
    if i < 0:
        raise TopologyError(f"{e} is not an open cluster edge")
    ix, iy = g.index_of(e.x), g.index_of(e.y)
    sign = 1.0 if ix < iy else -1.0
    return sign * float(F[i])


def solve_divergence_rhs(g: ClusterGraph, xi: np.ndarray, tol: float = 1e-10):
    """Solve -div a grad w = -div xi on the cluster, grounded at the
    lexicographically smallest vertex; returns (w, report).

    The loads b(x) = sum_{y~x} xi(x,y) sum to zero automatically by
    antisymmetry; residual drift beyond tol is projected out.
    """
    b = divergence(g, xi)
    drift = b.sum()
    if abs(drift) > tol * (1 + np.abs(b).sum()):
        b = b - drift / len(b)
    return solve_dirichlet(g, np.array([0]), np.array([0.0]), b, tol=tol)


# ---------------------------------------------------------------------------
# regularity minimal scale
# ---------------------------------------------------------------------------


def regularity_scale(env: Environment, region: TriadicCube, c0: float,
                     radii, tol: float = 1e-8) -> float:
    """Smallest ladder radius r0 such that, for every ladder pair
    r <= r' with r >= r0, the normalized gradient L2 norm over B_r is at
    most c0 times the one over B_r', for every witness u = p.x + chi_p
    with p a unit direction.  Returns the ladder top when never satisfied.
    """
    radii = sorted(radii)
    g = maximal_cluster(env, region)
    d = env.spec.d
    center = np.asarray(region.z)
    dist = np.abs(g.vertices - center).max(axis=1)
    norms = []
    for k in range(d):
        p = np.zeros(d)
        p[k] = 1.0
        chi, _, _ = corrector(env, region, p, tol=tol, graph=g)
        mag = vertex_magnitude(g, gradient(g, chi) + gradient(g, g.vertices @ p))
        norms.append([np.sqrt(np.mean(mag[dist <= r] ** 2)) if (dist <= r).any() else 0.0
                      for r in radii])
    norms = np.asarray(norms)  # (d, n_radii)
    for i0, r0 in enumerate(radii):
        ok = True
        for i in range(i0, len(radii)):
            for j in range(i, len(radii)):
                if np.any(norms[:, i] > c0 * norms[:, j] + 1e-12):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return float(r0)
    return float(radii[-1])
