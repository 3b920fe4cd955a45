"""Triadic cube algebra, cluster extraction and goodness predicates.

Triadic cubes at scale n have 3^n lattice points per side and centers on
3^n Z^d; any two triadic cubes are nested or disjoint.  A cube is
*crossable* when every pair of opposite faces is joined by an open path
inside the cube, *well-connected* when it carries a crossing cluster that
absorbs every large open path of every tested sub-cube, and *good* when it
is well-connected together with all its successors.

The predicates here are the reference implementations: direct, built on
scipy connected components, and structured for readability.  Batched
kernels used by the partition builder live in ``goodness_fast`` and are
tested against these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .env import Environment

__all__ = [
    "TriadicCube",
    "BoxRegion",
    "ClusterGraph",
    "CheckDensity",
    "predecessor",
    "successors",
    "cube_of",
    "open_clusters",
    "maximal_cluster",
    "is_crossable",
    "crossing_cluster",
    "is_well_connected",
    "is_good",
    "EmptyClusterError",
]


class EmptyClusterError(ValueError):
    """Raised when a region contains no open cluster to extract."""


@dataclass(frozen=True)
class TriadicCube:
    """The cube of side 3^n centered at z, with z = 0 mod 3^n componentwise."""

    n: int
    z: tuple

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("triadic scale must be >= 0")
        if any(c % 3 ** self.n for c in self.z):
            raise ValueError(f"center {self.z} is not on the 3^{self.n} grid")

    @property
    def d(self) -> int:
        return len(self.z)

    @property
    def size(self) -> int:
        return 3 ** self.n

    @property
    def volume(self) -> int:
        return self.size ** self.d

    @property
    def lo(self) -> tuple:
        h = (self.size - 1) // 2
        return tuple(c - h for c in self.z)

    @property
    def hi(self) -> tuple:
        h = (self.size - 1) // 2
        return tuple(c + h for c in self.z)

    def contains(self, x) -> bool:
        return all(l <= v <= h for v, l, h in zip(x, self.lo, self.hi))

    def contains_cube(self, other: "TriadicCube") -> bool:
        return all(l1 <= l2 and h2 <= h1
                   for l1, h1, l2, h2 in zip(self.lo, self.hi, other.lo, other.hi))

    def points(self) -> np.ndarray:
        """All lattice points of the cube, lexicographically ordered, shape (size^d, d)."""
        axes = [np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=-1)


@dataclass(frozen=True)
class BoxRegion:
    """A plain axis-aligned box region (not necessarily triadic); solver
    regions accept either this or a TriadicCube."""

    lo: tuple
    hi: tuple

    @property
    def d(self) -> int:
        return len(self.lo)

    def points(self) -> np.ndarray:
        axes = [np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=-1)

    @staticmethod
    def centered(radius: int, d: int) -> "BoxRegion":
        return BoxRegion((-radius,) * d, (radius,) * d)


def cube_of(x, n: int) -> TriadicCube:
    """The unique triadic cube at scale n containing the lattice point x."""
    s = 3 ** n
    z = tuple(int(np.floor(v / s + 0.5)) * s for v in x)
    return TriadicCube(n, z)


def predecessor(c: TriadicCube) -> TriadicCube:
    """The unique triadic cube at scale n+1 containing c."""
    return cube_of(c.z, c.n + 1)


def successors(c: TriadicCube) -> list:
    """The 3^d triadic cubes at scale n-1 tiling c."""
    if c.n == 0:
        raise ValueError("scale-0 cubes have no successors")
    step = 3 ** (c.n - 1)
    offsets = np.stack(np.meshgrid(*([[-1, 0, 1]] * c.d), indexing="ij"), axis=-1).reshape(-1, c.d)
    return [TriadicCube(c.n - 1, tuple(int(z + o * step) for z, o in zip(c.z, off)))
            for off in offsets]


# ---------------------------------------------------------------------------
# cluster extraction
# ---------------------------------------------------------------------------


def _region_points(env: Environment, region) -> np.ndarray:
    if hasattr(region, "points"):
        pts = region.points()
    else:
        pts = np.asarray(region, dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != env.spec.d:
            raise ValueError("region must be a cube, a BoxRegion or an (N, d) point array")
    h = env.spec.half
    if pts.size and (pts.min() < -h or pts.max() > h):
        raise ValueError("region escapes the environment box")
    # canonical lexicographic vertex order
    order = np.lexsort(pts.T[::-1])
    return pts[order]


def _open_edges_within(env: Environment, pts: np.ndarray):
    """Open bonds with both endpoints in pts; returns (ei, ej, cond) index triples.

    ``pts`` must be lexicographically sorted (its flat codes are then
    ascending, allowing binary-search lookup).
    """
    d = env.spec.d
    L = env.spec.side
    grid = pts + env.spec.half
    flat = np.ravel_multi_index(grid.T, (L,) * d)
    cond_flat = env.cond.reshape(-1, d)
    strides = np.array([L ** (d - 1 - k) for k in range(d)])
    ei, ej, vals = [], [], []
    for k in range(d):
        inside = grid[:, k] + 1 < L
        c = cond_flat[flat[inside], k]
        open_m = c > 0
        src = np.nonzero(inside)[0][open_m]
        dst_flat = flat[src] + strides[k]
        pos = np.searchsorted(flat, dst_flat)
        pos = np.clip(pos, 0, len(flat) - 1)
        hit = flat[pos] == dst_flat
        ei.append(src[hit])
        ej.append(pos[hit])
        vals.append(c[open_m][hit])
    return (np.concatenate(ei).astype(np.int64),
            np.concatenate(ej).astype(np.int64),
            np.concatenate(vals))


def _component_labels(env: Environment, pts: np.ndarray):
    n = len(pts)
    ei, ej, _ = _open_edges_within(env, pts)
    adj = coo_matrix((np.ones(len(ei)), (ei, ej)), shape=(n, n))
    ncomp, labels = connected_components(adj, directed=False)
    return ncomp, labels


def open_clusters(env: Environment, region) -> list:
    """Connected components of the open subgraph induced on the region.

    Returns vertex arrays (lexicographically sorted within each cluster),
    ordered by decreasing size with lexicographic tie-break on the smallest
    contained vertex.
    """
    pts = _region_points(env, region)
    if len(pts) == 0:
        return []
    ncomp, labels = _component_labels(env, pts)
    clusters = [pts[labels == c] for c in range(ncomp)]
    clusters.sort(key=lambda c: (-len(c), tuple(c[0])))
    return clusters


def maximal_cluster(env: Environment, region) -> "ClusterGraph":
    """The largest open cluster of the region as a ClusterGraph.

    Ties are broken by the lexicographically smallest contained vertex.
    A region with no vertices or no open structure of size >= 1 raises
    EmptyClusterError when empty; an isolated vertex is a valid
    single-vertex cluster.
    """
    clusters = open_clusters(env, region)
    if not clusters:
        raise EmptyClusterError("region contains no vertices")
    return ClusterGraph.from_vertices(env, clusters[0])


@dataclass(eq=False)
class ClusterGraph:
    """A connected open subgraph with conductance-weighted edges.

    ``vertices`` is lexicographically sorted, shape (n, d).  Edges are
    stored once per unordered pair in canonical orientation
    (smaller vertex index first); CSR adjacency mirrors them both ways.
    """

    vertices: np.ndarray
    edges: np.ndarray          # (m, 2) vertex indices, edges[:, 0] < edges[:, 1]
    conductances: np.ndarray   # (m,)
    indptr: np.ndarray
    indices: np.ndarray
    adj_cond: np.ndarray
    adj_edge: np.ndarray       # edge id aligned with ``indices``
    _codes: np.ndarray = field(repr=False, default=None)

    @staticmethod
    def from_vertices(env: Environment, pts: np.ndarray) -> "ClusterGraph":
        pts = np.asarray(pts, dtype=np.int64)
        order = np.lexsort(pts.T[::-1])
        pts = pts[order]
        ei, ej, vals = _open_edges_within(env, pts)
        swap = ei > ej
        ei2 = np.where(swap, ej, ei)
        ej2 = np.where(swap, ei, ej)
        edges = np.stack([ei2, ej2], axis=1)
        n = len(pts)
        m = len(edges)
        eid = np.arange(m)
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        data = np.concatenate([vals, vals])
        eids = np.concatenate([eid, eid])
        adj = coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
        adj_e = coo_matrix((eids + 1, (rows, cols)), shape=(n, n)).tocsr()
        ncomp, _ = connected_components(adj, directed=False)
        if n > 1 and ncomp != 1:
            raise ValueError("vertex set is not connected in the open subgraph")
        return ClusterGraph(
            vertices=pts,
            edges=edges,
            conductances=vals,
            indptr=adj.indptr,
            indices=adj.indices,
            adj_cond=adj.data,
            adj_edge=adj_e.data - 1,
        )

    def __post_init__(self):
        if len(self.vertices):
            self._origin = self.vertices.min(axis=0)
            span = self.vertices.max(axis=0) - self._origin + 1
        else:
            self._origin = np.zeros(0, dtype=np.int64)
            span = np.ones(1, dtype=np.int64)
        self._span = tuple(int(s) for s in span)
        if self._codes is None:
            self._codes = (np.ravel_multi_index((self.vertices - self._origin).T, self._span)
                           if len(self.vertices) else np.array([], dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def index_of(self, x) -> int:
        """Vertex index of lattice point x, or -1 when absent."""
        x = np.asarray(x)
        rel = x - self._origin
        if np.any(rel < 0) or np.any(rel >= np.array(self._span)):
            return -1
        code = np.ravel_multi_index(rel, self._span)
        i = np.searchsorted(self._codes, code)
        if i < len(self._codes) and self._codes[i] == code:
            return int(i)
        return -1

    def indices_of(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized ``index_of``; -1 where the point is not a vertex."""
        pts = np.asarray(pts)
        rel = pts - self._origin
        ok = np.all((rel >= 0) & (rel < np.array(self._span)), axis=1)
        out = np.full(len(pts), -1, dtype=np.int64)
        if ok.any():
            codes = np.ravel_multi_index(rel[ok].T, self._span)
            pos = np.searchsorted(self._codes, codes)
            pos = np.clip(pos, 0, len(self._codes) - 1)
            hit = self._codes[pos] == codes
            sel = np.nonzero(ok)[0]
            out[sel[hit]] = pos[hit]
        return out


# ---------------------------------------------------------------------------
# crossability and goodness (Definition of good cubes)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckDensity:
    """Sub-cube family tested by the well-connectedness predicate.

    Default: sizes ceil(s/10)*k for k=1..num_sizes, clamped to floor(s/2),
    anchored on a grid of spacing ceil(s/10).  The crossability clause is
    applied to tested sub-cubes of size >= ``min_cross_size`` (sub-boxes
    below the percolation correlation length have crossability probability
    bounded away from 1, so quantifying over them empties the predicate at
    desk scale); the absorption clause is applied to tested sub-cubes of
    size >= 3.  ``exhaustive`` tests every anchor and every size in
    [ceil(s/10), floor(s/2)] with both clauses everywhere and is meant for
    oracle tests on cubes of size <= 27.
    """

    num_sizes: int = 5
    min_cross_size: int = 25
    exhaustive: bool = False

    def cross_applies(self, ell: int) -> bool:
        return self.exhaustive or ell >= self.min_cross_size

    def absorb_applies(self, ell: int) -> bool:
        return self.exhaustive or ell >= 3


DEFAULT_DENSITY = CheckDensity()


def _subcube_family(s: int, density: CheckDensity):
    """Yield (size, spacing) groups of the tested family for a cube of size s."""
    lo = math.ceil(s / 10)
    hi = s // 2
    if hi < lo:
        return [], 1
    if density.exhaustive:
        sizes = list(range(lo, hi + 1))
        spacing = 1
    else:
        sizes = sorted({min(lo * k, hi) for k in range(1, density.num_sizes + 1)})
        spacing = lo
    return sizes, spacing


def _box_slb(env: Environment, lo, size):
    """Open-bond views of the sub-box [lo, lo+size) in grid positions."""
    h = env.spec.half
    sl = tuple(slice(l + h, l + h + size) for l in lo)
    return env.open_[sl + (slice(None),)]


def _labels_in_box(open_box: np.ndarray):
    """Component labels of the open subgraph of an axis-aligned box.

    open_box has shape (s1, ..., sd, d); label array has shape (s1, ..., sd).
    """
    shape = open_box.shape[:-1]
    d = open_box.shape[-1]
    n = int(np.prod(shape))
    idx = np.arange(n).reshape(shape)
    rows, cols = [], []
    for k in range(d):
        sl_a = [slice(None)] * d
        sl_a[k] = slice(0, shape[k] - 1)
        openk = open_box[tuple(sl_a) + (k,)]
        a = idx[tuple(sl_a)][openk]
        sl_b = [slice(None)] * d
        sl_b[k] = slice(1, shape[k])
        b = idx[tuple(sl_b)][openk]
        rows.append(a)
        cols.append(b)
    rows = np.concatenate(rows) if rows else np.array([], dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.array([], dtype=np.int64)
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    return labels.reshape(shape)


def _crossable_labels(labels: np.ndarray) -> bool:
    """True when, for every axis, a single component meets both opposite faces."""
    d = labels.ndim
    for k in range(d):
        lo_face = np.unique(np.take(labels, 0, axis=k))
        hi_face = np.unique(np.take(labels, labels.shape[k] - 1, axis=k))
        if not np.intersect1d(lo_face, hi_face, assume_unique=True).size:
            return False
    return True


def is_crossable(env: Environment, cube: TriadicCube) -> bool:
    """True iff every pair of opposite faces of the cube is joined by an
    open path inside the cube."""
    _check_in_box(env, cube)
    if cube.size == 1:
        return True
    labels = _labels_in_box(_box_slb(env, cube.lo, cube.size))
    return _crossable_labels(labels)


def _crossing_label(labels: np.ndarray):
    """Label of the largest component touching all 2d faces, or None.

    Ties go to the component holding the lexicographically smallest vertex
    (the smallest flat index under C-order).
    """
    d = labels.ndim
    cand = None
    for k in range(d):
        lo_face = np.unique(np.take(labels, 0, axis=k))
        hi_face = np.unique(np.take(labels, labels.shape[k] - 1, axis=k))
        both = np.intersect1d(lo_face, hi_face, assume_unique=True)
        cand = both if cand is None else np.intersect1d(cand, both, assume_unique=True)
        if not cand.size:
            return None
    flat = labels.ravel()
    sizes = np.array([(flat == c).sum() for c in cand])
    firsts = np.array([int(np.argmax(flat == c)) for c in cand])
    order = np.lexsort((firsts, -sizes))
    return int(cand[order[0]])


def crossing_cluster(env: Environment, cube: TriadicCube):
    """The largest cluster inside the cube touching all 2d faces.

    Returns a lexicographically sorted (k, d) vertex array, or None.
    """
    _check_in_box(env, cube)
    labels = _labels_in_box(_box_slb(env, cube.lo, cube.size))
    lab = _crossing_label(labels)
    if lab is None:
        return None
    mask = labels == lab
    pts = np.argwhere(mask) + np.array(cube.lo)
    order = np.lexsort(pts.T[::-1])
    return pts[order]


def _check_in_box(env: Environment, cube: TriadicCube):
    h = env.spec.half
    if any(l < -h for l in cube.lo) or any(x > h for x in cube.hi):
        raise ValueError(f"cube {cube} escapes box of scale {env.spec.M}")


def dilated_bounds(cube: TriadicCube, r: float):
    """Point range (lo, hi) of r*cube: the center is preserved and the point
    set is (z + (-r*size/2, r*size/2)^d) n Z^d, with open interval ends."""
    hw = r * cube.size / 2.0
    delta = int(hw) - 1 if float(hw).is_integer() else int(math.floor(hw))
    lo = [c - delta for c in cube.z]
    hi = [c + delta for c in cube.z]
    return lo, hi


def _well_connected(env: Environment, cube: TriadicCube, density: CheckDensity) -> bool:
    """Definition of well-connectedness; total on all sizes (size < 3 is
    trivially governed by the crossing-cluster clause alone)."""
    _check_in_box(env, cube)
    s = cube.size
    if s == 1:
        return True
    open_box = _box_slb(env, cube.lo, s)
    labels = _labels_in_box(open_box)
    lab = _crossing_label(labels)
    if lab is None:
        return False
    in_cross = labels == lab

    sizes, spacing = _subcube_family(s, density)
    if not sizes:
        return True
    tq_lo, tq_hi = dilated_bounds(cube, 0.75)
    cube_lo = np.array(cube.lo)
    # default mode floors the large-path trigger at 2 lattice steps: below
    # that "paths of diameter >= size/10" degenerate to single bonds
    thresh = s / 10.0 if density.exhaustive else max(s / 10.0, 2.0)
    d = cube.d
    for ell in sizes:
        check_cross = density.cross_applies(ell)
        check_absorb = density.absorb_applies(ell)
        if not (check_cross or check_absorb):
            continue
        offs = [list(range(0, s - ell + 1, spacing)) for _ in range(d)]
        for anchor in np.stack(np.meshgrid(*offs, indexing="ij"), axis=-1).reshape(-1, d):
            sub_lo = cube_lo + anchor
            sub_hi = sub_lo + ell - 1
            # both clauses quantify over sub-cubes meeting (3/4)cube
            if any(sub_hi[k] < tq_lo[k] or sub_lo[k] > tq_hi[k] for k in range(d)):
                continue
            sub_open = _box_slb(env, tuple(sub_lo), ell)
            sub_labels = _labels_in_box(sub_open)
            if check_cross and not _crossable_labels(sub_labels):
                return False
            # clause (ii): every open component of the sub-cube with
            # bounding-box extent >= s/10 must meet the crossing cluster
            if check_absorb:
                sub_cross = in_cross[tuple(slice(a, a + ell) for a in anchor)]
                if not _absorbs_large_components(sub_labels, sub_cross, thresh):
                    return False
    return True


def _absorbs_large_components(sub_labels: np.ndarray, sub_cross: np.ndarray, thresh: float) -> bool:
    flat = sub_labels.ravel()
    nlab = flat.max() + 1
    coords = np.argwhere(np.ones_like(sub_labels, dtype=bool))
    ext = np.zeros(nlab)
    for k in range(sub_labels.ndim):
        mn = np.full(nlab, np.iinfo(np.int64).max)
        mx = np.full(nlab, np.iinfo(np.int64).min)
        np.minimum.at(mn, flat, coords[:, k])
        np.maximum.at(mx, flat, coords[:, k])
        ext = np.maximum(ext, mx - mn)
    touches = np.zeros(nlab, dtype=bool)
    np.logical_or.at(touches, flat, sub_cross.ravel())
    return bool(np.all(touches[ext >= thresh]))


def is_well_connected(env: Environment, cube: TriadicCube,
                      check_density: CheckDensity = DEFAULT_DENSITY) -> bool:
    """Well-connectedness of a cube of size >= 3 (precondition)."""
    if cube.size < 3:
        raise ValueError(f"well-connectedness needs size >= 3, got {cube.size}")
    return _well_connected(env, cube, check_density)


def is_good(env: Environment, cube: TriadicCube,
            check_density: CheckDensity = DEFAULT_DENSITY) -> bool:
    """size >= 3, well-connected, and all 3^d successors well-connected."""
    if cube.size < 3:
        return False
    if not _well_connected(env, cube, check_density):
        return False
    return all(_well_connected(env, c, check_density) for c in successors(cube))


def goodness_csv_rows(env: Environment, scales, density: CheckDensity = DEFAULT_DENSITY):
    """(scale, center..., good) rows for every in-box triadic cube at the
    given scales; export helper for the experiments module."""
    rows = []
    for n in scales:
        step = 3 ** n
        h = env.spec.half
        rng = range(-h + (step - 1) // 2, h + 1, step)
        centers = np.stack(np.meshgrid(*([list(rng)] * env.spec.d), indexing="ij"), axis=-1)
        for z in centers.reshape(-1, env.spec.d):
            cube = TriadicCube(n, tuple(int(v) for v in z))
            rows.append((n, *cube.z, int(is_good(env, cube, density))))
    return rows
