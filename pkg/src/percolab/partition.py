"""Renormalization partitions of the box into good triadic cubes.

``build_partition`` produces, from the per-scale goodness map, a disjoint
triadic cover of the box whose cells are good, whose strict in-box
ancestors are all good, and whose adjacent cells differ in size by at most
a factor 3.  On the partition live the cell representatives, the coarsening
operator, its mollified extension, and the coarseness diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .env import EdgeRef, Environment, resample_edge
from .geometry import CheckDensity, TriadicCube, cube_of
from .goodness_fast import GoodnessMap, _cell_cross_and_reps, _local_strides

__all__ = [
    "Partition",
    "PartitionError",
    "UnresolvableRegionError",
    "DataError",
    "build_partition",
    "coarsen",
    "CoarseFunction",
    "MollifierSpec",
    "mollify",
    "coarsening_ratio",
    "gradient_coarsening_ratio",
    "coarseness_statistics",
    "partition_resample_stability",
]


class PartitionError(RuntimeError):
    """Invariant verification failed during partition construction."""


class UnresolvableRegionError(PartitionError):
    """Top-scale cubes are bad; no valid partition exists on this box."""


class DataError(ValueError):
    """A coarsening input misses required representative values."""


@dataclass
class Partition:
    """A disjoint triadic cover of the box with per-cell representatives.

    ``cell_index`` maps every box vertex (flat C-order) to a cell id;
    ``scales``/``centers`` describe the cells; ``reps`` holds each cell's
    representative (the crossing-cluster vertex closest to the center in
    Manhattan distance, lexicographic tie-break); ``cross_mask`` flags box
    vertices belonging to their cell's crossing cluster.
    """

    env: Environment
    scales: np.ndarray          # (n_cells,)
    centers: np.ndarray         # (n_cells, d) lattice coordinates
    reps: np.ndarray            # (n_cells, d) lattice coordinates
    cell_index: np.ndarray      # flat over box, values in [0, n_cells)
    cross_mask: np.ndarray      # flat bool over box
    neighborhood_factor: float = 1.0

    @property
    def n_cells(self) -> int:
        return len(self.scales)

    def cells(self):
        return [TriadicCube(int(n), tuple(int(c) for c in z))
                for n, z in zip(self.scales, self.centers)]

    def cell_id_of(self, x) -> int:
        spec = self.env.spec
        pos = self.env.to_grid(x)
        flat = np.ravel_multi_index(pos, (spec.side,) * spec.d)
        return int(self.cell_index[flat])

    def cell_of(self, x) -> TriadicCube:
        """The unique partition cell containing x; O(1) lookup."""
        i = self.cell_id_of(x)
        return TriadicCube(int(self.scales[i]), tuple(int(c) for c in self.centers[i]))

    def representative(self, cube: TriadicCube) -> tuple:
        """z-bar of a cell: crossing-cluster point nearest the center."""
        i = self.cell_id_of(cube.z)
        if self.scales[i] != cube.n or tuple(self.centers[i]) != tuple(cube.z):
            raise KeyError(f"{cube} is not a cell of this partition")
        return tuple(int(c) for c in self.reps[i])

    def size_at(self, x) -> int:
        return 3 ** int(self.scales[self.cell_id_of(x)])

    def sizes_per_vertex(self) -> np.ndarray:
        return 3 ** self.scales[self.cell_index].astype(np.int64)

    def to_csv_rows(self):
        return [(int(n), *map(int, z), *map(int, r))
                for n, z, r in zip(self.scales, self.centers, self.reps)]


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _grid_shape(M: int, n: int, d: int):
    return (3 ** (M - n),) * d


def _min_scale_grid(gm: GoodnessMap, factor: float):
    """Per-vertex minimal scale n*(x) as a flat array over the box.

    A_n(x) holds iff at every scale m in [n, M] all in-box cubes within
    l-infinity distance factor*3^m of the scale-m cube of x are good.
    """
    env = gm.env
    M, d = env.spec.M, env.spec.d
    # "all cubes within distance factor*3^m good", as a cube-grid erosion
    ok = {}
    for n in range(1, M + 1):
        g = gm.good[n].astype(np.uint8)
        w = 2 * int(np.ceil(factor)) + 1
        ok[n] = ndimage.minimum_filter(g, size=w, mode="constant", cval=1).astype(bool)
    # cumulative from the top scale down, upsampled to the vertex grid
    cum = ok[M]
    a_vertex = {M: _upsample(cum, 3 ** M, d)}
    for n in range(M - 1, 0, -1):
        cum = ok[n] & _upsample_once(cum, d)
        a_vertex[n] = _upsample(cum, 3 ** n, d)
    nstar = np.full((3 ** M,) * d, M, dtype=np.int64)
    for n in range(M, 0, -1):
        nstar[a_vertex[n]] = n
    # spec fallback: n* := M when A_n never holds; the all-bad-at-top case
    # is rejected earlier as unresolvable
    return nstar.reshape(-1)


def _upsample_once(grid: np.ndarray, d: int) -> np.ndarray:
    out = grid
    for axis in range(d):
        out = np.repeat(out, 3, axis=axis)
    return out


def _upsample(grid: np.ndarray, times: int, d: int) -> np.ndarray:
    out = grid
    for axis in range(d):
        out = np.repeat(out, times, axis=axis)
    return out


def _block_reduce_max(arr: np.ndarray, b: int, d: int) -> np.ndarray:
    shape = []
    for k in range(d):
        shape += [arr.shape[k] // b, b]
    view = arr.reshape(shape)
    axes = tuple(2 * k + 1 for k in range(d))
    return view.max(axis=axes)


def build_partition(env: Environment, goodness: GoodnessMap = None,
                    density: CheckDensity = CheckDensity(),
                    neighborhood_factor: float = 1.0,
                    strict_goodness: bool = False) -> Partition:
    """Construct the renormalization partition of the box.

    Stopping rule: cell scale at x is the minimal n such that all in-box
    cubes at every scale m in [n, M] within distance factor*3^m of the
    scale-m cube of x are good; cells are the maximal cubes of that family.
    When no scale works (the box-scale cube itself is bad) the whole box
    becomes the single cell, which satisfies Prop 2.1(i)/(ii) vacuously;
    ``strict_goodness`` turns that fallback into UnresolvableRegionError.
    A repair pass enforces the factor-3 neighbor comparability: a too-large
    cell is split into its successors when they are all good, otherwise the
    smaller neighbor's parent region is merged into one cell (always valid,
    since ancestors of cells are good).  Invariants are verified before
    returning; violations raise PartitionError.
    """
    gm = goodness if goodness is not None else GoodnessMap(env, density)
    M, d = env.spec.M, env.spec.d
    L = env.spec.side
    if strict_goodness and not gm.good[M].all():
        raise UnresolvableRegionError(
            f"top-scale cube of the box at scale {M} is bad; no strictly good partition")
    nstar = _min_scale_grid(gm, neighborhood_factor)

    # maximal cubes of the family {cube of x at scale n*(x)}: top-down,
    # a scale-n cube becomes a cell iff max n* over it equals n and no
    # ancestor was chosen
    cell_scale = np.zeros((L,) * d, dtype=np.int64)  # 0 = unassigned
    covered = np.zeros(_grid_shape(M, M, d), dtype=bool)
    arr = nstar.reshape((L,) * d)
    blockmax = {n: _block_reduce_max(arr, 3 ** n, d) for n in range(1, M + 1)}
    for n in range(M, 0, -1):
        chosen = (blockmax[n] == n) & ~covered
        if chosen.any():
            cell_scale_view = _upsample(chosen, 3 ** n, d)
            cell_scale[cell_scale_view] = n
        covered = _upsample_once(covered | chosen, d) if n > 1 else None
    if (cell_scale == 0).any():
        raise PartitionError("stopping rule left uncovered vertices")

    cell_scale = _repair_comparability(cell_scale, gm)
    return _finalize(env, gm, cell_scale, neighborhood_factor)


def _cells_from_scale_field(cell_scale: np.ndarray, M: int, d: int):
    """(scale, grid-corner) list from the per-vertex cell-scale field."""
    cells = []
    L = cell_scale.shape[0]
    seen = np.zeros_like(cell_scale, dtype=bool)
    for n in range(M, 0, -1):
        s = 3 ** n
        at = np.argwhere((cell_scale == n) & ~seen)
        if len(at) == 0:
            continue
        corners = np.unique((at // s) * s, axis=0)
        for c in corners:
            sl = tuple(slice(int(v), int(v) + s) for v in c)
            if not seen[sl].any():
                cells.append((n, tuple(int(v) for v in c)))
                seen[sl] = True
    return cells


def _adjacent_pairs(cell_id: np.ndarray, d: int):
    """Unique (a, b) cell-id pairs adjacent across a lattice bond."""
    pairs = set()
    for k in range(d):
        a = np.take(cell_id, range(0, cell_id.shape[k] - 1), axis=k).ravel()
        b = np.take(cell_id, range(1, cell_id.shape[k]), axis=k).ravel()
        diff = a != b
        pairs.update(zip(a[diff].tolist(), b[diff].tolist()))
    return pairs


def _repair_comparability(cell_scale: np.ndarray, gm: GoodnessMap) -> np.ndarray:
    """Enforce Prop 2.1(ii): adjacent cells within a factor 3 in size.

    Splits a too-large cell when all its successors are good; otherwise
    merges the smaller cell's parent region.  Split phase strictly
    decreases sum(size^(d+1)); merge phase strictly decreases cell count.
    """
    M, d = gm.env.spec.M, gm.env.spec.d
    field = cell_scale.copy()
    for _ in range(10_000):
        cells = _cells_from_scale_field(field, M, d)
        cell_id = np.full(field.shape, -1, dtype=np.int64)
        for i, (n, corner) in enumerate(cells):
            sl = tuple(slice(c, c + 3 ** n) for c in corner)
            cell_id[sl] = i
        viol = []
        for a, b in _adjacent_pairs(cell_id, d):
            na, nb = cells[a][0], cells[b][0]
            if abs(na - nb) > 1:
                big, small = (a, b) if na > nb else (b, a)
                viol.append((abs(na - nb), cells[big][1], big, small))
        if not viol:
            return field
        viol.sort()
        _, _, big, small = viol[-1]
        nb_, corner_b = cells[big]
        sl_b = tuple(slice(c, c + 3 ** nb_) for c in corner_b)
        if _successors_good(gm, nb_, corner_b):
            field[sl_b] = nb_ - 1
        else:
            ns_, corner_s = cells[small]
            parent_corner = tuple((c // 3 ** (ns_ + 1)) * 3 ** (ns_ + 1) for c in corner_s)
            sl_p = tuple(slice(c, c + 3 ** (ns_ + 1)) for c in parent_corner)
            field[sl_p] = ns_ + 1
    raise PartitionError("comparability repair did not converge")


def _successors_good(gm: GoodnessMap, n: int, corner) -> bool:
    if n - 1 < 1:
        return False
    g = gm.good[n - 1]
    s = 3 ** (n - 1)
    sl = tuple(slice(c // s, c // s + 3) for c in corner)
    return bool(g[sl].all())


def _finalize(env: Environment, gm: GoodnessMap, cell_scale: np.ndarray,
              factor: float) -> Partition:
    M, d = env.spec.M, env.spec.d
    L = env.spec.side
    h = env.spec.half
    cells = _cells_from_scale_field(cell_scale, M, d)
    scales = np.array([n for n, _ in cells], dtype=np.int64)
    corners = np.array([c for _, c in cells], dtype=np.int64)
    centers = corners - h + (3 ** scales[:, None] - 1) // 2

    cell_index = np.full((L,) * d, -1, dtype=np.int64)
    for i, (n, corner) in enumerate(cells):
        sl = tuple(slice(c, c + 3 ** n) for c in corner)
        cell_index[sl] = i

    _verify(gm, scales, centers, cell_index)

    gstr = np.array([L ** (d - 1 - k) for k in range(d)], dtype=np.int64)
    corner_flat = (corners @ gstr).astype(np.int64)
    open_flat = np.ascontiguousarray(env.open_.reshape(-1, d))
    cross = np.zeros(L ** d, dtype=bool)
    reps_flat = _cell_cross_and_reps(open_flat, L, d, corner_flat,
                                     (3 ** scales).astype(np.int64),
                                     (centers + h).astype(np.int64), cross)
    missing = np.nonzero(reps_flat < 0)[0]
    for i in missing:
        # no crossing cluster: only possible for the degenerate fallback
        # cell; fall back to the maximal cluster of the cell
        if scales[i] != M:
            raise PartitionError("a cell has no crossing cluster despite being good")
        rep, members = _maximal_cluster_rep(env, TriadicCube(int(scales[i]),
                                                             tuple(int(c) for c in centers[i])))
        reps_flat[i] = np.ravel_multi_index(np.asarray(rep) + h, (L,) * d)
        flat_members = np.ravel_multi_index((members + h).T, (L,) * d)
        cross[flat_members] = True
    reps = np.stack(np.unravel_index(reps_flat, (L,) * d), axis=-1) - h
    return Partition(env=env, scales=scales, centers=centers, reps=reps,
                     cell_index=cell_index.reshape(-1), cross_mask=cross,
                     neighborhood_factor=factor)


def _maximal_cluster_rep(env: Environment, cube: TriadicCube):
    """Representative from the maximal (not necessarily crossing) cluster."""
    from .geometry import open_clusters

    comps = open_clusters(env, cube)
    members = comps[0]
    dist = np.abs(members - np.asarray(cube.z)).sum(axis=1)
    best = np.lexsort(tuple(members.T[::-1]) + (dist,))[0]
    return tuple(int(c) for c in members[best]), members


def _verify(gm: GoodnessMap, scales, centers, cell_index):
    """Exact invariant check: disjoint cover, minimal scale 1, cells good,
    ancestors good, factor-3 neighbor comparability.  The degenerate
    whole-box fallback cell is exempt from the goodness requirement (it
    has no strict in-box ancestor)."""
    M, d = gm.env.spec.M, gm.env.spec.d
    h = gm.env.spec.half
    if (cell_index < 0).any():
        raise PartitionError("cells do not cover the box")
    vol = sum((3 ** int(n)) ** d for n in scales)
    if vol != cell_index.size:
        raise PartitionError("cell volumes do not sum to the box volume")
    for n, z in zip(scales, centers):
        if n < 1:
            raise PartitionError("cell below minimal scale 1")
        if n == M:
            continue  # single-cell fallback: (i) vacuous
        cube = TriadicCube(int(n), tuple(int(c) for c in z))
        for m in range(int(n), M + 1):
            anc = cube_of(cube.z, m)
            gpos = tuple((c + h) // 3 ** m for c in anc.lo)
            if not gm.good[m][gpos]:
                raise PartitionError(
                    f"{'cell' if m == n else 'ancestor'} at scale {m} of cell {cube} is bad")
    scale_field = scales[cell_index].reshape((3 ** M,) * d)
    for k in range(d):
        a = np.take(scale_field, range(0, scale_field.shape[k] - 1), axis=k)
        b = np.take(scale_field, range(1, scale_field.shape[k]), axis=k)
        if (np.abs(a - b) > 1).any():
            raise PartitionError("adjacent cells differ by more than a factor 3")


# ---------------------------------------------------------------------------
# coarsening
# ---------------------------------------------------------------------------


@dataclass
class CoarseFunction:
    """[u]_P: the cell-representative value of u at every box vertex."""

    values: np.ndarray          # flat over box, C-order
    partition: Partition = field(repr=False, default=None)

    def grid(self) -> np.ndarray:
        spec = self.partition.env.spec
        return self.values.reshape((spec.side,) * spec.d)


def coarsen(P: Partition, graph, u: np.ndarray) -> CoarseFunction:
    """[u]_P(x) = u(z-bar of the cell of x), for every box vertex x.

    ``u`` lives on ``graph`` (a ClusterGraph containing every cell
    representative); a representative outside the graph raises DataError.
    """
    rep_idx = graph.indices_of(P.reps)
    if (rep_idx < 0).any():
        missing = P.reps[rep_idx < 0][:5]
        raise DataError(f"representatives missing from the function domain: {missing.tolist()}")
    return CoarseFunction(values=np.asarray(u)[rep_idx][P.cell_index], partition=P)


def coarsen_partial(P: Partition, graph, u: np.ndarray) -> CoarseFunction:
    """Like :func:`coarsen` but fills NaN where a representative is missing
    from the domain of u (used when u was solved on a sub-region)."""
    rep_idx = graph.indices_of(P.reps)
    vals = np.full(P.n_cells, np.nan)
    ok = rep_idx >= 0
    vals[ok] = np.asarray(u)[rep_idx[ok]]
    return CoarseFunction(values=vals[P.cell_index], partition=P)


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MollifierSpec:
    """Smoothing kernel supported in the l-infinity ball of radius 1/2.

    ``kind`` is "bump" (product polynomial bump (1-(2t)^2)^3) or "gauss"
    (truncated Gaussian, sigma = 1/6).  ``h`` is the quadrature sub-grid
    resolution; the sampled kernel is renormalized to unit discrete mass.
    """

    kind: str = "bump"
    h: float = 0.125

    def profile(self, t: np.ndarray) -> np.ndarray:
        inside = np.abs(t) < 0.5
        if self.kind == "bump":
            return np.where(inside, np.maximum(1.0 - (2.0 * t) ** 2, 0.0) ** 3, 0.0)
        if self.kind == "gauss":
            return np.where(inside, np.exp(-t ** 2 / (2 * (1. / 6.) ** 2)), 0.0)
        raise ValueError(f"unknown mollifier kind {self.kind!r}")

    def quad_points(self):
        """1-d quadrature nodes (cell midpoints of resolution h in
        (-1/2, 1/2)) and the normalized product-kernel weights."""
        n = int(round(1.0 / self.h))
        t = (np.arange(n) + 0.5) * self.h - 0.5
        w = self.profile(t)
        return t, w


def mollify(f: CoarseFunction, spec: MollifierSpec, grid_points: np.ndarray):
    """Sample the mollified coarse field and its gradient.

    The coarse function is extended piecewise-constant (value of the
    nearest lattice point) and convolved with the product kernel; values
    and gradients at ``grid_points`` (shape (N, d), possibly off-lattice)
    are computed by midpoint quadrature at resolution ``spec.h``.

    Returns (values (N,), gradients (N, d)).
    """
    P = f.partition
    env = P.env
    d = env.spec.d
    h_grid = env.spec.half
    pts = np.asarray(grid_points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != d:
        raise ValueError("grid_points must have shape (N, d)")
    if np.any(np.abs(pts) > h_grid - 1):
        raise ValueError("grid touches the box boundary; shrink by one unit")
    t, w = spec.quad_points()
    mass = (w.sum() * spec.h) ** d
    # product-kernel tensor over quadrature offsets
    offs = np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1).reshape(-1, d)
    wts = np.prod(np.stack(np.meshgrid(*([w] * d), indexing="ij"), axis=-1).reshape(-1, d), axis=1)
    wts = wts * (spec.h ** d) / mass
    fgrid = f.values.reshape((env.spec.side,) * d)

    def sample(points):
        # nearest lattice point of the piecewise-constant extension
        latt = np.rint(points).astype(np.int64) + h_grid
        idx = tuple(latt[:, k] for k in range(d))
        return fgrid[idx]

    vals = np.zeros(len(pts))
    grads = np.zeros((len(pts), d))
    # derivative weights: d/dx of the normalized product kernel
    tq, wq = t, w
    dw = _profile_derivative(spec, tq)
    for o, ww in zip(offs, wts):
        vals += ww * sample(pts - o)
    for k in range(d):
        # kernel factor along k differentiates; others keep the profile
        for o_k, dwk in zip(tq, dw):
            other_axes = [a for a in range(d) if a != k]
            if d == 2:
                oa = other_axes[0]
                for o_a, w_a in zip(tq, wq):
                    o = np.zeros(d)
                    o[k], o[oa] = o_k, o_a
                    ww = dwk * w_a * (spec.h ** d) / mass
                    grads[:, k] += ww * sample(pts - o)
            else:
                oa, ob = other_axes
                for o_a, w_a in zip(tq, wq):
                    for o_b, w_b in zip(tq, wq):
                        o = np.zeros(d)
                        o[k], o[oa], o[ob] = o_k, o_a, o_b
                        ww = dwk * w_a * w_b * (spec.h ** d) / mass
                        grads[:, k] += ww * sample(pts - o)
    return vals, grads


def _profile_derivative(spec: MollifierSpec, t: np.ndarray) -> np.ndarray:
    inside = np.abs(t) < 0.5
    if spec.kind == "bump":
        return np.where(inside, 3 * np.maximum(1 - (2 * t) ** 2, 0.0) ** 2 * (-8 * t), 0.0)
    if spec.kind == "gauss":
        s2 = (1. / 6.) ** 2
        return np.where(inside, np.exp(-t ** 2 / (2 * s2)) * (-t / s2), 0.0)
    raise ValueError(spec.kind)


# ---------------------------------------------------------------------------
# coarseness diagnostics
# ---------------------------------------------------------------------------


def _magnitude_sq_on(graph, field: np.ndarray) -> np.ndarray:
    """|F|^2(x): per-vertex sum of squared values over incident open edges."""
    out = np.zeros(graph.n_vertices)
    np.add.at(out, graph.edges[:, 0], field ** 2)
    np.add.at(out, graph.edges[:, 1], field ** 2)
    return out


def coarsening_ratio(env: Environment, P: Partition, graph, w: np.ndarray,
                     s: float, cube: TriadicCube = None) -> float:
    """Ratio of sum |w - [w]_P|^s to sum size(cell)^{s d} |grad w|^s over
    the maximal cluster of the given cube (default: the whole box)."""
    from .geometry import maximal_cluster

    region = cube if cube is not None else TriadicCube(env.spec.M, (0,) * env.spec.d)
    cl = maximal_cluster(env, region)
    idx_in_w = graph.indices_of(cl.vertices)
    if (idx_in_w < 0).any():
        raise DataError("w is not defined on the cluster of the cube")
    coarse = coarsen(P, graph, w)
    h = env.spec.half
    flat = np.ravel_multi_index((cl.vertices + h).T, (env.spec.side,) * env.spec.d)
    diff = np.abs(np.asarray(w)[idx_in_w] - coarse.values[flat]) ** s
    grad_w = np.asarray(w)[graph.edges[:, 0]] - np.asarray(w)[graph.edges[:, 1]]
    mag = np.sqrt(_magnitude_sq_on(graph, grad_w))
    sizes = P.sizes_per_vertex()[flat].astype(float)
    denom = float(np.sum(sizes ** (s * env.spec.d) * mag[idx_in_w] ** s))
    num = float(diff.sum())
    if denom == 0:
        return 0.0
    return num / denom


def gradient_coarsening_ratio(env: Environment, P: Partition, graph,
                              w: np.ndarray, s: float,
                              cube: TriadicCube = None) -> float:
    """Ratio of sum |grad [w]_P|^s to sum size(cell)^{s d - 1} |grad w|^s
    over the maximal cluster of the cube; the coarse gradient runs over all
    box bonds."""
    from .geometry import maximal_cluster

    region = cube if cube is not None else TriadicCube(env.spec.M, (0,) * env.spec.d)
    cl = maximal_cluster(env, region)
    idx_in_w = graph.indices_of(cl.vertices)
    if (idx_in_w < 0).any():
        raise DataError("w is not defined on the cluster of the cube")
    coarse = coarsen(P, graph, w).grid()
    d = env.spec.d
    # |grad [w]_P|^2 at x over all box bonds incident to x
    mag2 = np.zeros_like(coarse)
    for k in range(d):
        dif = np.diff(coarse, axis=k) ** 2
        pad_lo = [(0, 0)] * d
        pad_lo[k] = (0, 1)
        pad_hi = [(0, 0)] * d
        pad_hi[k] = (1, 0)
        mag2 += np.pad(dif, pad_lo) + np.pad(dif, pad_hi)
    h = env.spec.half
    flat = np.ravel_multi_index((cl.vertices + h).T, (env.spec.side,) * d)
    num = float(np.sum(np.sqrt(mag2.reshape(-1)[flat]) ** s))
    grad_w = np.asarray(w)[graph.edges[:, 0]] - np.asarray(w)[graph.edges[:, 1]]
    mag = np.sqrt(_magnitude_sq_on(graph, grad_w))
    sizes = P.sizes_per_vertex()[flat].astype(float)
    denom = float(np.sum(sizes ** (s * d - 1) * mag[idx_in_w] ** s))
    if denom == 0:
        return 0.0
    return num / denom


def coarseness_statistics(partitions, thresholds=(3, 9, 27, 81), avg_threshold: float = 2.0):
    """Exceedance curve of size(cell(0)) over an ensemble plus an M_t proxy.

    Returns dict with the exceedance P[size > t] per threshold and, for
    t = 1, the smallest scale m at which the box-average of size^t falls
    below ``avg_threshold`` * 3 (stabilization proxy), per partition
    averaged.
    """
    if not partitions:
        raise ValueError("empty ensemble")
    sizes0 = np.array([P.size_at((0,) * P.env.spec.d) for P in partitions], dtype=float)
    exceed = {int(t): float((sizes0 > t).mean()) for t in thresholds}
    m_t = []
    for P in partitions:
        M, d = P.env.spec.M, P.env.spec.d
        per_vertex = P.sizes_per_vertex().astype(float).reshape((3 ** M,) * d)
        found = M
        for m in range(1, M + 1):
            sub = _block_reduce_mean(per_vertex, 3 ** m, d)
            if sub.max() <= avg_threshold * 3:
                found = m
                break
        m_t.append(found)
    return {"exceedance": exceed, "m_t_proxy": float(np.mean(m_t)), "sizes0": sizes0}


def _block_reduce_mean(arr: np.ndarray, b: int, d: int) -> np.ndarray:
    shape = []
    for k in range(d):
        shape += [arr.shape[k] // b, b]
    view = arr.reshape(shape)
    axes = tuple(2 * k + 1 for k in range(d))
    return view.mean(axis=axes)


def partition_resample_stability(env: Environment, e: EdgeRef, aux_seed: int = 0,
                                 c0: float = 2.0) -> dict:
    """Compare the partition before and after resampling one edge.

    Reports the maximal cell-size ratio within the near field of the edge
    (distance <= c0 * size of the base cell at e.x) and whether all cells
    beyond the near field are identical.
    """
    P = build_partition(env)
    env2 = resample_edge(env, e, aux_seed)
    P2 = build_partition(env2)
    spec = env.spec
    base = P.size_at(e.x)
    radius = c0 * base
    h = spec.half
    axes = [np.arange(-h, h + 1)] * spec.d
    coords = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.d)
    dist = np.abs(coords - np.asarray(e.x)).max(axis=1)
    near = dist <= radius
    s1 = P.sizes_per_vertex()
    s2 = P2.sizes_per_vertex()
    ratio_near = float((s2[near] / s1[near]).max()) if near.any() else 1.0
    far_equal = bool(np.array_equal(s1[~near], s2[~near]))
    # far-field cells must coincide exactly (same center and scale), not
    # just in size
    cells1 = P.centers[P.cell_index]
    cells2 = P2.centers[P2.cell_index]
    far_cells_equal = far_equal and bool(np.array_equal(cells1[~near], cells2[~near]))
    identical = bool(np.array_equal(s1, s2) and np.array_equal(cells1, cells2))
    return {
        "max_near_ratio": ratio_near,
        "far_sizes_equal": far_equal,
        "far_cells_equal": far_cells_equal,
        "base_size": base,
        "identical": identical,
    }
